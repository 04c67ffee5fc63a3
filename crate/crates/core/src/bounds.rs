//! PAC-Bayesian generalization bounds for constrained f-entropic risks.
//!
//! Two regimes are covered:
//!
//! * class subgroups (`n ≤ m`), where the complexity averages
//!   `(ln⁺ density ratio + ln(2·n·N·√m_a/δ)) / (α·m_a)` over `a ~ π`, either
//!   inverted through the binary `kl⁺` ([`bound_subgroups_kl`]) or relaxed
//!   with Pinsker's inequality ([`bound_subgroups_sqrt`]);
//! * one example per subgroup (`n = m`), with the `λ`-parametrized
//!   deviation bounds ([`bound_one_example_dis`],
//!   [`bound_one_example_classical`]) and a single-sample estimate of the
//!   earlier CVaR bound ([`bound_mhammedi_estimate`]).
//!
//! `N` (`n_priors`) is the number of candidate priors the data-dependent
//! prior was selected from; it enters every confidence term through a
//! union bound.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("argument {name} = {value} outside its domain")]
    Domain { name: &'static str, value: f64 },
    #[error("invalid bound context: {0}")]
    InvalidContext(String),
}

fn domain(name: &'static str, value: f64) -> BoundError {
    BoundError::Domain { name, value }
}

fn in_unit(name: &'static str, v: f64) -> Result<(), BoundError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(domain(name, v))
    }
}

/// Binary KL divergence `kl(a ‖ b)` with `0 ln 0 = 0`; infinite when `b`
/// puts zero mass where `a` does not.
pub fn kl_bernoulli(a: f64, b: f64) -> f64 {
    let term = |p: f64, q: f64| -> f64 {
        if p == 0.0 {
            0.0
        } else if q == 0.0 {
            f64::INFINITY
        } else {
            p * (p / q).ln()
        }
    };
    (term(a, b) + term(1.0 - a, 1.0 - b)).max(0.0)
}

/// `kl(a ‖ b)` when `a ≤ b`, zero otherwise.
pub fn kl_plus(a: f64, b: f64) -> Result<f64, BoundError> {
    in_unit("a", a)?;
    in_unit("b", b)?;
    Ok(if a <= b { kl_bernoulli(a, b) } else { 0.0 })
}

/// Largest `b ∈ [a, 1]` with `kl⁺(a ‖ b) ≤ eps`, bisected to machine
/// precision; `1` when `eps` is infinite.
pub fn kl_inverse(a: f64, eps: f64) -> Result<f64, BoundError> {
    in_unit("a", a)?;
    if !(eps >= 0.0) {
        return Err(domain("eps", eps));
    }
    if eps == f64::INFINITY || a == 1.0 {
        return Ok(1.0);
    }
    if eps == 0.0 {
        return Ok(a);
    }
    let (mut lo, mut hi) = (a, 1.0);
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if kl_bernoulli(a, mid) <= eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// The five bound families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    SubgroupsSqrt,
    SubgroupsKl,
    OneExampleDis,
    OneExampleClassical,
    MhammediEstimate,
}

impl BoundKind {
    pub const ALL: [BoundKind; 5] = [
        BoundKind::SubgroupsSqrt,
        BoundKind::SubgroupsKl,
        BoundKind::OneExampleDis,
        BoundKind::OneExampleClassical,
        BoundKind::MhammediEstimate,
    ];

    /// Whether the bound treats every example as its own subgroup.
    pub fn per_example(self) -> bool {
        !matches!(self, BoundKind::SubgroupsSqrt | BoundKind::SubgroupsKl)
    }

    /// Whether the divergence term is the classical `KL(Q‖P)` rather than
    /// the disintegrated log density ratio at the sampled model.
    pub fn uses_classical_kl(self) -> bool {
        matches!(
            self,
            BoundKind::OneExampleClassical | BoundKind::MhammediEstimate
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            BoundKind::SubgroupsSqrt => "subgroups_sqrt",
            BoundKind::SubgroupsKl => "subgroups_kl",
            BoundKind::OneExampleDis => "one_example_dis",
            BoundKind::OneExampleClassical => "one_example_classical",
            BoundKind::MhammediEstimate => "mhammedi_estimate",
        }
    }

    /// Evaluates the bound at `empirical_risk` with the divergence term
    /// `ctx.kl_term`.
    pub fn evaluate(self, empirical_risk: f64, ctx: &BoundContext) -> Result<BoundReport, BoundError> {
        Ok(self.objective(empirical_risk, ctx)?.report)
    }

    /// Bound value together with its partial derivatives in the empirical
    /// risk and in `ctx.kl_term`, for gradient-based minimization.
    pub fn objective(self, empirical_risk: f64, ctx: &BoundContext) -> Result<Objective, BoundError> {
        match self {
            BoundKind::SubgroupsSqrt => subgroups_sqrt(empirical_risk, ctx),
            BoundKind::SubgroupsKl => subgroups_kl(empirical_risk, ctx),
            BoundKind::OneExampleDis => one_example(empirical_risk, ctx, 0.0, self),
            BoundKind::OneExampleClassical => one_example(empirical_risk, ctx, 3.5, self),
            BoundKind::MhammediEstimate => mhammedi(empirical_risk, ctx),
        }
    }
}

impl std::fmt::Display for BoundKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BoundKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BoundKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown bound kind `{s}`"))
    }
}

/// Everything a bound needs besides the empirical risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundContext {
    pub delta: f64,
    pub m: usize,
    pub n: usize,
    /// Subgroup sizes (class mode) or all ones (per-example mode).
    pub m_a: Vec<usize>,
    /// Reference distribution over subgroups (class mode).
    pub pi: Vec<f64>,
    pub alpha: f64,
    pub lambda: f64,
    pub n_priors: usize,
    /// Disintegrated `ln dQ/dP(h)` or classical `KL(Q‖P)`, unclamped.
    pub kl_term: f64,
}

impl BoundContext {
    /// Class-subgroup context; `m` is the sum of `m_a`.
    pub fn subgroups(
        m_a: Vec<usize>,
        pi: Vec<f64>,
        alpha: f64,
        delta: f64,
        n_priors: usize,
        kl_term: f64,
    ) -> Self {
        Self {
            delta,
            m: m_a.iter().sum(),
            n: m_a.len(),
            m_a,
            pi,
            alpha,
            lambda: 1.0,
            n_priors,
            kl_term,
        }
    }

    /// One-example-per-subgroup context.
    pub fn per_example(
        m: usize,
        alpha: f64,
        delta: f64,
        lambda: f64,
        n_priors: usize,
        kl_term: f64,
    ) -> Self {
        Self {
            delta,
            m,
            n: m,
            m_a: Vec::new(),
            pi: Vec::new(),
            alpha,
            lambda,
            n_priors,
            kl_term,
        }
    }

    fn validate_common(&self) -> Result<(), BoundError> {
        let bad = |msg: String| Err(BoundError::InvalidContext(msg));
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad(format!("delta {} outside (0, 1]", self.delta));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha {} outside (0, 1]", self.alpha));
        }
        if self.n_priors == 0 {
            return bad("n_priors must be at least 1".into());
        }
        if self.m == 0 {
            return bad("empty sample".into());
        }
        if self.kl_term.is_nan() {
            return bad("kl_term is NaN".into());
        }
        Ok(())
    }

    fn validate_subgroups(&self) -> Result<(), BoundError> {
        self.validate_common()?;
        let bad = |msg: String| Err(BoundError::InvalidContext(msg));
        if self.m_a.is_empty() || self.m_a.len() != self.n || self.pi.len() != self.n {
            return bad(format!(
                "{} subgroup sizes and {} reference weights for n = {}",
                self.m_a.len(),
                self.pi.len(),
                self.n
            ));
        }
        if self.m_a.contains(&0) || self.m_a.iter().sum::<usize>() != self.m {
            return bad("subgroup sizes must be positive and sum to m".into());
        }
        let total: f64 = self.pi.iter().sum();
        if self.pi.iter().any(|&p| !(p > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return bad("reference weights must be positive and sum to 1".into());
        }
        Ok(())
    }

    fn validate_per_example(&self) -> Result<(), BoundError> {
        self.validate_common()?;
        let bad = |msg: String| Err(BoundError::InvalidContext(msg));
        if self.n != self.m {
            return bad(format!("per-example mode needs n = m, got n = {}, m = {}", self.n, self.m));
        }
        if !self.m_a.is_empty() && self.m_a.iter().any(|&s| s != 1) {
            return bad("per-example mode needs unit subgroup sizes".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be positive", self.lambda));
        }
        Ok(())
    }
}

/// Every term of one bound evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub empirical_risk: f64,
    pub complexity: f64,
    pub bound: f64,
    /// `bound ≥ 1`: no information for a `[0, 1]` loss.
    pub vacuous: bool,
    /// The expectation over the posterior was replaced by one sample.
    pub estimate: bool,
    pub components: BTreeMap<String, f64>,
    pub delta: f64,
    pub m: usize,
    pub n: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub n_priors: usize,
}

impl BoundReport {
    /// The bound capped at 1.
    pub fn certificate(&self) -> f64 {
        self.bound.min(1.0)
    }
}

/// A bound value and its sensitivities.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub report: BoundReport,
    pub d_risk: f64,
    pub d_kl: f64,
}

fn report(
    kind: BoundKind,
    empirical_risk: f64,
    complexity: f64,
    bound: f64,
    ctx: &BoundContext,
    components: BTreeMap<String, f64>,
) -> BoundReport {
    BoundReport {
        kind,
        empirical_risk,
        complexity,
        bound,
        vacuous: bound >= 1.0,
        estimate: kind == BoundKind::MhammediEstimate,
        components,
        delta: ctx.delta,
        m: ctx.m,
        n: ctx.n,
        alpha: ctx.alpha,
        lambda: ctx.lambda,
        n_priors: ctx.n_priors,
    }
}

/// Report for an infinite divergence term: the trivial bound 1.
fn vacuous(kind: BoundKind, empirical_risk: f64, ctx: &BoundContext) -> Objective {
    let mut c = BTreeMap::new();
    c.insert("kl_term".to_string(), f64::MAX);
    Objective {
        report: report(kind, empirical_risk, 1.0 - empirical_risk, 1.0, ctx, c),
        d_risk: 0.0,
        d_kl: 0.0,
    }
}

/// `Σ_a π_a (kl⁺ + ln(2·n·N·√m_a/δ)) / (scale·α·m_a)` and its derivative
/// in the clamped divergence term.
fn subgroup_average(ctx: &BoundContext, scale: f64) -> (f64, f64, f64) {
    let k = ctx.kl_term.max(0.0);
    let n = ctx.n as f64;
    let priors = ctx.n_priors as f64;
    let mut value = 0.0;
    let mut slope = 0.0;
    let mut log_avg = 0.0;
    for (&p, &ma) in ctx.pi.iter().zip(&ctx.m_a) {
        let ma = ma as f64;
        let log_term = (2.0 * n * priors * ma.sqrt() / ctx.delta).ln();
        let denom = scale * ctx.alpha * ma;
        value += p * (k + log_term) / denom;
        slope += p / denom;
        log_avg += p * log_term;
    }
    (value, slope, log_avg)
}

fn check_risk(r: f64) -> Result<(), BoundError> {
    in_unit("empirical_risk", r)
}

fn subgroups_sqrt(r: f64, ctx: &BoundContext) -> Result<Objective, BoundError> {
    check_risk(r)?;
    ctx.validate_subgroups()?;
    let kind = BoundKind::SubgroupsSqrt;
    if ctx.kl_term == f64::INFINITY {
        return Ok(vacuous(kind, r, ctx));
    }
    let (radicand, slope, log_avg) = subgroup_average(ctx, 2.0);
    let complexity = radicand.sqrt();
    let d_kl = if ctx.kl_term > 0.0 && complexity > 0.0 {
        slope / (2.0 * complexity)
    } else {
        0.0
    };
    let mut c = BTreeMap::new();
    c.insert("kl_term".into(), ctx.kl_term.max(0.0));
    c.insert("log_term_avg".into(), log_avg);
    c.insert("radicand".into(), radicand);
    Ok(Objective {
        report: report(kind, r, complexity, r + complexity, ctx, c),
        d_risk: 1.0,
        d_kl,
    })
}

fn subgroups_kl(r: f64, ctx: &BoundContext) -> Result<Objective, BoundError> {
    check_risk(r)?;
    ctx.validate_subgroups()?;
    let kind = BoundKind::SubgroupsKl;
    if ctx.kl_term == f64::INFINITY {
        return Ok(vacuous(kind, r, ctx));
    }
    let (eps, slope, log_avg) = subgroup_average(ctx, 1.0);
    let b = kl_inverse(r, eps)?;
    // implicit differentiation of kl(r ‖ b) = eps
    let (d_risk, d_eps) = if b - r > 1e-12 && b < 1.0 {
        let a = r.max(1e-12);
        let dkl_db = (b - a) / (b * (1.0 - b));
        let dkl_da = (a * (1.0 - b) / ((1.0 - a) * b)).ln();
        (-dkl_da / dkl_db, 1.0 / dkl_db)
    } else {
        (1.0, 0.0)
    };
    let mut c = BTreeMap::new();
    c.insert("kl_term".into(), ctx.kl_term.max(0.0));
    c.insert("log_term_avg".into(), log_avg);
    c.insert("eps".into(), eps);
    Ok(Objective {
        report: report(kind, r, b - r, b, ctx, c),
        d_risk,
        d_kl: if ctx.kl_term > 0.0 { d_eps * slope } else { 0.0 },
    })
}

fn one_example(r: f64, ctx: &BoundContext, constant: f64, kind: BoundKind) -> Result<Objective, BoundError> {
    check_risk(r)?;
    ctx.validate_per_example()?;
    if ctx.kl_term == f64::INFINITY {
        return Ok(vacuous(kind, r, ctx));
    }
    let m = ctx.m as f64;
    let lam = ctx.lambda;
    let coef = 1.0 + 1.0 / lam;
    let k = ctx.kl_term.max(0.0);
    let log_term = (2.0 * ctx.n_priors as f64 * (lam + 1.0) / ctx.delta).ln();
    let inner = coef * k + log_term + constant;
    let radical = (inner.max(0.0) / (2.0 * m)).sqrt();
    let complexity = radical / ctx.alpha;
    let d_kl = if ctx.kl_term > 0.0 && radical > 0.0 {
        coef / (2.0 * m) / (2.0 * radical) / ctx.alpha
    } else {
        0.0
    };
    let mut c = BTreeMap::new();
    c.insert("kl_term".into(), k);
    c.insert("log_term".into(), log_term);
    c.insert("constant".into(), constant);
    c.insert("radical".into(), radical);
    Ok(Objective {
        report: report(kind, r, complexity, r + complexity, ctx, c),
        d_risk: 1.0,
        d_kl,
    })
}

fn mhammedi(r: f64, ctx: &BoundContext) -> Result<Objective, BoundError> {
    check_risk(r)?;
    ctx.validate_per_example()?;
    let kind = BoundKind::MhammediEstimate;
    if ctx.kl_term == f64::INFINITY {
        return Ok(vacuous(kind, r, ctx));
    }
    let m = ctx.m as f64;
    let a = ctx.alpha;
    // ⌈log₂(m/α)⌉ is 0 at m/α = 1; the union over one scale is the minimum
    let scales = (m / a).log2().ceil().max(1.0);
    let g = (2.0 * ctx.n_priors as f64 * scales / ctx.delta).ln();
    let kbar = ctx.kl_term.max(0.0) + g;
    let c1 = (g / (2.0 * a * m)).sqrt() + g / (3.0 * m * a);
    let rate = 27.0 / (5.0 * a * m);
    let root = (rate * r * kbar).max(0.0).sqrt();
    let bound = r + 2.0 * r * c1 + root + rate * kbar;
    let d_root_d_r = if root > 0.0 { rate * kbar / (2.0 * root) } else { 0.0 };
    let d_root_d_k = if root > 0.0 { rate * r / (2.0 * root) } else { 0.0 };
    let mut c = BTreeMap::new();
    c.insert("kl_term".into(), ctx.kl_term.max(0.0));
    c.insert("log_term".into(), g);
    c.insert("log2_scales".into(), scales);
    c.insert("risk_multiplier".into(), 2.0 * c1);
    c.insert("cross_term".into(), root);
    c.insert("fast_rate_term".into(), rate * kbar);
    Ok(Objective {
        report: report(kind, r, bound - r, bound, ctx, c),
        d_risk: 1.0 + 2.0 * c1 + d_root_d_r,
        d_kl: if ctx.kl_term >= 0.0 { d_root_d_k + rate } else { 0.0 },
    })
}

pub fn bound_subgroups_kl(empirical_risk: f64, ctx: &BoundContext) -> Result<BoundReport, BoundError> {
    BoundKind::SubgroupsKl.evaluate(empirical_risk, ctx)
}

pub fn bound_subgroups_sqrt(empirical_risk: f64, ctx: &BoundContext) -> Result<BoundReport, BoundError> {
    BoundKind::SubgroupsSqrt.evaluate(empirical_risk, ctx)
}

pub fn bound_one_example_dis(empirical_risk: f64, ctx: &BoundContext) -> Result<BoundReport, BoundError> {
    BoundKind::OneExampleDis.evaluate(empirical_risk, ctx)
}

/// Classical form; `kl_classical` replaces `ctx.kl_term`.
pub fn bound_one_example_classical(
    empirical_risk: f64,
    kl_classical: f64,
    ctx: &BoundContext,
) -> Result<BoundReport, BoundError> {
    let ctx = BoundContext {
        kl_term: kl_classical,
        ..ctx.clone()
    };
    BoundKind::OneExampleClassical.evaluate(empirical_risk, &ctx)
}

/// Single-sample estimate; `kl_classical` replaces `ctx.kl_term`.
pub fn bound_mhammedi_estimate(
    empirical_risk: f64,
    kl_classical: f64,
    ctx: &BoundContext,
) -> Result<BoundReport, BoundError> {
    let ctx = BoundContext {
        kl_term: kl_classical,
        ..ctx.clone()
    };
    BoundKind::MhammediEstimate.evaluate(empirical_risk, &ctx)
}
