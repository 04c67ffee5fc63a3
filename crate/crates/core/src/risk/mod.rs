//! Constrained f-entropic risk measures over a finite set of subgroups.
//!
//! Every measure here is the value of
//!
//! ```text
//! sup  Σ_a ρ_a · L_a
//!  ρ
//! s.t. Σ_a ρ_a = 1,   0 ≤ ρ_a ≤ π_a / α,   D_f(ρ ‖ π) ≤ β
//! ```
//!
//! where `L_a` is the empirical loss of subgroup `a` and `π` the reference
//! distribution. Without the divergence constraint this is the CVaR at level
//! `α`, solved exactly by [`cvar_weights`]. With `f(x) = x ln x` and
//! `β = -ln α` it is the constrained EVaR, solved by [`constrained_weights`].
//!
//! The optimal weights double as the gradient of the risk value with respect
//! to the subgroup losses (see [`risk_gradient`]).

mod constrained;
mod cvar;
pub mod oracle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use constrained::{constrained_weights, DEFAULT_TOL};
pub use cvar::cvar_weights;

/// Errors raised by the risk solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("dimension mismatch: {losses} losses for {subgroups} subgroups")]
    DimensionMismatch { losses: usize, subgroups: usize },
    #[error("alpha must lie in (0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("divergence budget must be finite and non-negative, got {0}")]
    BadBudget(f64),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("reference distribution is invalid: {0}")]
    BadReference(String),
    #[error("loss {value} for subgroup {index} is outside [0, 1]")]
    LossOutOfRange { index: usize, value: f64 },
    #[error("solver did not converge after {iterations} iterations (last gap {gap:e})")]
    SolverDidNotConverge { iterations: usize, gap: f64 },
    #[error("grid oracle supports at most 4 subgroups, got {0}")]
    TooManySubgroups(usize),
}

/// Reference distribution `π` over subgroups. Every subgroup carries
/// strictly positive mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ReferenceDistribution {
    probs: Vec<f64>,
}

impl ReferenceDistribution {
    /// Wraps an already normalized probability vector.
    pub fn new(probs: Vec<f64>) -> Result<Self, RiskError> {
        if probs.is_empty() {
            return Err(RiskError::BadReference("empty".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.is_finite() && **p > 0.0))
        {
            return Err(RiskError::BadReference(format!(
                "entry {i} is {p}, every subgroup needs positive mass"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(RiskError::BadReference(format!("entries sum to {total}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes positive weights (for instance subgroup counts).
    pub fn from_weights(weights: &[f64]) -> Result<Self, RiskError> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(RiskError::BadReference(format!("weights sum to {total}")));
        }
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !(**p > 0.0)) {
            return Err(RiskError::BadReference(format!(
                "entry {i} is {p}, every subgroup needs positive mass"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Result<Self, RiskError> {
        if n == 0 {
            return Err(RiskError::BadReference("empty".into()));
        }
        Ok(Self {
            probs: vec![1.0 / n as f64; n],
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// `Σ_a π_a · values_a`.
    pub fn expectation(&self, values: &[f64]) -> f64 {
        self.probs.iter().zip(values).map(|(p, v)| p * v).sum()
    }
}

impl TryFrom<Vec<f64>> for ReferenceDistribution {
    type Error = RiskError;

    fn try_from(probs: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(probs)
    }
}

impl From<ReferenceDistribution> for Vec<f64> {
    fn from(pi: ReferenceDistribution) -> Self {
        pi.probs
    }
}

/// A user-supplied convex `f` with `f(1) = 0`, given with its derivative.
/// The derivative must be non-decreasing on `[0, ∞)`.
#[derive(Clone, Copy)]
pub struct CustomDivergence {
    pub f: fn(f64) -> f64,
    pub df: fn(f64) -> f64,
}

impl std::fmt::Debug for CustomDivergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("CustomDivergence(..)")
    }
}

/// Which f-divergence ball (if any) is intersected with the CVaR cap.
#[derive(Debug, Clone, Copy)]
pub enum Divergence {
    /// Pure CVaR.
    None,
    /// `f(x) = x ln x`, i.e. `D_f = KL(ρ ‖ π)`.
    Kl,
    Custom(CustomDivergence),
}

impl Divergence {
    /// `D_f(ρ ‖ π) = Σ_a π_a f(ρ_a / π_a)`; zero for [`Divergence::None`].
    pub fn evaluate(&self, rho: &[f64], pi: &[f64]) -> f64 {
        match self {
            Divergence::None => 0.0,
            Divergence::Kl => kl_divergence(rho, pi),
            Divergence::Custom(c) => rho
                .iter()
                .zip(pi)
                .map(|(r, p)| p * (c.f)(r / p))
                .sum(),
        }
    }
}

/// `KL(ρ ‖ π)` with `0 ln 0 = 0`.
pub fn kl_divergence(rho: &[f64], pi: &[f64]) -> f64 {
    rho.iter()
        .zip(pi)
        .filter(|(r, _)| **r > 0.0)
        .map(|(r, p)| r * (r / p).ln())
        .sum()
}

/// The admissible set `E` in force: density-ratio cap `1/α` plus an optional
/// divergence budget.
#[derive(Debug, Clone, Copy)]
pub struct RiskSpec {
    pub alpha: f64,
    pub divergence: Divergence,
    pub beta: f64,
}

impl RiskSpec {
    pub fn cvar(alpha: f64) -> Self {
        Self {
            alpha,
            divergence: Divergence::None,
            beta: 0.0,
        }
    }

    /// KL ball of radius `-ln α` intersected with the CVaR cap.
    pub fn evar(alpha: f64) -> Self {
        Self {
            alpha,
            divergence: Divergence::Kl,
            beta: -alpha.ln(),
        }
    }

    pub fn custom(alpha: f64, divergence: CustomDivergence, beta: f64) -> Self {
        Self {
            alpha,
            divergence: Divergence::Custom(divergence),
            beta,
        }
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        check_alpha(self.alpha)?;
        if !matches!(self.divergence, Divergence::None)
            && !(self.beta.is_finite() && self.beta >= 0.0)
        {
            return Err(RiskError::BadBudget(self.beta));
        }
        Ok(())
    }
}

/// The two measures the experiments use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskKind {
    Cvar,
    Evar,
}

impl RiskKind {
    pub fn spec(self, alpha: f64) -> RiskSpec {
        match self {
            RiskKind::Cvar => RiskSpec::cvar(alpha),
            RiskKind::Evar => RiskSpec::evar(alpha),
        }
    }
}

impl std::str::FromStr for RiskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cvar" => Ok(RiskKind::Cvar),
            "evar" => Ok(RiskKind::Evar),
            other => Err(format!("unknown risk measure `{other}`")),
        }
    }
}

/// Per-subgroup empirical losses, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupLosses {
    values: Vec<f64>,
}

impl SubgroupLosses {
    pub fn new(values: Vec<f64>) -> Result<Self, RiskError> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(RiskError::LossOutOfRange { index, value });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Maximizer of the inner supremum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSolution {
    pub weights: Vec<f64>,
    pub value: f64,
    pub feasible: bool,
    /// Upper bound on `sup - value`; exactly zero on the closed-form paths.
    pub dual_gap: f64,
}

impl RiskSolution {
    pub(crate) fn from_weights(weights: Vec<f64>, losses: &[f64], dual_gap: f64) -> Self {
        let value = dot(&weights, losses);
        Self {
            weights,
            value,
            feasible: true,
            dual_gap,
        }
    }
}

/// Gradient of the risk value with respect to the subgroup losses.
///
/// By Danskin's theorem this is the maximizer `ρ*` itself: exact when the
/// maximizer is unique, a supergradient of the (convex) value otherwise.
pub fn risk_gradient(solution: &RiskSolution) -> Vec<f64> {
    solution.weights.clone()
}

pub(crate) fn check_alpha(alpha: f64) -> Result<(), RiskError> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(RiskError::AlphaOutOfRange(alpha))
    }
}

pub(crate) fn check_dims(losses: &[f64], pi: &ReferenceDistribution) -> Result<(), RiskError> {
    if losses.len() != pi.len() {
        return Err(RiskError::DimensionMismatch {
            losses: losses.len(),
            subgroups: pi.len(),
        });
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
