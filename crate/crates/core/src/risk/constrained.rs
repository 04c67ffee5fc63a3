//! Divergence-constrained risk via a one-dimensional dual.
//!
//! The budget constraint `D_f(ρ ‖ π) ≤ β` is dualized with a multiplier
//! `η ≥ 0`. For fixed `η` the Lagrangian maximizer over the capped simplex
//! has the form `ρ_a = π_a · clamp((f')⁻¹((L_a - ν)/η), 0, 1/α)`; for the KL
//! case this is a capped exponential tilt solved exactly by water-filling.
//! `D_f(ρ(η) ‖ π)` decreases in `η`, so `η` is bisected. Any `η` with
//! `D_f(ρ(η)) ≤ β` gives a feasible primal point whose gap to the dual
//! value is `η · (β - D_f(ρ(η)))`.

use super::cvar::{descending_order, greedy_fill};
use super::{
    check_dims, CustomDivergence, Divergence, ReferenceDistribution, RiskError,
    RiskSolution, RiskSpec, SubgroupLosses,
};

/// Default duality-gap tolerance.
pub const DEFAULT_TOL: f64 = 1e-6;

const MAX_ITER: usize = 2_000;
const BUDGET_SLACK: f64 = 1e-12;

/// Solves `max Σρ_a L_a` over the capped simplex intersected with the
/// divergence ball of `spec`, to a duality gap of at most `tol`.
pub fn constrained_weights(
    losses: &SubgroupLosses,
    pi: &ReferenceDistribution,
    spec: &RiskSpec,
    tol: f64,
) -> Result<RiskSolution, RiskError> {
    spec.validate()?;
    check_dims(losses.values(), pi)?;
    if !(tol > 0.0) {
        return Err(RiskError::BadTolerance(tol));
    }
    let l = losses.values();
    let p = pi.probs();
    match spec.divergence {
        Divergence::None => Ok(greedy_fill(l, p, spec.alpha)),
        Divergence::Kl => {
            let order = descending_order(l);
            dual_bisection(l, p, spec, tol, |eta| kl_tilt(l, p, spec.alpha, eta, &order))
        }
        Divergence::Custom(c) => dual_bisection(l, p, spec, tol, |eta| {
            custom_tilt(l, p, spec.alpha, eta, &c)
        }),
    }
}

fn dual_bisection<F>(
    l: &[f64],
    p: &[f64],
    spec: &RiskSpec,
    tol: f64,
    tilt: F,
) -> Result<RiskSolution, RiskError>
where
    F: Fn(f64) -> Option<Vec<f64>>,
{
    let beta = spec.beta;
    let div = |rho: &[f64]| spec.divergence.evaluate(rho, p);

    // ρ = π is the only point of a zero-radius ball
    if beta == 0.0 {
        return Ok(RiskSolution::from_weights(p.to_vec(), l, 0.0));
    }
    let capped = greedy_fill(l, p, spec.alpha);
    // rounding in ln(π/α · 1/π) can overshoot -ln α by an ulp
    if div(&capped.weights) <= beta + BUDGET_SLACK * beta.max(1.0) {
        return Ok(capped);
    }

    // None signals a degenerate tilt (underflow); it sits on the
    // budget-violating side like η → 0.
    let budget_ok = |rho: &Option<Vec<f64>>| rho.as_ref().is_some_and(|r| div(r) <= beta);

    let mut hi = 1.0;
    let mut rho_hi = tilt(hi);
    let mut iterations = 0;
    while !budget_ok(&rho_hi) {
        hi *= 2.0;
        rho_hi = tilt(hi);
        iterations += 1;
        if iterations > 200 {
            return Err(RiskError::SolverDidNotConverge {
                iterations,
                gap: f64::INFINITY,
            });
        }
    }
    let mut lo = 0.0;
    let mut gap = f64::INFINITY;
    while iterations < MAX_ITER {
        let rho = rho_hi.as_ref().expect("feasible side always holds weights");
        gap = hi * (beta - div(rho)).max(0.0);
        if gap <= tol {
            let rho = rho_hi.take().unwrap();
            return Ok(RiskSolution::from_weights(rho, l, gap));
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let rho_mid = tilt(mid);
        if budget_ok(&rho_mid) {
            hi = mid;
            rho_hi = rho_mid;
        } else {
            lo = mid;
        }
        iterations += 1;
    }
    Err(RiskError::SolverDidNotConverge { iterations, gap })
}

/// Maximizer of `Σρ L - η KL(ρ‖π)` over the capped simplex:
/// `ρ_a = min(π_a/α, c · π_a · exp(L_a/η))` with `c` fixing the total mass.
fn kl_tilt(l: &[f64], p: &[f64], alpha: f64, eta: f64, order: &[usize]) -> Option<Vec<f64>> {
    let l_max = l[order[0]];
    let tilt: Vec<f64> = l.iter().map(|x| ((x - l_max) / eta).exp()).collect();
    let cap_ratio = 1.0 / alpha;

    // suffix sums of π_a e_a in visiting order
    let n = l.len();
    let mut tail = vec![0.0; n + 1];
    for k in (0..n).rev() {
        let a = order[k];
        tail[k] = tail[k + 1] + p[a] * tilt[a];
    }
    let mut capped_mass = 0.0;
    for k in 0..n {
        let free_mass = 1.0 - capped_mass;
        if free_mass <= 0.0 || tail[k] <= 0.0 {
            return None;
        }
        let c = free_mass / tail[k];
        if !c.is_finite() {
            return None;
        }
        // remaining subgroups all have ratio c·e ≤ c·e_{order[k]}
        if c * tilt[order[k]] <= cap_ratio {
            let mut rho = vec![0.0; n];
            for (j, &a) in order.iter().enumerate() {
                rho[a] = if j < k {
                    p[a] * cap_ratio
                } else {
                    p[a] * c * tilt[a]
                };
            }
            return Some(rho);
        }
        capped_mass += p[order[k]] * cap_ratio;
    }
    None
}

/// Generic inner maximizer: per-subgroup density ratios solve
/// `f'(r_a) = (L_a - ν)/η` on `[0, 1/α]`, with `ν` bisected so the
/// weights sum to one.
fn custom_tilt(
    l: &[f64],
    p: &[f64],
    alpha: f64,
    eta: f64,
    div: &CustomDivergence,
) -> Option<Vec<f64>> {
    let cap = 1.0 / alpha;
    let ratio = |t: f64| -> f64 {
        // inverse of the non-decreasing f' on [0, cap]
        if (div.df)(f64::MIN_POSITIVE) >= t {
            return 0.0;
        }
        if (div.df)(cap) <= t {
            return cap;
        }
        let (mut a, mut b) = (0.0, cap);
        for _ in 0..100 {
            let m = 0.5 * (a + b);
            if (div.df)(m) < t {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    };
    let mass = |nu: f64| -> f64 {
        l.iter()
            .zip(p)
            .map(|(x, pa)| pa * ratio((x - nu) / eta))
            .sum()
    };
    let (l_min, l_max) = l
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let mut step = 1.0;
    let mut nu_lo = l_min - step;
    while mass(nu_lo) < 1.0 {
        step *= 2.0;
        nu_lo = l_min - step;
        if !nu_lo.is_finite() {
            return None;
        }
    }
    step = 1.0;
    let mut nu_hi = l_max + step;
    while mass(nu_hi) > 1.0 {
        step *= 2.0;
        nu_hi = l_max + step;
        if !nu_hi.is_finite() {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (nu_lo + nu_hi);
        if mid <= nu_lo || mid >= nu_hi {
            break;
        }
        if mass(mid) >= 1.0 {
            nu_lo = mid;
        } else {
            nu_hi = mid;
        }
    }
    let nu = 0.5 * (nu_lo + nu_hi);
    let mut rho: Vec<f64> = l
        .iter()
        .zip(p)
        .map(|(x, pa)| pa * ratio((x - nu) / eta))
        .collect();
    let total: f64 = rho.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    for (r, pa) in rho.iter_mut().zip(p) {
        *r = (*r / total).min(pa * cap);
    }
    Some(rho)
}

#[cfg(test)]
mod tests {
    use super::super::kl_divergence;
    use super::*;

    fn losses(v: &[f64]) -> SubgroupLosses {
        SubgroupLosses::new(v.to_vec()).unwrap()
    }

    fn pi(v: &[f64]) -> ReferenceDistribution {
        ReferenceDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn evar_alpha_one_is_reference_mean() {
        let sol = constrained_weights(
            &losses(&[0.2, 0.9, 0.5]),
            &pi(&[0.5, 0.3, 0.2]),
            &RiskSpec::evar(1.0),
            DEFAULT_TOL,
        )
        .unwrap();
        assert_eq!(sol.weights, vec![0.5, 0.3, 0.2]);
        assert!((sol.value - (0.1 + 0.27 + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn evar_tiny_alpha_reaches_max_loss() {
        let sol = constrained_weights(
            &losses(&[0.2, 0.9, 0.5]),
            &pi(&[0.5, 0.3, 0.2]),
            &RiskSpec::evar(1e-6),
            DEFAULT_TOL,
        )
        .unwrap();
        assert!((sol.value - 0.9).abs() <= DEFAULT_TOL);
    }

    #[test]
    fn evar_two_subgroups_matches_segment_search() {
        // 1-D search of ρ₁ on [0, min(1, π₁/α)] at step 1e-5, KL ≤ ln 2
        let (l, p, alpha) = ([0.1, 0.8], [0.5, 0.5], 0.5);
        let beta = -f64::ln(alpha);
        let mut best = f64::NEG_INFINITY;
        let steps = 100_000;
        for i in 0..=steps {
            let r1 = i as f64 / steps as f64;
            let r2 = 1.0 - r1;
            if r2 > p[1] / alpha + 1e-15 || r1 > p[0] / alpha + 1e-15 {
                continue;
            }
            if kl_divergence(&[r1, r2], &p) <= beta {
                best = best.max(r1 * l[0] + r2 * l[1]);
            }
        }
        let sol =
            constrained_weights(&losses(&l), &pi(&p), &RiskSpec::evar(alpha), DEFAULT_TOL).unwrap();
        // cap binds here: ρ₂ = 1 has KL = ln 2 = β exactly
        assert!((best - 0.8).abs() < 1e-9);
        assert!((sol.value - best).abs() < 1e-4, "{} vs {}", sol.value, best);
    }

    #[test]
    fn evar_budget_never_binds() {
        // ratios capped at 1/α force KL(ρ‖π) ≤ -ln α, so EVaR equals CVaR
        let (l, p) = ([0.1, 0.8, 0.4], [0.6, 0.1, 0.3]);
        for alpha in [0.05, 0.1, 0.5, 0.9] {
            let e = constrained_weights(&losses(&l), &pi(&p), &RiskSpec::evar(alpha), 1e-9).unwrap();
            let c = greedy_fill(&l, &p, alpha);
            assert!((e.value - c.value).abs() < 1e-12);
        }
    }

    #[test]
    fn tight_kl_ball_binds() {
        let (l, p) = ([0.1, 0.8, 0.4], [0.6, 0.1, 0.3]);
        let spec = RiskSpec {
            alpha: 0.5,
            divergence: Divergence::Kl,
            beta: 0.1,
        };
        let sol = constrained_weights(&losses(&l), &pi(&p), &spec, 1e-9).unwrap();
        let kl = kl_divergence(&sol.weights, &p);
        assert!(kl <= spec.beta + 1e-12);
        assert!(sol.dual_gap <= 1e-9);
        let cvar = greedy_fill(&l, &p, 0.5);
        assert!(kl_divergence(&cvar.weights, &p) > spec.beta);
        assert!(sol.value < cvar.value);
        assert!((kl - spec.beta).abs() < 1e-6);
        let total: f64 = sol.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (w, pa) in sol.weights.iter().zip(p) {
            assert!(*w <= pa / 0.5 + 1e-12);
        }
    }

    #[test]
    fn custom_kl_agrees_with_closed_form() {
        fn f(x: f64) -> f64 {
            if x <= 0.0 {
                0.0
            } else {
                x * x.ln()
            }
        }
        fn df(x: f64) -> f64 {
            x.ln() + 1.0
        }
        let (l, p) = ([0.1, 0.8, 0.4], [0.6, 0.1, 0.3]);
        let alpha = 0.3;
        let custom = RiskSpec::custom(alpha, CustomDivergence { f, df }, -f64::ln(alpha));
        let a = constrained_weights(&losses(&l), &pi(&p), &custom, 1e-8).unwrap();
        let b = constrained_weights(&losses(&l), &pi(&p), &RiskSpec::evar(alpha), 1e-8).unwrap();
        assert!((a.value - b.value).abs() < 1e-6, "{} vs {}", a.value, b.value);
    }

    #[test]
    fn constant_losses_converge() {
        let sol = constrained_weights(
            &losses(&[0.3, 0.3, 0.3]),
            &pi(&[0.2, 0.3, 0.5]),
            &RiskSpec::evar(0.2),
            DEFAULT_TOL,
        )
        .unwrap();
        assert!((sol.value - 0.3).abs() < 1e-12);
    }

    #[test]
    fn bad_tolerance() {
        let r = constrained_weights(
            &losses(&[0.3]),
            &pi(&[1.0]),
            &RiskSpec::evar(0.2),
            0.0,
        );
        assert_eq!(r.unwrap_err(), RiskError::BadTolerance(0.0));
    }
}
