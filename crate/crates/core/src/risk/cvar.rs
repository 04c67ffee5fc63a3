use super::{check_alpha, check_dims, ReferenceDistribution, RiskError, RiskSolution, SubgroupLosses};

/// Exact CVaR maximizer over `{ρ : Σρ = 1, 0 ≤ ρ_a ≤ π_a/α}`.
///
/// Subgroups are visited by decreasing loss (lower index first among ties)
/// and each receives its full cap until the unit mass is spent.
pub fn cvar_weights(
    losses: &SubgroupLosses,
    pi: &ReferenceDistribution,
    alpha: f64,
) -> Result<RiskSolution, RiskError> {
    check_alpha(alpha)?;
    check_dims(losses.values(), pi)?;
    Ok(greedy_fill(losses.values(), pi.probs(), alpha))
}

/// Visiting order used by the greedy fill: loss descending, index ascending.
pub(crate) fn descending_order(losses: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..losses.len()).collect();
    // stable sort keeps lower indices first among equal losses
    order.sort_by(|&i, &j| losses[j].total_cmp(&losses[i]));
    order
}

pub(crate) fn greedy_fill(losses: &[f64], pi: &[f64], alpha: f64) -> RiskSolution {
    let mut weights = vec![0.0; losses.len()];
    let mut remaining = 1.0;
    for a in descending_order(losses) {
        if remaining <= 0.0 {
            break;
        }
        let w = (pi[a] / alpha).min(remaining);
        weights[a] = w;
        remaining -= w;
    }
    // caps at α = 1 reproduce π; rounding can leave ~1e-16 unassigned
    RiskSolution::from_weights(weights, losses, 0.0)
}
