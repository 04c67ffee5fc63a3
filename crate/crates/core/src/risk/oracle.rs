//! Brute-force reference solvers for the risk measures, plus the randomized
//! agreement suite behind the `oracle-check` subcommand.
//!
//! Nothing here shares code with the production solvers: the grid search
//! and the vertex enumeration only evaluate the objective at candidate
//! points of the feasible set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    check_alpha, check_dims, constrained_weights, cvar_weights, Divergence, ReferenceDistribution,
    RiskError, RiskSpec, SubgroupLosses,
};

const FEAS_SLACK: f64 = 1e-12;

/// Grid values `0, h, 2h, …` below `upper`, followed by `upper` itself,
/// skipping those below `lower`.
fn axis(lower: f64, upper: f64, resolution: f64) -> impl Iterator<Item = f64> {
    let upper = upper.max(0.0);
    let steps = (upper / resolution).floor() as usize;
    // the small shift keeps a point sitting exactly on `lower`
    let first = ((lower / resolution - 1e-9).ceil().max(0.0) as usize).min(steps + 1);
    (first..=steps)
        .map(move |i| i as f64 * resolution)
        .filter(move |x| *x < upper)
        .chain((upper >= lower).then_some(upper))
}

/// Maximum of `Σρ_a L_a` over a grid of the feasible set of `spec`.
///
/// Without a divergence constraint the two subgroups with the widest caps
/// are resolved exactly (a segment of a linear objective peaks at an
/// endpoint) and the others are gridded; with one, the first `n - 1`
/// coordinates are gridded and the last is implied by `Σρ = 1`.
pub fn oracle_risk_grid(
    losses: &SubgroupLosses,
    pi: &ReferenceDistribution,
    spec: &RiskSpec,
    resolution: f64,
) -> Result<f64, RiskError> {
    spec.validate()?;
    let l = losses.values();
    check_dims(l, pi)?;
    let n = l.len();
    if n > 4 {
        return Err(RiskError::TooManySubgroups(n));
    }
    if !(resolution > 0.0) {
        return Err(RiskError::BadTolerance(resolution));
    }
    let p = pi.probs();
    let caps: Vec<f64> = p.iter().map(|x| (x / spec.alpha).min(1.0)).collect();
    if n == 1 {
        return Ok(l[0]);
    }

    let mut best = f64::NEG_INFINITY;
    match spec.divergence {
        Divergence::None => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| caps[a].total_cmp(&caps[b]));
            let (gridded, closed) = idx.split_at(n - 2);
            let (i, j) = (closed[0], closed[1]);
            let (hi, lo) = if l[i] >= l[j] { (i, j) } else { (j, i) };
            let tail_cap = caps[i] + caps[j];
            let close = |rest: f64| -> f64 {
                if rest < -FEAS_SLACK || rest > tail_cap + FEAS_SLACK {
                    return f64::NEG_INFINITY;
                }
                let rest = rest.max(0.0);
                let on_hi = caps[hi].min(rest);
                on_hi * l[hi] + (rest - on_hi) * l[lo]
            };
            match *gridded {
                [] => best = close(1.0),
                [a] => best = scan_axis(caps[a], l[a], 1.0, 0.0, tail_cap, resolution, &close),
                [a, b] => {
                    let lower = 1.0 - caps[b] - tail_cap - FEAS_SLACK;
                    axis(lower, caps[a], resolution).for_each(|x| {
                        let v = scan_axis(caps[b], l[b], 1.0 - x, x * l[a], tail_cap, resolution, &close);
                        best = best.max(v);
                    });
                }
                _ => unreachable!("at most four subgroups"),
            }
        }
        _ => {
            let gridded: Vec<usize> = (0..n - 1).collect();
            let last = n - 1;
            let mut point = vec![0.0; gridded.len()];
            let mut rho = vec![0.0; n];
            grid_recurse(&gridded, &caps, caps[last], resolution, 0, 1.0, &mut point, &mut |pt, rest| {
                if rest < -FEAS_SLACK || rest > caps[last] + FEAS_SLACK {
                    return;
                }
                rho[..n - 1].copy_from_slice(pt);
                rho[last] = rest.max(0.0);
                if spec.divergence.evaluate(&rho, p) <= spec.beta + FEAS_SLACK {
                    let v: f64 = rho.iter().zip(l).map(|(r, x)| r * x).sum();
                    best = best.max(v);
                }
            });
        }
    }
    Ok(best)
}

/// Best `head + x·loss + close(remaining − x)` over the grid of one
/// coordinate with cap `cap`, written as a plain loop since it carries
/// almost all of the work.
fn scan_axis(
    cap: f64,
    loss: f64,
    remaining: f64,
    head: f64,
    tail_cap: f64,
    resolution: f64,
    close: &impl Fn(f64) -> f64,
) -> f64 {
    let upper = cap.min(remaining).max(0.0);
    let lower = remaining - tail_cap - FEAS_SLACK;
    let steps = (upper / resolution).floor() as usize;
    let first = ((lower / resolution - 1e-9).ceil().max(0.0) as usize).min(steps + 1);
    let mut best = f64::NEG_INFINITY;
    for k in first..=steps {
        let x = k as f64 * resolution;
        if x >= upper {
            break;
        }
        best = best.max(head + x * loss + close(remaining - x));
    }
    if upper >= lower {
        best = best.max(head + upper * loss + close(remaining - upper));
    }
    best
}

/// Visits grid points of the coordinates `coords` with total at most
/// `remaining`. Points leaving more than the later coordinates plus
/// `tail_cap` can absorb are infeasible and skipped.
#[allow(clippy::too_many_arguments)]
fn grid_recurse<F: FnMut(&[f64], f64)>(
    coords: &[usize],
    caps: &[f64],
    tail_cap: f64,
    resolution: f64,
    depth: usize,
    remaining: f64,
    point: &mut Vec<f64>,
    visit: &mut F,
) {
    if depth == coords.len() {
        visit(point, remaining);
        return;
    }
    let later: f64 = coords[depth + 1..].iter().map(|&a| caps[a]).sum::<f64>() + tail_cap;
    let lower = remaining - later - FEAS_SLACK;
    // internal iteration: a `for` loop over the chained axis is much slower
    axis(lower, caps[coords[depth]].min(remaining), resolution).for_each(|x| {
        point[depth] = x;
        grid_recurse(coords, caps, tail_cap, resolution, depth + 1, remaining - x, point, visit);
    });
}

/// Exact CVaR by enumerating the vertices of the capped simplex: every
/// vertex has all but at most one coordinate at a bound (`0` or `π_a/α`).
pub fn cvar_vertex_enumeration(
    losses: &SubgroupLosses,
    pi: &ReferenceDistribution,
    alpha: f64,
) -> Result<f64, RiskError> {
    check_alpha(alpha)?;
    let l = losses.values();
    check_dims(l, pi)?;
    let n = l.len();
    if n > 20 {
        return Err(RiskError::TooManySubgroups(n));
    }
    let caps: Vec<f64> = pi.probs().iter().map(|p| p / alpha).collect();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << n) {
        let at_cap = |a: usize| mask & (1 << a) != 0;
        let capped_mass: f64 = (0..n).filter(|&a| at_cap(a)).map(|a| caps[a]).sum();
        let capped_value: f64 = (0..n).filter(|&a| at_cap(a)).map(|a| caps[a] * l[a]).sum();
        // all coordinates at a bound
        if (capped_mass - 1.0).abs() <= 1e-12 {
            best = best.max(capped_value);
        }
        // one free coordinate among those at zero in the mask
        for free in (0..n).filter(|&a| !at_cap(a)) {
            let w = 1.0 - capped_mass;
            if w >= -1e-12 && w <= caps[free] + 1e-12 {
                best = best.max(capped_value + w * l[free]);
            }
        }
    }
    Ok(best)
}

/// A random problem instance for the agreement suite.
#[derive(Debug, Clone)]
pub struct Instance {
    pub losses: SubgroupLosses,
    pub pi: ReferenceDistribution,
    pub alpha: f64,
}

/// Draws `n` losses uniform on `[0,1]`, `π` from normalized uniforms
/// floored at 0.02, and `α` uniform on `[0.05, 1]`.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize) -> Instance {
    let losses: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let raw: Vec<f64> = (0..n).map(|_| 0.02 + rng.gen::<f64>()).collect();
    Instance {
        losses: SubgroupLosses::new(losses).expect("uniform draws lie in [0,1]"),
        pi: ReferenceDistribution::from_weights(&raw).expect("positive weights"),
        alpha: rng.gen_range(0.05..=1.0),
    }
}

/// Summary of one run of the agreement suite.
#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub cvar_instances: usize,
    pub evar_instances: usize,
    pub max_cvar_vertex_err: f64,
    pub max_cvar_grid_err: f64,
    pub max_evar_grid_err: f64,
    pub cvar_vertex_tol: f64,
    pub cvar_grid_tol: f64,
    pub evar_grid_tol: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.max_cvar_vertex_err <= self.cvar_vertex_tol
            && self.max_cvar_grid_err <= self.cvar_grid_tol
            && self.max_evar_grid_err <= self.evar_grid_tol
    }
}

/// Compares the production solvers against the brute-force oracles:
/// CVaR on `cvar_instances` problems with 1 to 4 subgroups (grid at 1e-4,
/// vertex enumeration exact) and EVaR on `evar_instances` two-subgroup
/// problems (grid at 1e-5).
pub fn run_oracle_suite(
    cvar_instances: usize,
    evar_instances: usize,
    seed: u64,
) -> Result<OracleReport, RiskError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = OracleReport {
        cvar_instances,
        evar_instances,
        max_cvar_vertex_err: 0.0,
        max_cvar_grid_err: 0.0,
        max_evar_grid_err: 0.0,
        cvar_vertex_tol: 1e-9,
        cvar_grid_tol: 2e-4,
        evar_grid_tol: 1e-3,
    };
    for k in 0..cvar_instances {
        let inst = random_instance(&mut rng, 1 + k % 4);
        let sol = cvar_weights(&inst.losses, &inst.pi, inst.alpha)?;
        let vertex = cvar_vertex_enumeration(&inst.losses, &inst.pi, inst.alpha)?;
        let grid = oracle_risk_grid(&inst.losses, &inst.pi, &RiskSpec::cvar(inst.alpha), 1e-4)?;
        report.max_cvar_vertex_err = report.max_cvar_vertex_err.max((sol.value - vertex).abs());
        report.max_cvar_grid_err = report.max_cvar_grid_err.max((sol.value - grid).abs());
    }
    for _ in 0..evar_instances {
        let inst = random_instance(&mut rng, 2);
        let spec = RiskSpec::evar(inst.alpha);
        let sol = constrained_weights(&inst.losses, &inst.pi, &spec, super::DEFAULT_TOL)?;
        let grid = oracle_risk_grid(&inst.losses, &inst.pi, &spec, 1e-5)?;
        report.max_evar_grid_err = report.max_evar_grid_err.max((sol.value - grid).abs());
    }
    Ok(report)
}
