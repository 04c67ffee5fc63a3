use fentrisk::risk::oracle::{cvar_vertex_enumeration, oracle_risk_grid};
use fentrisk::risk::{
    constrained_weights, cvar_weights, kl_divergence, risk_gradient, Divergence,
    ReferenceDistribution, RiskSpec, SubgroupLosses, DEFAULT_TOL,
};
use proptest::prelude::*;

fn instance(max_n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max_n).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0..=1.0f64, n),
            prop::collection::vec(0.01..1.0f64, n),
        )
    })
}

fn build(l: &[f64], w: &[f64]) -> (SubgroupLosses, ReferenceDistribution) {
    (
        SubgroupLosses::new(l.to_vec()).unwrap(),
        ReferenceDistribution::from_weights(w).unwrap(),
    )
}

const ALPHAS: [f64; 7] = [0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0];

fn check_solution(l: &[f64], pi: &ReferenceDistribution, spec: &RiskSpec, tol: f64) {
    let sol = constrained_weights(&SubgroupLosses::new(l.to_vec()).unwrap(), pi, spec, DEFAULT_TOL).unwrap();
    assert!(sol.feasible);
    let total: f64 = sol.weights.iter().sum();
    assert!((total - 1.0).abs() <= 1e-9, "sum {total}");
    for (w, p) in sol.weights.iter().zip(pi.probs()) {
        assert!(*w >= -1e-12 && *w <= p / spec.alpha + 1e-9);
    }
    if !matches!(spec.divergence, Divergence::None) {
        assert!(spec.divergence.evaluate(&sol.weights, pi.probs()) <= spec.beta + tol);
    }
    let value: f64 = sol.weights.iter().zip(l).map(|(w, x)| w * x).sum();
    assert!((value - sol.value).abs() <= 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn solutions_are_feasible((l, w) in instance(12), alpha in 0.01..=1.0f64) {
        let pi = ReferenceDistribution::from_weights(&w).unwrap();
        check_solution(&l, &pi, &RiskSpec::cvar(alpha), 0.0);
        check_solution(&l, &pi, &RiskSpec::evar(alpha), 1e-9);
        let tight = RiskSpec { beta: 0.05 * -alpha.ln(), ..RiskSpec::evar(alpha) };
        check_solution(&l, &pi, &tight, 1e-6);
    }

    #[test]
    fn sandwich((l, w) in instance(12), alpha in 0.01..=1.0f64) {
        let (losses, pi) = build(&l, &w);
        let mean = pi.expectation(&l);
        let max = l.iter().copied().fold(0.0, f64::max);
        for spec in [RiskSpec::cvar(alpha), RiskSpec::evar(alpha)] {
            let v = constrained_weights(&losses, &pi, &spec, DEFAULT_TOL).unwrap().value;
            prop_assert!(mean - 1e-9 <= v && v <= max + 1e-9, "{mean} {v} {max}");
        }
    }

    #[test]
    fn monotone_in_alpha((l, w) in instance(12)) {
        let (losses, pi) = build(&l, &w);
        let values: Vec<f64> = ALPHAS
            .iter()
            .map(|&a| cvar_weights(&losses, &pi, a).unwrap().value)
            .collect();
        for pair in values.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12, "{values:?}");
        }
        let tight: Vec<f64> = ALPHAS
            .iter()
            .map(|&a| {
                let spec = RiskSpec { beta: 0.1 * -a.ln(), ..RiskSpec::evar(a) };
                constrained_weights(&losses, &pi, &spec, DEFAULT_TOL).unwrap().value
            })
            .collect();
        for pair in tight.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-6, "{tight:?}");
        }
    }

    #[test]
    fn evar_never_exceeds_cvar((l, w) in instance(12), alpha in 0.01..=1.0f64) {
        let (losses, pi) = build(&l, &w);
        let c = cvar_weights(&losses, &pi, alpha).unwrap().value;
        let e = constrained_weights(&losses, &pi, &RiskSpec::evar(alpha), DEFAULT_TOL).unwrap().value;
        prop_assert!(e <= c + 1e-9);
        let spec = RiskSpec { beta: 0.2 * -alpha.ln(), ..RiskSpec::evar(alpha) };
        let t = constrained_weights(&losses, &pi, &spec, DEFAULT_TOL).unwrap().value;
        prop_assert!(t <= c + 1e-9);
    }

    #[test]
    fn permutation_equivariant((l, w) in instance(8), alpha in 0.05..=1.0f64, seed in any::<u64>()) {
        // distinct losses keep the maximizer unique
        let l: Vec<f64> = l.iter().enumerate().map(|(i, x)| (x * 0.9 + 1e-3 * i as f64).min(1.0)).collect();
        let n = l.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for k in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(k, (s >> 33) as usize % (k + 1));
        }
        let (losses, pi) = build(&l, &w);
        let pl: Vec<f64> = perm.iter().map(|&i| l[i]).collect();
        let pw: Vec<f64> = perm.iter().map(|&i| pi.probs()[i]).collect();
        let (plosses, ppi) = build(&pl, &pw);
        for spec in [RiskSpec::cvar(alpha), RiskSpec { beta: 0.3 * -alpha.ln(), ..RiskSpec::evar(alpha) }] {
            let a = constrained_weights(&losses, &pi, &spec, DEFAULT_TOL).unwrap();
            let b = constrained_weights(&plosses, &ppi, &spec, DEFAULT_TOL).unwrap();
            prop_assert!((a.value - b.value).abs() <= 1e-9);
            for (k, &i) in perm.iter().enumerate() {
                prop_assert!((b.weights[k] - a.weights[i]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn tie_break_does_not_change_value(c in 0.0..=1.0f64, (l, w) in instance(6), alpha in 0.05..=1.0f64) {
        // duplicate one loss so a tie exists, then compare against reversed order
        let mut l = l;
        l.push(c);
        l.push(c);
        let mut w = w;
        w.extend([0.3, 0.6]);
        let (losses, pi) = build(&l, &w);
        let rl: Vec<f64> = l.iter().rev().copied().collect();
        let rw: Vec<f64> = pi.probs().iter().rev().copied().collect();
        let (rlosses, rpi) = build(&rl, &rw);
        let a = cvar_weights(&losses, &pi, alpha).unwrap().value;
        let b = cvar_weights(&rlosses, &rpi, alpha).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn cvar_matches_vertex_enumeration((l, w) in instance(10), alpha in 0.01..=1.0f64) {
        let (losses, pi) = build(&l, &w);
        let v = cvar_weights(&losses, &pi, alpha).unwrap().value;
        let oracle = cvar_vertex_enumeration(&losses, &pi, alpha).unwrap();
        prop_assert!((v - oracle).abs() <= 1e-9);
    }

    #[test]
    fn kl_budget_matches_grid_oracle((l, w) in instance(3), alpha in 0.1..=1.0f64, shrink in 0.05..1.0f64) {
        let (losses, pi) = build(&l, &w);
        let spec = RiskSpec { beta: shrink * -alpha.ln(), ..RiskSpec::evar(alpha) };
        let v = constrained_weights(&losses, &pi, &spec, 1e-9).unwrap().value;
        let oracle = oracle_risk_grid(&losses, &pi, &spec, 2e-3).unwrap();
        // the grid only sees feasible points, so it can trail but never lead
        prop_assert!(oracle <= v + 1e-7, "{oracle} > {v}");
        prop_assert!(v - oracle <= 2e-2, "{v} vs {oracle}");
    }

    #[test]
    fn gradient_matches_finite_differences((l, w) in instance(8), alpha in 0.05..=1.0f64) {
        // spread losses to avoid ties and keep them away from 0/1
        let l: Vec<f64> = l.iter().enumerate().map(|(i, x)| 0.05 + 0.85 * x + 1e-3 * i as f64).collect();
        let (losses, pi) = build(&l, &w);
        for spec in [RiskSpec::cvar(alpha), RiskSpec { beta: 0.3 * -alpha.ln(), ..RiskSpec::evar(alpha) }] {
            let sol = constrained_weights(&losses, &pi, &spec, 1e-12).unwrap();
            let g = risk_gradient(&sol);
            let h = 1e-6;
            for a in 0..l.len() {
                let mut up = l.clone();
                up[a] += h;
                let mut dn = l.clone();
                dn[a] -= h;
                let vu = constrained_weights(&SubgroupLosses::new(up).unwrap(), &pi, &spec, 1e-12).unwrap().value;
                let vd = constrained_weights(&SubgroupLosses::new(dn).unwrap(), &pi, &spec, 1e-12).unwrap().value;
                let fd = (vu - vd) / (2.0 * h);
                // a cap boundary inside the stencil makes the value kinked there
                let kinked = ((vu - sol.value) - (sol.value - vd)).abs() > 1e-9;
                if !kinked {
                    prop_assert!((fd - g[a]).abs() <= 1e-3 * g[a].abs().max(1e-3), "a={a} fd={fd} g={}", g[a]);
                }
            }
        }
    }

    #[test]
    fn kl_is_nonnegative(w1 in prop::collection::vec(0.01..1.0f64, 5), w2 in prop::collection::vec(0.01..1.0f64, 5)) {
        let p = ReferenceDistribution::from_weights(&w1).unwrap();
        let q = ReferenceDistribution::from_weights(&w2).unwrap();
        prop_assert!(kl_divergence(p.probs(), q.probs()) >= -1e-15);
        prop_assert!(kl_divergence(p.probs(), p.probs()).abs() <= 1e-15);
    }
}
