//! Invariants checked over generated inputs.

mod common;

use std::f64::consts::PI;

use common::*;
use pce_core::derivatives::TrigSeries;
use pce_core::harness::{f1_score, match_paths, DEFAULT_MATCH_THRESHOLD};
use pce_core::likelihood::ResidualState;
use pce_core::model::{
    check_isotropy, generate_isotropic_pilots, phase_diff, sample_scenario, theta_grid,
    wrap_phase, PathParams, PilotLayout, ScenarioConfig,
};
use pce_core::optimizer::{
    aic_user, momentum_candidate, relaxed_update, update_path, EstimatorConfig, PathSlot,
};
use pce_core::rootfind::{unit_circle_roots, ROOT_TOL};
use pce_core::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn angle() -> impl Strategy<Value = f64> {
    -PI..PI
}

fn path_strategy() -> impl Strategy<Value = PathParams> {
    (angle(), angle(), -1.5..1.5f64, -1.5..1.5f64, 0.1..2.0f64)
        .prop_map(|(w1, w2, phi, theta, g)| PathParams::new(c(g, 0.0), w1, w2, phi, theta))
}

fn hermitian_series(order: usize, raw: &[(f64, f64)]) -> TrigSeries {
    let mut pos = vec![c(raw[0].0, 0.0)];
    pos.extend(raw[1..=order].iter().map(|&(a, b)| c(a, b)));
    TrigSeries::from_positive(&pos)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn wrap_lands_in_half_open_interval(x in -1e3..1e3f64) {
        let w = wrap_phase(x);
        prop_assert!(w > -PI && w <= PI);
        let k = ((x - w) / (2.0 * PI)).round();
        prop_assert!((x - w - 2.0 * PI * k).abs() < 1e-9);
    }

    #[test]
    fn phase_diff_is_antisymmetric(a in angle(), b in angle()) {
        let d = phase_diff(a, b);
        prop_assume!((d.abs() - PI).abs() > 1e-9);
        prop_assert!((d + phase_diff(b, a)).abs() < 1e-12);
        prop_assert!((wrap_phase(b + d) - wrap_phase(a)).abs() < 1e-9);
    }

    #[test]
    fn plain_step_without_extrapolation(opt in angle(), m in angle(), prev in angle()) {
        prop_assert_eq!(momentum_candidate(opt, m, prev, 0.0), opt);
        prop_assert!((relaxed_update(m, opt, 1.0) - wrap_phase(opt)).abs() < 1e-12);
    }

    #[test]
    fn hermitian_series_are_real(
        order in 1usize..20,
        raw in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 21),
        x in angle(),
    ) {
        let s = hermitian_series(order, &raw);
        prop_assert!(s.hermitian_defect() < 1e-15);
        prop_assert!(s.eval_complex(x).im.abs() < 1e-12);
    }

    #[test]
    fn returned_roots_are_zeros(
        order in 1usize..30,
        raw in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 31),
    ) {
        let s = hermitian_series(order, &raw);
        let set = unit_circle_roots(&s, 1e-4).unwrap();
        let tol = ROOT_TOL * (1.0 + s.max_abs_coeff());
        for (x, g) in set.angles.iter().zip(&set.residuals) {
            prop_assert!(*x > -PI && *x <= PI);
            prop_assert!(s.eval(*x).abs() <= tol && *g <= tol);
        }
        prop_assert!(set.angles.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn generated_pilots_are_isotropic(nt in 1usize..9, seed in any::<u64>(), cycling in any::<bool>()) {
        let cfg = ScenarioConfig {
            nc: 5, ns: 4, nt,
            pilot_layout: if cycling { PilotLayout::Cycling } else { PilotLayout::Random },
            ..ScenarioConfig::default()
        };
        let p = generate_isotropic_pilots(&cfg, seed);
        prop_assert!(check_isotropy(&p, &theta_grid(64)).unwrap() <= 1e-10);
    }

    #[test]
    fn matching_ignores_estimate_order(
        truth in prop::collection::vec(path_strategy(), 0..5),
        jitter in prop::collection::vec((-0.1..0.1f64, -0.1..0.1f64), 5),
        extra in prop::collection::vec(path_strategy(), 0..3),
        rot in 0usize..8,
    ) {
        let mut est: Vec<PathParams> = truth.iter().zip(&jitter)
            .map(|(p, (a, b))| PathParams { omega1: p.omega1 + a, omega2: p.omega2 + b, ..*p })
            .collect();
        est.extend(extra);
        let m = match_paths(&truth, &est, DEFAULT_MATCH_THRESHOLD).unwrap();
        let n = est.len().max(1);
        est.rotate_left(rot % n);
        let r = match_paths(&truth, &est, DEFAULT_MATCH_THRESHOLD).unwrap();
        prop_assert_eq!(m.pairs.len(), r.pairs.len());
        let cost = |x: &pce_core::harness::MatchResult| x.pairs.iter().map(|p| p.cost).sum::<f64>();
        prop_assert!((cost(&m) - cost(&r)).abs() < 1e-9);
        // Swapping roles gives the same assignment size and cost.
        let s = match_paths(&est, &truth, DEFAULT_MATCH_THRESHOLD).unwrap();
        prop_assert_eq!(s.pairs.len(), r.pairs.len());
        prop_assert!((cost(&s) - cost(&r)).abs() < 1e-9);
        for p in &r.pairs {
            prop_assert!(p.cost <= DEFAULT_MATCH_THRESHOLD);
        }
    }

    #[test]
    fn f1_agrees_with_counting(
        truth in prop::collection::vec(path_strategy(), 0..5),
        est in prop::collection::vec(path_strategy(), 0..5),
        copies in 0usize..5,
    ) {
        let mut est = est;
        est.extend(truth.iter().take(copies).copied());
        let m = match_paths(&truth, &est, DEFAULT_MATCH_THRESHOLD).unwrap();
        let f1 = f1_score(&m);
        prop_assert!((0.0..=1.0).contains(&f1));
        let (tp, ne, nt) = (m.pairs.len() as f64, est.len() as f64, truth.len() as f64);
        let expect = if ne == 0.0 && nt == 0.0 { 1.0 } else { 2.0 * tp / (ne + nt) };
        prop_assert!((f1 - expect).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn path_updates_never_raise_the_objective(seed in 0u64..1000, init in path_strategy()) {
        let cfg = small_config(seed);
        let s = sample_scenario(&cfg).unwrap();
        let mut state = ResidualState::new(&s.received, &s.pilots, cfg.dims(), cfg.n0).unwrap();
        let est = EstimatorConfig::default();
        let mut slots = Vec::new();
        for (k, truth) in s.channels.iter().enumerate() {
            let start = PathParams { b: truth[0].b * 0.5, ..init };
            let id = state.add_path(k, start).unwrap();
            slots.push(PathSlot::new(id, start.phases(), est.eta0, 0));
        }
        for _ in 0..4 {
            for slot in slots.iter_mut() {
                let before = state.objective();
                let rep = update_path(&mut state, slot, &est).unwrap();
                prop_assert!(state.objective() <= before + 1e-9 * before.max(1.0));
                prop_assert_eq!(rep.objective_after, state.objective());
            }
        }
        let cached = state.objective();
        state.refresh();
        prop_assert!((state.objective() - cached).abs() <= 1e-8 * cached.max(1.0));
    }

    #[test]
    fn aic_masks_weakest_paths(seed in 0u64..1000) {
        let cfg = small_config(seed);
        let s = sample_scenario(&cfg).unwrap();
        let mut state = ResidualState::new(&s.received, &s.pilots, cfg.dims(), cfg.n0).unwrap();
        // Receive phases on distinct DFT bins of the array make the
        // regressors orthogonal whatever the pilots, so masking is the same
        // as refitting and each path added back can only lower the objective.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa1c);
        for bin in 0..3 {
            let g = random_path(&mut rng, 1.0);
            let psi = pce_core::model::wrap_phase(2.0 * PI * bin as f64 / cfg.nr as f64);
            let phi = pce_core::model::phi_from_psi(psi);
            let geometry = PathParams { phi, b: Complex64::new(0.0, 0.0), ..g };
            let id = state.add_path(0, geometry).unwrap();
            state.detach(id).unwrap();
            let b = state.solve_gain(id).unwrap();
            state.set_path(id, PathParams { b, ..geometry }).unwrap();
            state.attach(id).unwrap();
        }
        let nested: Vec<f64> = (0..=3).map(|l| aic_user(&state, 0, l, 0.0).unwrap()).collect();
        prop_assert!(nested.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0]), "{nested:?}");

        // Extra paths with fitted gains, as the estimator would add them.
        for _ in 0..2 {
            let g = random_path(&mut rng, 1.0);
            let id = state.add_path(0, PathParams { b: Complex64::new(0.0, 0.0), ..g }).unwrap();
            state.detach(id).unwrap();
            let b = state.solve_gain(id).unwrap();
            state.set_path(id, PathParams { b, ..g }).unwrap();
            state.attach(id).unwrap();
        }
        let n = state.user_paths(0).len();
        let values: Vec<f64> = (0..=n).map(|l| aic_user(&state, 0, l, 0.0).unwrap()).collect();
        prop_assert!((values[n] - state.objective()).abs() <= 1e-9 * values[n].max(1.0));
        prop_assert!(aic_user(&state, 0, n + 1, 0.0).is_err());
        let penal: Vec<f64> = (0..=n).map(|l| aic_user(&state, 0, l, 12.0).unwrap()).collect();
        for l in 0..=n {
            prop_assert!((penal[l] - values[l] - 12.0 * l as f64).abs() < 1e-9 * values[l].max(1.0));
        }
    }
}
