mod common;

use common::{arb_density, circle, interval};
use crowd_core::fokker_planck::{fp_solve, DriftField, DriftPreset};
use crowd_core::projection::project_k;
use crowd_core::schemes::{
    interpolation_eval, jko_step_state, main_scheme_run, variant1_run, variant1_step, Interpolation, JkoState, Potential,
    SchemeOptions, Trajectory,
};
use crowd_core::transport::wasserstein;
use crowd_core::{make_density, GridDensity, Profile};
use proptest::prelude::*;

const KEEP: SchemeOptions = SchemeOptions { keep_densities: true };

fn reference(tau: f64, horizon: f64) -> Trajectory {
    let g = interval(100);
    let rho0 = make_density(g, &Profile::Block { a: 1.0, b: 2.0, height: 1.0 }).unwrap();
    let u = DriftField::new(g.domain(), DriftPreset::Sine { kappa: 1.0, m: 1, phi: 0.0 }).unwrap();
    main_scheme_run(&rho0, &u, tau, horizon, KEEP).unwrap()
}

#[test]
fn interpolations_hit_the_scheme_at_grid_times() {
    let tau = 1e-2;
    let traj = reference(tau, 0.1);
    for k in 0..traj.steps.len() {
        let t = k as f64 * tau;
        let rho_k = traj.density(k).unwrap();
        for which in [Interpolation::First, Interpolation::Second] {
            let at = interpolation_eval(&traj, which, t).unwrap();
            assert!(at.linf_distance(rho_k).unwrap() <= 1e-12, "{which:?} at step {k}");
        }
        let third = interpolation_eval(&traj, Interpolation::Third, t + 0.5 * tau).unwrap();
        assert_eq!(&third, traj.density(k + 1).unwrap());
        // Both halves of the first curve meet at the pre-projection state.
        let tilde = traj.steps[k].rho_tilde.as_ref().unwrap();
        let mid = interpolation_eval(&traj, Interpolation::First, t + 0.5 * tau).unwrap();
        assert!(wasserstein(&mid, tilde, 2).unwrap() <= 1e-9, "midpoint {k}");
        let before = interpolation_eval(&traj, Interpolation::First, t + 0.5 * tau * (1.0 - 1e-9)).unwrap();
        assert!(wasserstein(&before, tilde, 2).unwrap() <= 1e-6, "left limit {k}");
    }
    let end = interpolation_eval(&traj, Interpolation::First, 0.1).unwrap();
    assert_eq!(end, traj.final_density);
}

#[test]
fn steps_chain_entropy_and_distance() {
    let traj = reference(1e-2, 0.3);
    let mut prev = traj.rho0.entropy();
    for s in &traj.steps {
        let d = s.diag;
        assert!((d.entropy_prev - prev).abs() <= 1e-12);
        assert!(d.entropy <= d.entropy_tilde + 1e-12);
        assert!(d.w2_inc <= d.w2_tilde + d.w2_moved + 1e-9);
        assert!(d.sup_viol <= 1e-10);
        assert!((d.mass - 1.0).abs() <= 1e-12);
        let again = project_k(s.rho_next.as_ref().unwrap()).unwrap();
        assert!(again.projected.linf_distance(s.rho_next.as_ref().unwrap()).unwrap() <= 1e-12);
        prev = d.entropy;
    }
}

/// Largest `W2(rho(t), rho(s)) / sqrt|t - s|` over the grid times.
fn holder_constant(traj: &Trajectory) -> f64 {
    let n = traj.steps.len();
    let tau = traj.tau;
    let states: Vec<&GridDensity> = (0..=n).map(|k| traj.density(k).unwrap()).collect();
    let stride = (n / 40).max(1);
    let mut worst: f64 = 0.0;
    for i in (0..=n).step_by(stride) {
        for j in (i + 1..=n).step_by(stride) {
            let w = wasserstein(states[i], states[j], 2).unwrap();
            worst = worst.max(w / ((j - i) as f64 * tau).sqrt());
        }
    }
    worst
}

#[test]
fn half_order_time_regularity_is_uniform_in_tau() {
    let c: Vec<f64> = [4e-3, 2e-3, 1e-3].iter().map(|&tau| holder_constant(&reference(tau, 0.2))).collect();
    let (lo, hi) = c.iter().fold((f64::MAX, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    assert!(hi / lo <= 1.2, "{c:?}");
}

#[test]
fn without_drift_a_feasible_start_never_feels_the_cap() {
    let g = interval(100);
    let rho0 = make_density(g, &Profile::Block { a: 0.0, b: 1.0, height: 1.0 }).unwrap();
    let u = DriftField::zero(g.domain());
    let tau = 1e-2;
    let traj = main_scheme_run(&rho0, &u, tau, 0.2, KEEP).unwrap();
    let times: Vec<f64> = (1..=20).map(|k| k as f64 * tau).collect();
    let free = fp_solve(&rho0, &u, 0.2, &times).unwrap();
    for (k, s) in traj.steps.iter().enumerate() {
        assert_eq!(s.diag.p_max, 0.0, "step {k}");
        let gap = s.rho_next.as_ref().unwrap().linf_distance(&free[k].1).unwrap();
        assert!(gap <= 1e-9, "step {k}: {gap:e}");
    }
}

#[test]
fn uniform_is_a_fixed_point() {
    for g in [interval(80), circle(80)] {
        let rho0 = GridDensity::uniform(g);
        let traj = main_scheme_run(&rho0, &DriftField::zero(g.domain()), 0.05, 0.5, KEEP).unwrap();
        assert!(traj.final_density.linf_distance(&rho0).unwrap() <= 1e-12);
    }
}

#[test]
fn convolution_variant_keeps_mass_under_the_cap() {
    let g = circle(128);
    let rho0 = make_density(g, &Profile::Block { a: 0.2, b: 1.2, height: 1.0 }).unwrap();
    let u = DriftField::new(g.domain(), DriftPreset::Sine { kappa: 1.0, m: 1, phi: 0.0 }).unwrap();
    for (t, rho) in variant1_run(&rho0, &u, 0.02, 0.4).unwrap() {
        assert!((rho.mass() - 1.0).abs() <= 1e-12, "t = {t}");
        assert!(rho.sup_violation() <= 1e-10, "t = {t}");
    }
    let line = GridDensity::uniform(interval(64));
    assert!(variant1_step(&line, &DriftField::zero(line.grid().domain()), 0.01, 0.0).is_err());
    let steep = DriftField::new(g.domain(), DriftPreset::Sine { kappa: 40.0, m: 2, phi: 0.0 }).unwrap();
    assert!(variant1_step(&rho0, &steep, 0.1, 0.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn jko_steps_decrease_the_penalized_energy(mu in arb_density(false, 16..64), kappa in 0.0f64..4.0, center in 0.0f64..2.0, tau in 1e-3f64..0.2) {
        let start = project_k(&mu).unwrap().projected;
        let v = Potential::Quadratic { center, kappa };
        let state = JkoState::from_density(&start, start.grid().n()).unwrap();
        let (next, rep) = jko_step_state(&state, &v, tau).unwrap();
        prop_assert!(rep.energy_after + rep.w2_sq / (2.0 * tau) <= rep.energy_before + 1e-9);
        prop_assert!((rep.energy_before - state.energy(&v)).abs() <= 1e-12);
        let rho = next.density(start.grid()).unwrap();
        prop_assert!(rho.sup_violation() <= 1e-9);
        prop_assert!((rho.mass() - 1.0).abs() <= 1e-12);
    }
}
