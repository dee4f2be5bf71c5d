mod common;

use common::{arb_density, arb_pair, interval};
use crowd_core::fokker_planck::{DriftField, DriftPreset};
use crowd_core::oracle::{solve_ot, solve_ot_with, DiscreteMeasure, GroundCost};
use crowd_core::schemes::{main_scheme_run, SchemeOptions};
use crowd_core::quantile::default_resolution;
use crowd_core::transport::{action_b2, displace, geodesic_quantile, mccann_interpolate, quantile_cost, wasserstein, TransportMap};
use crowd_core::{from_quantile, make_density, to_quantile, GridDensity, Profile};
use proptest::prelude::*;

fn triple(circle: bool) -> impl Strategy<Value = (GridDensity, GridDensity, GridDensity)> {
    (arb_pair(circle, 8..48), any::<u64>()).prop_map(|((a, b), seed)| {
        let c = make_density(*a.grid(), &Profile::Random { pieces: 1 + (seed % 7) as usize, seed }).unwrap();
        (a, b, c)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn triangle_inequality((a, b, c) in triple(false)) {
        for p in [1, 2] {
            let (ab, bc, ac) = (wasserstein(&a, &b, p).unwrap(), wasserstein(&b, &c, p).unwrap(), wasserstein(&a, &c, p).unwrap());
            prop_assert!(ac <= ab + bc + 1e-9, "p={p}: {ac} > {ab} + {bc}");
        }
    }

    #[test]
    fn triangle_inequality_on_the_circle((a, b, c) in triple(true)) {
        for p in [1, 2] {
            let (ab, bc, ac) = (wasserstein(&a, &b, p).unwrap(), wasserstein(&b, &c, p).unwrap(), wasserstein(&a, &c, p).unwrap());
            prop_assert!(ac <= ab + bc + 1e-9, "p={p}: {ac} > {ab} + {bc}");
        }
    }

    #[test]
    fn w1_never_exceeds_w2((a, b) in arb_pair(false, 8..64), circle_pair in arb_pair(true, 8..64)) {
        prop_assert!(wasserstein(&a, &b, 1).unwrap() <= wasserstein(&a, &b, 2).unwrap() + 1e-12);
        let (c, d) = circle_pair;
        prop_assert!(wasserstein(&c, &d, 1).unwrap() <= wasserstein(&c, &d, 2).unwrap() + 1e-12);
    }

    #[test]
    fn quantile_round_trip_is_exact(rho in arb_density(false, 8..80), circ in arb_density(true, 8..80)) {
        for r in [&rho, &circ] {
            let n = r.grid().n();
            let back = from_quantile(&to_quantile(r, 4 * n).unwrap(), r.grid()).unwrap();
            prop_assert!(back.l1_distance(r).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn geodesics_have_constant_speed((a, b) in arb_pair(false, 8..64)) {
        let d = wasserstein(&a, &b, 2).unwrap();
        let qa = to_quantile(&a, default_resolution(a.grid().n())).unwrap();
        for t in [0.25, 0.5, 0.75] {
            let q = geodesic_quantile(&a, &b, t).unwrap();
            prop_assert!((quantile_cost(&qa, &q, 2).sqrt() - t * d).abs() <= 1e-8);
            // Cell averaging moves mass by at most one cell width.
            let m = mccann_interpolate(&a, &b, t).unwrap();
            prop_assert!((wasserstein(&a, &m, 2).unwrap() - t * d).abs() <= a.grid().h());
        }
        prop_assert!(mccann_interpolate(&a, &b, 0.0).unwrap().l1_distance(&a).unwrap() <= 1e-10);
        prop_assert!(mccann_interpolate(&a, &b, 1.0).unwrap().l1_distance(&b).unwrap() <= 1e-10);
    }

    #[test]
    fn entropy_is_displacement_convex((a, b) in arb_pair(false, 8..64), t in 0.0f64..1.0) {
        let m = mccann_interpolate(&a, &b, t).unwrap();
        prop_assert!(m.entropy() <= a.entropy().max(b.entropy()) + 1e-9);
    }

    #[test]
    fn entropy_is_displacement_convex_on_the_circle((a, b) in arb_pair(true, 8..64), t in 0.0f64..1.0) {
        let m = mccann_interpolate(&a, &b, t).unwrap();
        prop_assert!(m.entropy() <= a.entropy().max(b.entropy()) + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn distances_match_the_flow_oracle((a, b) in arb_pair(false, 8..33)) {
        let (ma, mb) = (DiscreteMeasure::from_density(&a), DiscreteMeasure::from_density(&b));
        let h = a.grid().h();
        let diam = a.grid().length();
        for p in [1u32, 2] {
            let lp = solve_ot(&ma, &mb, p).unwrap().cost;
            let ours = wasserstein(&a, &b, p).unwrap().powi(p as i32);
            prop_assert!((lp - ours).abs() <= 2.0 * h * diam, "p={p}: LP {lp} vs {ours}");
        }
    }

    #[test]
    fn circle_distances_match_the_periodic_oracle((a, b) in arb_pair(true, 8..33)) {
        let (ma, mb) = (DiscreteMeasure::from_density(&a), DiscreteMeasure::from_density(&b));
        let h = a.grid().h();
        let l = a.grid().length();
        for p in [1u32, 2] {
            let lp = solve_ot_with(&ma, &mb, p, GroundCost::Periodic(l)).unwrap().cost;
            let ours = wasserstein(&a, &b, p).unwrap().powi(p as i32);
            prop_assert!((lp - ours).abs() <= 2.0 * h * l, "p={p}: LP {lp} vs {ours}");
        }
    }
}

#[test]
fn pushing_forward_by_halving_concentrates() {
    let g = interval(200);
    let indicator = make_density(g, &Profile::Block { a: 0.0, b: 1.0, height: 1.0 }).unwrap();
    let half = displace(&indicator, &TransportMap::from_fn(g, |x| x / 2.0)).unwrap();
    let block = make_density(g, &Profile::Block { a: 0.0, b: 0.5, height: 2.0 }).unwrap();
    assert!(half.l1_distance(&block).unwrap() < 1e-10);
    assert!((half.mass() - 1.0).abs() < 1e-12);
    let w = wasserstein(&indicator, &half, 2).unwrap();
    assert!((w * w - 1.0 / 12.0).abs() < 1e-10);
    assert!(displace(&indicator, &TransportMap::from_fn(g, |x| 2.0 - x)).is_err());
}

#[test]
fn action_grows_under_dyadic_refinement() {
    let g = interval(200);
    let rho0 = make_density(g, &Profile::Block { a: 1.0, b: 2.0, height: 1.0 }).unwrap();
    let u = DriftField::new(g.domain(), DriftPreset::Sine { kappa: 1.0, m: 1, phi: 0.0 }).unwrap();
    let tau = 5e-3;
    let traj = main_scheme_run(&rho0, &u, tau, 0.32, SchemeOptions { keep_densities: true }).unwrap();
    let steps = traj.steps.len();
    assert_eq!(steps, 64);
    let mut prev = 0.0;
    for stride in [64, 32, 16, 8, 4, 2, 1] {
        let samples: Vec<(f64, GridDensity)> =
            (0..=steps).step_by(stride).map(|k| (k as f64 * tau, traj.density(k).unwrap().clone())).collect();
        let a = action_b2(&samples).unwrap();
        assert!(a >= prev - 1e-12, "stride {stride}: {a} < {prev}");
        prev = a;
    }
    assert!((prev - traj.diagnostics().last().unwrap().action_lb).abs() < 1e-12 * prev.max(1.0));
}

#[test]
fn translation_geodesic_is_exact_on_the_grid() {
    let g = interval(200);
    let left = make_density(g, &Profile::Block { a: 0.0, b: 1.0, height: 1.0 }).unwrap();
    let right = make_density(g, &Profile::Block { a: 1.0, b: 2.0, height: 1.0 }).unwrap();
    assert!((wasserstein(&left, &right, 2).unwrap() - 1.0).abs() < 1e-12);
    assert!((wasserstein(&left, &right, 1).unwrap() - 1.0).abs() < 1e-12);
    for t in [0.25, 0.5, 0.75] {
        let m = mccann_interpolate(&left, &right, t).unwrap();
        let expect = make_density(g, &Profile::Block { a: t, b: 1.0 + t, height: 1.0 }).unwrap();
        assert!(m.l1_distance(&expect).unwrap() < 1e-10);
        assert!((wasserstein(&left, &m, 2).unwrap() - t).abs() <= 1e-8);
    }
}
