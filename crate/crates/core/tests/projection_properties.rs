mod common;

use common::{arb_density, arb_pair, circle, corpus, interval};
use crowd_core::projection::{cone_project_quantile, project_k, saturation_set, SATURATION_LEVEL};
use crowd_core::transport::{mccann_interpolate, wasserstein};
use crowd_core::{make_density, to_quantile, GridDensity, Profile};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn result_is_feasible_and_fixed(mu in arb_density(false, 8..120), nu in arb_density(true, 8..120)) {
        for m in [&mu, &nu] {
            let p = project_k(m).unwrap();
            prop_assert!(p.projected.sup_violation() <= 1e-12);
            prop_assert!((p.projected.mass() - 1.0).abs() <= 1e-12);
            let again = project_k(&p.projected).unwrap();
            prop_assert!(again.projected.linf_distance(&p.projected).unwrap() <= 1e-12);
            prop_assert!(again.w2_moved <= 1e-9);
        }
    }

    #[test]
    fn projection_does_not_expand_distances((a, b) in arb_pair(false, 16..100)) {
        let (pa, pb) = (project_k(&a).unwrap().projected, project_k(&b).unwrap().projected);
        let h = a.grid().h();
        prop_assert!(wasserstein(&pa, &pb, 2).unwrap() <= wasserstein(&a, &b, 2).unwrap() + h);
    }

    #[test]
    fn projection_never_raises_entropy_or_variation(mu in arb_density(false, 8..120), nu in arb_density(true, 8..120)) {
        for m in [&mu, &nu] {
            let p = project_k(m).unwrap().projected;
            prop_assert!(p.entropy() <= m.entropy() + 1e-12);
            prop_assert!(p.total_variation() <= m.total_variation() + 1e-9);
        }
    }

    #[test]
    fn nearby_inputs_have_nearby_projections(mu in arb_density(false, 32..100), nu in arb_density(false, 32..100)) {
        let nu = GridDensity::normalized(*mu.grid(), nu.values().iter().copied().cycle().take(mu.grid().n()).collect()).unwrap();
        let diam = mu.grid().length();
        let base = project_k(&mu).unwrap().projected;
        for delta in [1e-2, 1e-3] {
            let near = mccann_interpolate(&mu, &nu, delta).unwrap();
            let moved = wasserstein(&base, &project_k(&near).unwrap().projected, 2).unwrap();
            prop_assert!(moved <= 2.0 * delta.sqrt() * diam.sqrt(), "delta {delta}: {moved}");
        }
    }
}

#[test]
fn pressure_complements_the_density() {
    for (k, mu) in corpus(interval(120), 50, 7).into_iter().chain(corpus(circle(120), 50, 8)).enumerate() {
        let r = project_k(&mu).unwrap();
        let p = r.pressure.values();
        assert!(p.iter().all(|&v| v >= 0.0), "sample {k}: negative pressure");
        let scale = r.pressure.max().max(1.0);
        assert!(r.pressure.complementarity(&r.projected).abs() <= 1e-9 * scale, "sample {k}");
        for (i, (&pi, &ri)) in p.iter().zip(r.projected.values()).enumerate() {
            if pi > 0.0 {
                assert!(ri >= SATURATION_LEVEL, "sample {k} cell {i}: p = {pi} on rho = {ri}");
            }
        }
        assert!(r.audit.within_allowance(), "sample {k}: {:?}", r.audit.mixed_cells);
    }
}

#[test]
fn fingers_saturate_their_own_slots() {
    let (k, r) = (4usize, 0.125);
    let g = interval(400);
    let mu = make_density(g, &Profile::Finger { k, r }).unwrap();
    assert!(mu.sup_violation() > 0.0);
    let result = project_k(&mu).unwrap();
    let cells_per_slot = 400 / (2 * k);
    for slot in (1..2 * k).step_by(2) {
        for i in slot * cells_per_slot + 1..(slot + 1) * cells_per_slot - 1 {
            assert!(result.mask()[i], "cell {i} in slot {slot} not saturated");
        }
    }
}

#[test]
fn dense_block_spreads_to_a_centered_plateau() {
    let g = interval(200);
    let mu = make_density(g, &Profile::Block { a: 0.5, b: 1.0, height: 2.0 }).unwrap();
    let r = project_k(&mu).unwrap();
    let expect = make_density(g, &Profile::Block { a: 0.25, b: 1.25, height: 1.0 }).unwrap();
    assert!(r.projected.linf_distance(&expect).unwrap() <= 1e-10);
    let audit = saturation_set(&r.projected, &mu).unwrap();
    assert_eq!(audit.components, vec![(25, 100)]);
    assert!(audit.mixed_cells.is_empty());
}

#[test]
fn a_wall_shifts_the_plateau_inward() {
    let g = interval(200);
    let mu = make_density(g, &Profile::Block { a: 0.0, b: 0.5, height: 2.0 }).unwrap();
    let r = project_k(&mu).unwrap();
    let expect = make_density(g, &Profile::Block { a: 0.0, b: 1.0, height: 1.0 }).unwrap();
    assert!(r.projected.linf_distance(&expect).unwrap() <= 1e-10);
    assert_eq!(r.audit.components, vec![(0, 100)]);
    // The pressure vanishes at the free boundary and peaks at the wall.
    let p = r.pressure.values();
    assert!(p[0] > p[50] && p[50] > p[99] && p[100] == 0.0);
}

#[test]
fn cone_projection_keeps_feasible_slopes() {
    let g = interval(64);
    let q = to_quantile(&make_density(g, &Profile::Triangle { center: 1.0, width: 1.8 }).unwrap(), 256).unwrap();
    let projected = cone_project_quantile(&q).unwrap();
    for (w, s) in projected.values().windows(2).zip(projected.levels().windows(2)) {
        assert!(w[1] - w[0] >= (s[1] - s[0]) * (1.0 - 1e-12));
    }
    let feasible = to_quantile(&GridDensity::uniform(g), 256).unwrap();
    assert_eq!(cone_project_quantile(&feasible).unwrap(), feasible);
}
