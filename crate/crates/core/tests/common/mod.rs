#![allow(dead_code)]

use crowd_core::{make_density, Domain, Grid, GridDensity, Profile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn interval(n: usize) -> Grid {
    Grid::new(Domain::interval(2.0).unwrap(), n).unwrap()
}

pub fn circle(n: usize) -> Grid {
    Grid::new(Domain::circle(2.0).unwrap(), n).unwrap()
}

/// Seeded densities that mostly violate the cap: spiky piecewise-constant
/// profiles, sums of narrow bumps, and concentrated blocks.
pub fn corpus(grid: Grid, count: usize, seed: u64) -> Vec<GridDensity> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.n();
    let l = grid.length();
    (0..count)
        .map(|k| match k % 3 {
            0 => {
                let pieces = rng.random_range(2..=n.min(24));
                let heights: Vec<f64> = (0..pieces).map(|_| rng.random::<f64>().powi(3)).collect();
                let v: Vec<f64> = (0..n).map(|i| heights[i * pieces / n] + 1e-3).collect();
                GridDensity::normalized(grid, v).unwrap()
            }
            1 => {
                let bumps = rng.random_range(1..=4);
                let mut v = vec![0.0; n];
                for _ in 0..bumps {
                    let c = rng.random_range(0.1 * l..0.9 * l);
                    let w = rng.random_range(0.1..0.6);
                    let a = rng.random_range(0.2..1.0);
                    let b = make_density(grid, &Profile::Triangle { center: c, width: w }).unwrap();
                    for (x, y) in v.iter_mut().zip(b.values()) {
                        *x += a * y;
                    }
                }
                GridDensity::normalized(grid, v).unwrap()
            }
            _ => {
                let a = rng.random_range(0.0..0.8 * l);
                let width = rng.random_range(0.15..0.8);
                let b = (a + width).min(l);
                make_density(grid, &Profile::Block { a, b, height: 1.0 }).unwrap()
            }
        })
        .collect()
}

/// Strictly positive cell values with a heavy spread, normalized to mass 1.
pub fn arb_density(circle_domain: bool, cells: std::ops::Range<usize>) -> impl proptest::strategy::Strategy<Value = GridDensity> {
    use proptest::prelude::*;
    cells
        .prop_flat_map(|n| proptest::collection::vec(0.0f64..1.0, n))
        .prop_map(move |v| {
            let g = if circle_domain { circle(v.len()) } else { interval(v.len()) };
            GridDensity::normalized(g, v.iter().map(|x| x * x * x + 1e-3).collect()).unwrap()
        })
}

/// Two densities on one grid.
pub fn arb_pair(circle_domain: bool, cells: std::ops::Range<usize>) -> impl proptest::strategy::Strategy<Value = (GridDensity, GridDensity)> {
    use proptest::prelude::*;
    cells
        .prop_flat_map(|n| (proptest::collection::vec(0.0f64..1.0, n), proptest::collection::vec(0.0f64..1.0, n)))
        .prop_map(move |(a, b)| {
            let g = if circle_domain { circle(a.len()) } else { interval(a.len()) };
            let make = |v: Vec<f64>| GridDensity::normalized(g, v.iter().map(|x| x * x * x + 1e-3).collect()).unwrap();
            (make(a), make(b))
        })
}
