//! Exact one-dimensional optimal transport: Wasserstein distances, McCann
//! interpolation, push-forward by monotone maps, and the discrete
//! Benamou-Brenier action of a sampled curve.
//!
//! On the interval the optimal coupling pairs equal quantile levels. On the circle
//! it pairs `G_rho(s + alpha)` with `G_nu(s)` for the best level shift `alpha`,
//! where `G` is the lifted quantile (`G(s + 1) = G(s) + length`).

use crate::error::{Error, Result};
use crate::grid::{Grid, GridDensity};
use crate::quantile::{combine, default_resolution, from_quantile, merge, to_quantile, Piece, QuantileFn};

/// `integral_0^w |d(s)|^p ds` for `d` linear from `d0` to `d1`.
fn segment_power(w: f64, d0: f64, d1: f64, p: u32) -> f64 {
    match p {
        2 => w * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0,
        1 => {
            if d0 * d1 >= 0.0 {
                w * 0.5 * (d0.abs() + d1.abs())
            } else {
                w * 0.5 * (d0 * d0 + d1 * d1) / (d0.abs() + d1.abs())
            }
        }
        _ => unreachable!("exponent checked by caller"),
    }
}

/// `integral_0^1 |a(s) - b(s)|^p ds`, exact on piecewise-linear quantiles.
pub fn quantile_cost(a: &QuantileFn, b: &QuantileFn, p: u32) -> f64 {
    merge(a, b)
        .into_iter()
        .map(|(s0, s1, a0, a1, b0, b1)| segment_power(s1 - s0, a0 - b0, a1 - b1, p))
        .sum()
}

fn check_p(p: u32) -> Result<()> {
    if p == 1 || p == 2 {
        Ok(())
    } else {
        Err(Error::Contract(format!("only p = 1 and p = 2 are supported (got {p})")))
    }
}

/// Minimizes a unimodal function on `[lo, hi]` by golden-section search.
pub(crate) fn golden_min(mut lo: f64, mut hi: f64, iters: usize, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Optimal level shift and the squared distance between two lifted circle quantiles.
pub fn circle_shift(a: &QuantileFn, b: &QuantileFn) -> Result<(f64, f64)> {
    let cost = |alpha: f64| a.shifted(alpha).map(|sa| quantile_cost(&sa, b, 2)).unwrap_or(f64::INFINITY);
    let (alpha, _) = golden_min(-1.0, 1.0, 90, cost);
    let sa = a.shifted(alpha)?;
    Ok((alpha, quantile_cost(&sa, b, 2)))
}

/// `W_1` on the circle: `min_c integral |F_rho - F_nu - c| dx`, attained at a median of the CDF difference.
fn circle_w1(rho: &GridDensity, nu: &GridDensity) -> f64 {
    let grid = rho.grid();
    let h = grid.h();
    let mut d = Vec::with_capacity(grid.n() + 1);
    let mut acc = 0.0;
    d.push(0.0);
    for (r, v) in rho.values().iter().zip(nu.values()) {
        acc += (r - v) * h;
        d.push(acc);
    }
    let below = |c: f64| -> f64 {
        d.windows(2)
            .map(|w| {
                let (lo, hi) = (w[0].min(w[1]), w[0].max(w[1]));
                if c <= lo {
                    0.0
                } else if c >= hi {
                    h
                } else {
                    h * (c - lo) / (hi - lo)
                }
            })
            .sum()
    };
    let (mut lo, mut hi) = d.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let half = 0.5 * grid.length();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if below(mid) < half {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * (1.0 + hi.abs()) {
            break;
        }
    }
    let c = 0.5 * (lo + hi);
    d.windows(2).map(|w| segment_power(h, w[0] - c, w[1] - c, 1)).sum()
}

/// `W_p(rho, nu)` for `p` in `{1, 2}`.
pub fn wasserstein(rho: &GridDensity, nu: &GridDensity, p: u32) -> Result<f64> {
    check_p(p)?;
    rho.grid().same_as(nu.grid())?;
    let m = default_resolution(rho.grid().n());
    if rho.grid().is_circle() {
        if p == 1 {
            return Ok(circle_w1(rho, nu));
        }
        let (_, c) = circle_shift(&to_quantile(rho, m)?, &to_quantile(nu, m)?)?;
        return Ok(c.max(0.0).sqrt());
    }
    let c = quantile_cost(&to_quantile(rho, m)?, &to_quantile(nu, m)?, p);
    Ok(if p == 2 { c.max(0.0).sqrt() } else { c })
}

/// Density of `((1 - t) id + t S)_# rho` with `S` the optimal map from `rho` to `nu`.
pub fn mccann_interpolate(rho: &GridDensity, nu: &GridDensity, t: f64) -> Result<GridDensity> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Contract(format!("interpolation time {t} outside [0, 1]")));
    }
    rho.grid().same_as(nu.grid())?;
    let q = geodesic_quantile(rho, nu, t)?;
    from_quantile(&q, rho.grid())
}

/// Quantile of the McCann interpolant at time `t`.
pub fn geodesic_quantile(rho: &GridDensity, nu: &GridDensity, t: f64) -> Result<QuantileFn> {
    let m = default_resolution(rho.grid().n());
    let mut a = to_quantile(rho, m)?;
    let b = to_quantile(nu, m)?;
    if rho.grid().is_circle() {
        let (alpha, _) = circle_shift(&a, &b)?;
        a = a.shifted(alpha)?;
    }
    combine(&a, &b, |x, y| (1.0 - t) * x + t * y)
}

/// A map sampled at cell centers, extended piecewise linearly. On the circle the
/// extension uses `T(x + length) = T(x) + length`; on the interval the end
/// segments are extended linearly.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportMap {
    grid: Grid,
    values: Vec<f64>,
}

impl TransportMap {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::Contract(format!("{} map values for {} cells", values.len(), grid.n())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("map has non-finite values".into()));
        }
        Ok(TransportMap { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.centers().into_iter().map(f).collect();
        TransportMap { grid, values }
    }

    pub fn identity(grid: Grid) -> Self {
        Self::from_fn(grid, |x| x)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Interpolation knots `(x, T(x))` covering one period (circle) or `[0, length]`.
    fn knots(&self) -> Vec<(f64, f64)> {
        let g = &self.grid;
        let n = g.n();
        let l = g.length();
        let mut k: Vec<(f64, f64)> = (0..n).map(|i| (g.center(i), self.values[i])).collect();
        if g.is_circle() {
            k.insert(0, (g.center(n - 1) - l, self.values[n - 1] - l));
            k.push((g.center(0) + l, self.values[0] + l));
        } else {
            let (x0, t0, x1, t1) = (k[0].0, k[0].1, k[1].0, k[1].1);
            k.insert(0, (0.0, t0 - (t1 - t0) / (x1 - x0) * x0));
            let (xa, ta, xb, tb) = (k[n - 1].0, k[n - 1].1, k[n].0, k[n].1);
            k.push((l, tb + (tb - ta) / (xb - xa) * (l - xb)));
        }
        k
    }
}

/// Push-forward `T_# rho`, computed as the quantile composition `T o g_rho` with
/// extra knots wherever `g_rho` crosses a sample point of `T`.
pub fn displace(rho: &GridDensity, map: &TransportMap) -> Result<GridDensity> {
    rho.grid().same_as(&map.grid)?;
    let grid = rho.grid();
    let l = grid.length();
    let q = to_quantile(rho, default_resolution(grid.n()))?;
    let knots = map.knots();
    let xs: Vec<f64> = knots.iter().map(|k| k.0).collect();
    let eval = |x: f64| -> f64 {
        let (y, lift) = if grid.is_circle() {
            let turns = ((x - xs[0]) / l).floor();
            (x - turns * l, turns * l)
        } else {
            (x, 0.0)
        };
        let j = xs.partition_point(|&v| v <= y).clamp(1, xs.len() - 1);
        let (xa, ta) = knots[j - 1];
        let (xb, tb) = knots[j];
        ta + (tb - ta) * (y - xa) / (xb - xa) + lift
    };
    let mut pieces = Vec::new();
    for p in q.pieces() {
        let mut cuts = vec![p.s0];
        if p.g1 > p.g0 {
            let first = grid.cell_of(p.g0);
            let mut i = first;
            loop {
                let c = grid.center(i);
                if c > p.g0 && c < p.g1 {
                    cuts.push(p.s0 + (c - p.g0) / (p.g1 - p.g0) * (p.s1 - p.s0));
                }
                if c >= p.g1 || i + 1 == grid.n() {
                    break;
                }
                i += 1;
            }
        }
        cuts.push(p.s1);
        for w in cuts.windows(2) {
            if w[1] > w[0] {
                pieces.push(Piece { s0: w[0], s1: w[1], g0: eval(p.at(w[0])), g1: eval(p.at(w[1])) });
            }
        }
    }
    for w in pieces.windows(2) {
        if w[1].g0 < w[0].g1 - 1e-12 * l {
            return Err(Error::Contract("transport map is not nondecreasing on the support".into()));
        }
    }
    if let Some(p) = pieces.iter().find(|p| p.g1 < p.g0 - 1e-12 * l) {
        return Err(Error::Contract(format!("transport map decreases near x = {}", p.g0)));
    }
    let out = QuantileFn::from_pieces(grid.domain(), q.resolution(), &pieces)?;
    from_quantile(&out, grid)
}

/// `sum_k W_2(rho_k, rho_{k+1})^2 / (t_{k+1} - t_k)`: a lower bound for
/// `integral |rho'|^2 dt` along any curve through the samples (twice the
/// Benamou-Brenier action). Refining the sample set never decreases it.
pub fn action_b2(samples: &[(f64, GridDensity)]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Contract("action needs at least two samples".into()));
    }
    let mut total = 0.0;
    for w in samples.windows(2) {
        let dt = w[1].0 - w[0].0;
        if !(dt > 0.0) {
            return Err(Error::Contract(format!("sample times must increase strictly ({} then {})", w[0].0, w[1].0)));
        }
        let d = wasserstein(&w[0].1, &w[1].1, 2)?;
        total += d * d / dt;
    }
    Ok(total)
}
