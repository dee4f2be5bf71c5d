//! Piecewise-linear quantile functions (inverse CDFs) and the exact conversions
//! between them and cell-averaged densities.
//!
//! A [`QuantileFn`] is stored as knots `(s_k, g_k)` with `s` running from 0 to 1.
//! Between consecutive knots with `s_{k+1} > s_k` the function is linear; two knots
//! sharing the same `s` encode a jump (a gap in the support). The knot set always
//! contains the uniform levels `j / M` and, when built from a density, every CDF
//! breakpoint, so piecewise-constant densities are represented without error.

use crate::error::{Error, Result};
use crate::grid::{Domain, Grid, GridDensity};

/// Relative tolerance for monotonicity checks on knot values.
const MONO_TOL: f64 = 1e-12;

/// One linear piece of a quantile function over `[s0, s1]`, `s1 > s0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub s0: f64,
    pub s1: f64,
    pub g0: f64,
    pub g1: f64,
}

impl Piece {
    pub fn at(&self, s: f64) -> f64 {
        if s <= self.s0 {
            self.g0
        } else if s >= self.s1 {
            self.g1
        } else {
            self.g0 + (self.g1 - self.g0) * (s - self.s0) / (self.s1 - self.s0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFn {
    domain: Domain,
    resolution: usize,
    s: Vec<f64>,
    g: Vec<f64>,
}

impl QuantileFn {
    /// Builds from knots, validating `s` (nondecreasing, from 0 to 1, at most two
    /// knots per level) and monotonicity of `g`. Rounding-level decreases are
    /// flattened; real decreases are a contract violation.
    pub fn from_knots(domain: Domain, resolution: usize, s: Vec<f64>, mut g: Vec<f64>) -> Result<Self> {
        if s.len() != g.len() || s.len() < 2 {
            return Err(Error::Contract(format!("need matching knot vectors of length >= 2 (got {} and {})", s.len(), g.len())));
        }
        if s[0] != 0.0 || s[s.len() - 1] != 1.0 {
            return Err(Error::Contract(format!("levels must run from 0 to 1 (got {} .. {})", s[0], s[s.len() - 1])));
        }
        for k in 1..s.len() {
            if !(s[k] >= s[k - 1]) {
                return Err(Error::Contract(format!("levels decrease at knot {k}")));
            }
            if k >= 2 && s[k] == s[k - 2] {
                return Err(Error::Contract(format!("three knots share level {}", s[k])));
            }
        }
        let scale = domain.length();
        for k in 1..g.len() {
            if !g[k].is_finite() {
                return Err(Error::Contract(format!("non-finite quantile value at knot {k}")));
            }
            if g[k] < g[k - 1] {
                if g[k - 1] - g[k] > MONO_TOL * scale {
                    return Err(Error::Contract(format!(
                        "quantile decreases at s = {} ({} -> {})",
                        s[k],
                        g[k - 1],
                        g[k]
                    )));
                }
                g[k] = g[k - 1];
            }
        }
        if !domain.is_circle() {
            let tol = 1e-9 * scale;
            if g[0] < -tol || g[g.len() - 1] > scale + tol {
                return Err(Error::Contract(format!(
                    "quantile range [{}, {}] leaves [0, {scale}]",
                    g[0],
                    g[g.len() - 1]
                )));
            }
            for v in &mut g {
                *v = v.clamp(0.0, scale);
            }
        } else if g[g.len() - 1] - g[0] > scale * (1.0 + 1e-9) {
            return Err(Error::Contract(format!("lifted quantile spans {} > circumference", g[g.len() - 1] - g[0])));
        }
        Ok(QuantileFn { domain, resolution, s, g })
    }

    /// Builds from contiguous pieces (output of a merge or a shift).
    pub(crate) fn from_pieces(domain: Domain, resolution: usize, pieces: &[Piece]) -> Result<Self> {
        let mut s = Vec::with_capacity(pieces.len() + 1);
        let mut g = Vec::with_capacity(pieces.len() + 1);
        for p in pieces {
            let n = s.len();
            let same = n > 0 && s[n - 1] == p.s0 && g[n - 1] == p.g0;
            if !same {
                if n >= 2 && s[n - 1] == p.s0 && s[n - 2] == p.s0 {
                    // collapse a third knot on one level into the jump target
                    g[n - 1] = p.g0;
                } else {
                    s.push(p.s0);
                    g.push(p.g0);
                }
            }
            s.push(p.s1);
            g.push(p.g1);
        }
        if let Some(first) = s.first_mut() {
            *first = 0.0;
        }
        if let Some(last) = s.last_mut() {
            *last = 1.0;
        }
        Self::from_knots(domain, resolution, s, g)
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Number of uniform levels `j / M` included among the knots.
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn levels(&self) -> &[f64] {
        &self.s
    }

    pub fn values(&self) -> &[f64] {
        &self.g
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Same knots, new values.
    pub fn with_values(&self, g: Vec<f64>) -> Result<Self> {
        Self::from_knots(self.domain, self.resolution, self.s.clone(), g)
    }

    /// Linear pieces of positive level width.
    pub fn pieces(&self) -> impl Iterator<Item = Piece> + '_ {
        self.s.windows(2).zip(self.g.windows(2)).filter(|(s, _)| s[1] > s[0]).map(|(s, g)| Piece {
            s0: s[0],
            s1: s[1],
            g0: g[0],
            g1: g[1],
        })
    }

    /// Lumped (trapezoid) weight of each knot: half the level width of its two
    /// neighbouring pieces. The weights sum to 1.
    pub fn knot_weights(&self) -> Vec<f64> {
        let n = self.s.len();
        (0..n)
            .map(|k| {
                let left = if k > 0 { self.s[k] - self.s[k - 1] } else { 0.0 };
                let right = if k + 1 < n { self.s[k + 1] - self.s[k] } else { 0.0 };
                0.5 * (left + right)
            })
            .collect()
    }

    /// Right-continuous evaluation.
    pub fn eval(&self, s: f64) -> f64 {
        let k = self.s.partition_point(|&v| v <= s);
        if k == 0 {
            return self.g[0];
        }
        if k >= self.s.len() {
            return self.g[self.g.len() - 1];
        }
        let (s0, s1) = (self.s[k - 1], self.s[k]);
        let (g0, g1) = (self.g[k - 1], self.g[k]);
        if s1 > s0 {
            g0 + (g1 - g0) * (s - s0) / (s1 - s0)
        } else {
            g1
        }
    }

    /// `s -> G(s + alpha)` on `[0, 1]` for a circle, using the lift `G(s + 1) = G(s) + length`.
    pub fn shifted(&self, alpha: f64) -> Result<Self> {
        let l = self.domain.length();
        let k = alpha.floor();
        let f = alpha - k;
        let lift = k * l;
        let mut pieces = Vec::with_capacity(self.s.len() + 2);
        // levels [f, 1] move to [0, 1 - f]
        for p in self.pieces() {
            if p.s1 <= f {
                continue;
            }
            let a = p.s0.max(f);
            pieces.push(Piece { s0: a - f, s1: p.s1 - f, g0: p.at(a) + lift, g1: p.g1 + lift });
        }
        // levels [0, f] move to [1 - f, 1] one turn up
        for p in self.pieces() {
            if p.s0 >= f {
                break;
            }
            let b = p.s1.min(f);
            pieces.push(Piece { s0: p.s0 + 1.0 - f, s1: b + 1.0 - f, g0: p.g0 + lift + l, g1: p.at(b) + lift + l });
        }
        pieces.retain(|p| p.s1 > p.s0);
        Self::from_pieces(self.domain, self.resolution, &pieces)
    }

    /// Writes `s,g` rows (one per knot).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,g\n");
        for (s, g) in self.s.iter().zip(&self.g) {
            out.push_str(&format!("{},{}\n", crate::io::fmt17(*s), crate::io::fmt17(*g)));
        }
        out
    }
}

/// Pieces of two quantile functions over their common refinement:
/// `(s0, s1, a(s0+), a(s1-), b(s0+), b(s1-))`.
pub(crate) fn merge(a: &QuantileFn, b: &QuantileFn) -> Vec<(f64, f64, f64, f64, f64, f64)> {
    let pa: Vec<Piece> = a.pieces().collect();
    let pb: Vec<Piece> = b.pieces().collect();
    let mut out = Vec::with_capacity(pa.len() + pb.len());
    let (mut i, mut j) = (0, 0);
    let mut lo = 0.0;
    while i < pa.len() && j < pb.len() {
        let hi = pa[i].s1.min(pb[j].s1);
        if hi > lo {
            out.push((lo, hi, pa[i].at(lo), pa[i].at(hi), pb[j].at(lo), pb[j].at(hi)));
        }
        lo = hi;
        if pa[i].s1 <= hi {
            i += 1;
        }
        if pb[j].s1 <= hi {
            j += 1;
        }
    }
    out
}

/// Combines two quantile functions knot-by-knot over their common refinement.
pub(crate) fn combine(a: &QuantileFn, b: &QuantileFn, f: impl Fn(f64, f64) -> f64) -> Result<QuantileFn> {
    let pieces: Vec<Piece> = merge(a, b)
        .into_iter()
        .map(|(s0, s1, a0, a1, b0, b1)| Piece { s0, s1, g0: f(a0, b0), g1: f(a1, b1) })
        .collect();
    QuantileFn::from_pieces(a.domain, a.resolution.max(b.resolution), &pieces)
}

/// Default quantile resolution for an `n`-cell grid.
pub fn default_resolution(n: usize) -> usize {
    4 * n
}

/// Exact inverse of the piecewise-linear CDF of `rho`. Knots are the levels
/// `j / m` together with the cumulative masses at cell faces.
pub fn to_quantile(rho: &GridDensity, m: usize) -> Result<QuantileFn> {
    let grid = rho.grid();
    if m < grid.n() {
        return Err(Error::Contract(format!("resolution {m} below cell count {}", grid.n())));
    }
    let h = grid.h();
    let masses: Vec<f64> = rho.values().iter().map(|v| v * h).collect();
    let total: f64 = masses.iter().sum();
    let mut s = Vec::with_capacity(m + grid.n() + 2);
    let mut g = Vec::with_capacity(m + grid.n() + 2);
    let mut cum = 0.0;
    let mut next_level = 1usize;
    let eps = 1e-14;
    for (i, &mi) in masses.iter().enumerate() {
        if mi <= 0.0 {
            continue;
        }
        let a = grid.face(i);
        let b = grid.face(i + 1);
        let s0 = cum / total;
        let s1 = (cum + mi) / total;
        if s1 <= s0 {
            // Mass below the level resolution of f64 carries no quantile width.
            cum += mi;
            continue;
        }
        match g.last() {
            None => {
                s.push(0.0);
                g.push(a);
            }
            Some(&x) if x < a => {
                s.push(s0);
                g.push(a);
            }
            _ => {}
        }
        let slope = (b - a) / (s1 - s0);
        while next_level < m && (next_level as f64) / (m as f64) < s1 - eps {
            let lv = next_level as f64 / m as f64;
            if lv > s0 + eps {
                s.push(lv);
                g.push((a + (lv - s0) * slope).min(b));
            }
            next_level += 1;
        }
        s.push(s1);
        g.push(b);
        cum += mi;
    }
    if s.is_empty() {
        return Err(Error::InvalidDensity("density has no mass".into()));
    }
    let last = s.len() - 1;
    s[last] = 1.0;
    QuantileFn::from_knots(grid.domain(), m, s, g)
}

/// Per-cell sums of level measure (`mass`) and of `integral w ds` (`weighted`) over
/// the levels whose quantile lands in each cell. `w` shares the knots of `q`.
pub(crate) struct Deposit {
    pub mass: Vec<f64>,
    pub weighted: Vec<f64>,
}

pub(crate) fn deposit(q: &QuantileFn, grid: &Grid, w: Option<&[f64]>) -> Result<Deposit> {
    if q.domain() != grid.domain() {
        return Err(Error::DomainMismatch("quantile and grid live on different domains".into()));
    }
    let n = grid.n();
    let h = grid.h();
    let l = grid.length();
    let mut mass = vec![0.0; n];
    let mut weighted = vec![0.0; n];
    let tiny = 1e-15 * l;
    for k in 0..q.s.len().saturating_sub(1) {
        let (s0, s1) = (q.s[k], q.s[k + 1]);
        if s1 <= s0 {
            continue;
        }
        let (g0, g1) = (q.g[k], q.g[k + 1]);
        let (w0, w1) = w.map(|w| (w[k], w[k + 1])).unwrap_or((0.0, 0.0));
        let wat = |s: f64| w0 + (w1 - w0) * (s - s0) / (s1 - s0);
        if g1 - g0 <= tiny {
            let c = grid.cell_of(0.5 * (g0 + g1));
            mass[c] += s1 - s0;
            weighted[c] += 0.5 * (s1 - s0) * (w0 + w1);
            continue;
        }
        let s_at = |x: f64| s0 + (x - g0) / (g1 - g0) * (s1 - s0);
        // Split into sub-ranges that each lie in one period, then walk cells.
        let mut x = g0;
        let mut sa = s0;
        let mut turn = if grid.is_circle() { (g0 / l).floor() } else { 0.0 };
        loop {
            let base = turn * l;
            let seg_end = if grid.is_circle() { g1.min(base + l) } else { g1 };
            let mut cell = (((x - base) / h).floor().max(0.0) as usize).min(n - 1);
            loop {
                let face = base + (cell + 1) as f64 * h;
                let last = cell == n - 1 || face >= seg_end;
                let xb = if last { seg_end } else { face };
                let sb = if xb >= g1 { s1 } else { s_at(xb) };
                if sb > sa {
                    mass[cell] += sb - sa;
                    weighted[cell] += 0.5 * (sb - sa) * (wat(sa) + wat(sb));
                }
                sa = sb;
                if last {
                    break;
                }
                cell += 1;
            }
            if !grid.is_circle() || seg_end >= g1 {
                break;
            }
            x = seg_end;
            turn += 1.0;
        }
    }
    Ok(Deposit { mass, weighted })
}

/// Density of the measure whose quantile is `q`: `rho_i = |{s : q(s) in cell i}| / h`.
pub fn from_quantile(q: &QuantileFn, grid: &Grid) -> Result<GridDensity> {
    let d = deposit(q, grid, None)?;
    let h = grid.h();
    Ok(GridDensity::from_raw(*grid, d.mass.into_iter().map(|m| m / h).collect()))
}
