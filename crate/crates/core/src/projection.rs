//! Wasserstein-2 projection onto the capped set `{rho <= 1}`.
//!
//! In quantile coordinates the cap reads `g' >= 1`. Writing `h = g - s` turns
//! the feasible set into nondecreasing `h` with a constant box `[0, length - 1]`
//! (interval) or a bound `length - 1` on the total range (circle, where the
//! projected measure may also rotate). The weighted least-squares fit is then an
//! isotonic regression, solved exactly by pool-adjacent-violators.
//!
//! The optimal map from the projection back to the input is `id + grad p`. On a
//! saturated run the projected quantile has slope one, so `x` and the level `s`
//! advance together and `p` is the running integral of `g_hat - g*` in `s`.
//! Pool-adjacent-violators makes every prefix of a pooled block carry
//! nonnegative mass-weighted residual, which is why that integral stays
//! nonnegative. A run touching a wall is anchored at its free end. A run with
//! two free ends blends both anchored integrals linearly, so that both ends vanish.
//! The result is averaged per cell and restricted to saturated cells.

use crate::error::{Error, Result};
use crate::grid::GridDensity;
use crate::io::fmt17;
use crate::isotonic::{pav_box, pav_range};
use crate::quantile::{default_resolution, deposit, from_quantile, to_quantile, QuantileFn};
use crate::transport::quantile_cost;

/// Cells at or above this value belong to the saturated set.
pub const SATURATION_LEVEL: f64 = 1.0 - 1e-8;
/// A projected cell "keeps the input value" within this tolerance.
pub const UNCHANGED_TOL: f64 = 1e-8;
/// Cells per saturated component allowed to be neither saturated nor unchanged.
pub const BOUNDARY_ALLOWANCE: usize = 2;

/// Per-cell pressure, nonnegative and supported on the saturated set.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureField {
    values: Vec<f64>,
}

impl PressureField {
    pub fn zeros(n: usize) -> Self {
        PressureField { values: vec![0.0; n] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Pressure for time step `tau` (the unit-step field divided by `tau`).
    pub fn scaled(&self, tau: f64) -> Self {
        PressureField { values: self.values.iter().map(|p| p / tau).collect() }
    }

    /// `sum p_i (1 - rho_i) h`.
    pub fn complementarity(&self, rho: &GridDensity) -> f64 {
        let h = rho.grid().h();
        self.values.iter().zip(rho.values()).map(|(p, r)| p * (1.0 - r)).sum::<f64>() * h
    }
}

/// Outcome of the saturation dichotomy audit.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturationAudit {
    pub mask: Vec<bool>,
    /// Maximal runs of saturated cells as `(first cell, length)`; runs may wrap on a circle.
    pub components: Vec<(usize, usize)>,
    /// Cells that are neither saturated nor equal to the input.
    pub mixed_cells: Vec<usize>,
}

impl SaturationAudit {
    pub fn within_allowance(&self) -> bool {
        self.mixed_cells.len() <= BOUNDARY_ALLOWANCE * self.components.len()
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionResult {
    pub input: GridDensity,
    pub projected: GridDensity,
    /// Pressure for a unit time step; see [`PressureField::scaled`].
    pub pressure: PressureField,
    pub audit: SaturationAudit,
    pub input_quantile: QuantileFn,
    pub projected_quantile: QuantileFn,
    /// `input_quantile - projected_quantile`, knot by knot.
    pub displacement: Vec<f64>,
    pub w2_moved: f64,
}

impl ProjectionResult {
    pub fn mask(&self) -> &[bool] {
        &self.audit.mask
    }

    /// Quantile of `(id + lambda grad p)_# projected`: `g* + lambda (g_hat - g*)`.
    pub fn displaced_quantile(&self, lambda: f64) -> Result<QuantileFn> {
        let g: Vec<f64> = self
            .projected_quantile
            .values()
            .iter()
            .zip(&self.displacement)
            .map(|(g, d)| g + lambda * d)
            .collect();
        self.projected_quantile.with_values(g)
    }

    /// `x,rho_in,rho_out,p,saturated` rows.
    pub fn to_csv(&self, tau: f64) -> String {
        let g = self.input.grid();
        let p = self.pressure.scaled(tau);
        let mut out = String::from("x,rho_in,rho_out,p,saturated\n");
        for i in 0..g.n() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt17(g.center(i)),
                fmt17(self.input.values()[i]),
                fmt17(self.projected.values()[i]),
                fmt17(p.values()[i]),
                u8::from(self.audit.mask[i])
            ));
        }
        out
    }
}

/// Least-squares projection of a quantile function onto `{g' >= 1}` within the
/// domain, using lumped level weights. Knots are preserved; knots whose fit is
/// unchanged keep their exact input value.
pub fn cone_project_quantile(q: &QuantileFn) -> Result<QuantileFn> {
    let domain = q.domain();
    let l = domain.length();
    if l < 1.0 {
        return Err(Error::Contract(format!("length {l} < 1 leaves no feasible density")));
    }
    let s = q.levels();
    let y: Vec<f64> = q.values().iter().zip(s).map(|(g, s)| g - s).collect();
    let w = q.knot_weights();
    let fit = if domain.is_circle() { pav_range(&y, &w, l - 1.0) } else { pav_box(&y, &w, 0.0, l - 1.0) };
    let g: Vec<f64> = fit
        .iter()
        .zip(&y)
        .zip(q.values().iter().zip(s))
        .map(|((f, yk), (gk, sk))| if f == yk { *gk } else { f + sk })
        .collect();
    q.with_values(g)
}

/// Projection of `mu` onto `{rho <= 1}` with its pressure and saturation audit.
pub fn project_k(mu: &GridDensity) -> Result<ProjectionResult> {
    let grid = *mu.grid();
    let q_hat = to_quantile(mu, default_resolution(grid.n()))?;
    if mu.sup_violation() <= 0.0 {
        let audit = saturation_set_unchecked(mu, mu);
        return Ok(ProjectionResult {
            input: mu.clone(),
            projected: mu.clone(),
            pressure: PressureField::zeros(grid.n()),
            audit,
            displacement: vec![0.0; q_hat.len()],
            projected_quantile: q_hat.clone(),
            input_quantile: q_hat,
            w2_moved: 0.0,
        });
    }
    let q_star = cone_project_quantile(&q_hat)?;
    let projected = from_quantile(&q_star, &grid)?;
    let displacement: Vec<f64> = q_hat.values().iter().zip(q_star.values()).map(|(a, b)| a - b).collect();
    let w2_moved = quantile_cost(&q_hat, &q_star, 2).max(0.0).sqrt();
    let audit = saturation_set_unchecked(&projected, mu);
    let mut result = ProjectionResult {
        input: mu.clone(),
        projected,
        pressure: PressureField::zeros(grid.n()),
        audit,
        input_quantile: q_hat,
        projected_quantile: q_star,
        displacement,
        w2_moved,
    };
    result.pressure = recover_pressure(&result, 1.0)?;
    Ok(result)
}

/// Pressure `p >= 0` with `grad p = (g_hat - g*) / tau` on the saturated set and
/// `p = 0` at its free boundaries.
pub fn recover_pressure(result: &ProjectionResult, tau: f64) -> Result<PressureField> {
    if !(tau > 0.0) {
        return Err(Error::Contract(format!("time step must be positive (got {tau})")));
    }
    let grid = *result.projected.grid();
    let n = grid.n();
    let l = grid.length();
    if result.w2_moved == 0.0 {
        return Ok(PressureField::zeros(n));
    }
    let q = &result.projected_quantile;
    let (s, g, d) = (q.levels(), q.values(), &result.displacement);
    let k_last = s.len() - 1;
    let tol = 1e-12 * l.max(1.0);
    // Saturated runs are maximal chains of knots joined by slope-one pieces.
    let sat = |k: usize| ((g[k + 1] - g[k]) - (s[k + 1] - s[k])).abs() <= tol;
    let mut chains: Vec<Vec<usize>> = Vec::new();
    let mut k = 0;
    while k < k_last {
        if sat(k) {
            let mut chain = vec![k];
            while k < k_last && sat(k) {
                k += 1;
                chain.push(k);
            }
            chains.push(chain);
        } else {
            k += 1;
        }
    }
    // On a circle the first and last chains meet across the seam when the support has no gap.
    if grid.is_circle() && chains.len() >= 2 && chains[0][0] == 0 {
        let last = chains.len() - 1;
        if *chains[last].last().unwrap() == k_last && g[k_last] - g[0] >= l - tol {
            let head = chains.remove(0);
            chains.last_mut().unwrap().extend(head);
        }
    }
    // The isotonic fit is optimal for the lumped knot weights, so the weighted
    // prefix sums of the displacement along a chain are nonnegative (suffix sums
    // nonpositive); each knot takes the midpoint of the sums on either side.
    let w = q.knot_weights();
    let mut potential = vec![0.0; s.len()];
    let mut scale: f64 = 0.0;
    for chain in &chains {
        let m = chain.len();
        let mut from_left = vec![0.0; m];
        let mut pos = vec![0.0; m];
        let mut acc = 0.0;
        for j in 0..m {
            let c = w[chain[j]] * d[chain[j]];
            from_left[j] = acc + 0.5 * c;
            acc += c;
            if j + 1 < m && chain[j + 1] == chain[j] + 1 {
                pos[j + 1] = pos[j] + s[chain[j + 1]] - s[chain[j]];
            } else if j + 1 < m {
                // Seam junction: the last knot and knot 0 are the same point.
                pos[j + 1] = pos[j];
            }
        }
        let total = acc;
        let width = pos[m - 1];
        let first = chain[0];
        let last = chain[m - 1];
        let left_free = grid.is_circle() || !(first == 0 && g[0] <= tol);
        let right_free = grid.is_circle() || !(last == k_last && g[k_last] >= l - tol);
        for j in 0..m {
            let from_right = from_left[j] - total;
            let p = match (left_free, right_free) {
                (true, true) if width > 0.0 => {
                    let theta = pos[j] / width;
                    (1.0 - theta) * from_left[j] + theta * from_right
                }
                (true, true) => 0.0,
                (true, false) => from_left[j],
                (false, true) => from_right,
                (false, false) => return Err(Error::numerical("saturated set covers the whole domain")),
            };
            potential[chain[j]] = p;
            scale = scale.max(p.abs());
        }
    }
    for p in &mut potential {
        if *p < -(1e-10 * scale).max(1e-14) {
            return Err(Error::numerical(format!(
                "recovered pressure {p:e} is negative (scale {scale:e}): the displacement is not optimal"
            )));
        }
        *p = p.max(0.0);
    }
    let dep = deposit(q, &grid, Some(&potential))?;
    let mask = &result.audit.mask;
    let values = (0..n)
        .map(|i| if mask[i] && dep.mass[i] > 0.0 { dep.weighted[i] / dep.mass[i] / tau } else { 0.0 })
        .collect();
    Ok(PressureField { values })
}

fn saturation_set_unchecked(projected: &GridDensity, input: &GridDensity) -> SaturationAudit {
    let n = projected.grid().n();
    let circle = projected.grid().is_circle();
    let mask: Vec<bool> = projected.values().iter().map(|&v| v >= SATURATION_LEVEL).collect();
    let mixed_cells = (0..n)
        .filter(|&i| !mask[i] && (projected.values()[i] - input.values()[i]).abs() > UNCHANGED_TOL)
        .collect();
    let components = runs(&mask, circle);
    SaturationAudit { mask, components, mixed_cells }
}

/// Maximal runs of `true` as `(start, len)`; on a circle a run may wrap.
fn runs(mask: &[bool], circle: bool) -> Vec<(usize, usize)> {
    let n = mask.len();
    if mask.iter().all(|&b| b) {
        return vec![(0, n)];
    }
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if mask[i] && (i == 0 || !mask[i - 1]) {
            let mut j = i;
            while j < n && mask[j] {
                j += 1;
            }
            out.push((i, j - i));
            i = j;
        } else {
            i += 1;
        }
    }
    if circle && out.len() >= 2 {
        let first = out[0];
        let last = out[out.len() - 1];
        if first.0 == 0 && last.0 + last.1 == n {
            out.remove(0);
            let k = out.len() - 1;
            out[k].1 += first.1;
        }
    }
    out
}

/// Saturated set `{rho* >= 1 - 1e-8}` and the dichotomy audit `rho* = 1_B + mu 1_{B^c}`.
pub fn saturation_set(projected: &GridDensity, input: &GridDensity) -> Result<SaturationAudit> {
    projected.grid().same_as(input.grid())?;
    let audit = saturation_set_unchecked(projected, input);
    if !audit.within_allowance() {
        return Err(Error::numerical(format!(
            "{} cells are neither saturated nor unchanged across {} saturated components",
            audit.mixed_cells.len(),
            audit.components.len()
        )));
    }
    Ok(audit)
}

/// CSV of a projection for the default unit step.
pub fn projection_csv(result: &ProjectionResult) -> String {
    result.to_csv(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_density, Domain, Grid, Profile};

    fn interval(n: usize) -> Grid {
        Grid::new(Domain::interval(2.0).unwrap(), n).unwrap()
    }

    #[test]
    fn feasible_input_is_untouched() {
        let g = interval(64);
        for mu in [
            GridDensity::uniform(g),
            make_density(g, &Profile::Block { a: 0.0, b: 1.0, height: 1.0 }).unwrap(),
        ] {
            let r = project_k(&mu).unwrap();
            assert_eq!(r.projected, mu);
            assert_eq!(r.pressure.max(), 0.0);
            assert_eq!(r.w2_moved, 0.0);
        }
        let mu = GridDensity::uniform(g);
        assert!(project_k(&mu).unwrap().audit.components.is_empty());
    }

    #[test]
    fn cone_examples() {
        let d = Domain::interval(2.0).unwrap();
        let half = QuantileFn::from_knots(d, 4, vec![0.0, 0.25, 0.5, 0.75, 1.0], vec![0.0, 0.125, 0.25, 0.375, 0.5]).unwrap();
        let p = cone_project_quantile(&half).unwrap();
        for (s, g) in p.levels().iter().zip(p.values()) {
            assert!((g - s).abs() < 1e-15);
        }
        let two = QuantileFn::from_knots(d, 2, vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(cone_project_quantile(&two).unwrap(), two);
    }

    #[test]
    fn block_closed_form() {
        let g = interval(200);
        let mu = make_density(g, &Profile::Block { a: 0.0, b: 0.5, height: 2.0 }).unwrap();
        let r = project_k(&mu).unwrap();
        let target = make_density(g, &Profile::Block { a: 0.0, b: 1.0, height: 1.0 }).unwrap();
        assert!(r.projected.l1_distance(&target).unwrap() < 1e-12);
        assert!((r.w2_moved - (1.0f64 / 12.0).sqrt()).abs() < 1e-12);
        for i in 0..200 {
            let x = g.center(i);
            let expect = if x < 1.0 { (1.0 - x * x) / 4.0 } else { 0.0 };
            assert!((r.pressure.values()[i] - expect).abs() < 1e-4, "x={x}");
        }
        let mask = r.mask();
        assert!(mask[..100].iter().all(|&b| b) && mask[100..].iter().all(|&b| !b));
        assert!(r.pressure.complementarity(&r.projected).abs() <= 1e-8 * r.pressure.max());
        let p2 = recover_pressure(&r, 0.5).unwrap();
        assert!((p2.max() - 2.0 * r.pressure.max()).abs() < 1e-12);
    }

    #[test]
    fn projection_is_idempotent_and_feasible() {
        for seed in 0..20 {
            let g = interval(48);
            let mu = make_density(g, &Profile::Random { pieces: 9, seed }).unwrap();
            let spiky = GridDensity::normalized(g, mu.values().iter().map(|v| v * v * v).collect()).unwrap();
            let r = project_k(&spiky).unwrap();
            assert!(r.projected.sup_violation() <= 1e-10);
            assert!((r.projected.mass() - 1.0).abs() < 1e-12);
            let again = project_k(&r.projected).unwrap();
            assert!(again.projected.l1_distance(&r.projected).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn circle_projection_can_straddle_the_seam() {
        let c = Grid::new(Domain::circle(2.0).unwrap(), 80).unwrap();
        let mut v = vec![0.0; 80];
        v[0] = 1.0;
        v[79] = 1.0;
        let mu = GridDensity::normalized(c, v).unwrap();
        let r = project_k(&mu).unwrap();
        assert!(r.projected.sup_violation() <= 1e-10);
        // Saturated arc of length 1 centred on the seam.
        let expect = GridDensity::normalized(
            c,
            (0..80).map(|i| if c.center(i) < 0.5 || c.center(i) > 1.5 { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        assert!(r.projected.l1_distance(&expect).unwrap() < 1e-9, "{:?}", r.projected.values());
        assert_eq!(r.audit.components.len(), 1);
        let p = r.pressure.values();
        assert!((p[0] - p[79]).abs() < 1e-9 && p[0] > 0.0);
        assert!(p.iter().enumerate().all(|(i, &v)| (v > 0.0) == r.mask()[i] || v == 0.0));
    }

    #[test]
    fn runs_wrap_on_circle() {
        assert_eq!(runs(&[true, false, true, true], true), vec![(2, 3)]);
        assert_eq!(runs(&[true, false, true, true], false), vec![(0, 1), (2, 2)]);
        assert_eq!(runs(&[false, true, true, false], true), vec![(1, 2)]);
    }
}
