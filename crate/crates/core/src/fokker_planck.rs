//! Finite-volume solver for `d_t rho - rho'' + (rho u)' = 0` with zero total flux
//! through the walls of an interval (or periodic on a circle).
//!
//! Each substep first moves mass with explicit first-order upwind fluxes, then
//! applies one backward-Euler diffusion solve. Both parts are written in flux
//! form, so mass is conserved to rounding; under the CFL bound `|u| delta <= h/2`
//! both are monotone, so densities stay nonnegative.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{raw_mass, Domain, Grid, GridDensity};
use crate::io::csv;

/// Drift families with closed-form norms.
#[derive(Debug, Clone, PartialEq)]
pub enum DriftPreset {
    Zero,
    Constant(f64),
    /// `kappa sin(m pi x / length + phi)` on an interval and
    /// `kappa sin(2 pi m x / length + phi)` on a circle (so that it is periodic).
    Sine { kappa: f64, m: u32, phi: f64 },
    /// `u = -slope`, the negative gradient of `slope * x`.
    NegGradLinear { slope: f64 },
    /// `u = -kappa (x - center)`.
    NegGradQuadratic { center: f64, kappa: f64 },
    /// Cell values per time knot; knot `j` applies on `[times[j], times[j+1])`.
    Tabulated { times: Vec<f64>, values: Vec<Vec<f64>> },
}

/// Piecewise-constant factor multiplying the drift: `factors[j]` on `[knots[j], knots[j+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeModulation {
    knots: Vec<f64>,
    factors: Vec<f64>,
}

impl TimeModulation {
    pub fn new(knots: Vec<f64>, factors: Vec<f64>) -> Result<Self> {
        if knots.is_empty() || knots.len() != factors.len() || knots[0] != 0.0 {
            return Err(Error::Contract("modulation needs matching knots and factors starting at t = 0".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) || factors.iter().any(|f| !f.is_finite()) {
            return Err(Error::Contract("modulation knots must increase and factors be finite".into()));
        }
        Ok(TimeModulation { knots, factors })
    }

    pub fn factor(&self, t: f64) -> f64 {
        let j = self.knots.partition_point(|&k| k <= t).max(1) - 1;
        self.factors[j]
    }

    fn max_abs(&self) -> f64 {
        self.factors.iter().fold(0.0, |a, f| a.max(f.abs()))
    }
}

/// Bounds on the drift. `certified` is false when the derivative norms were
/// estimated from tabulated data rather than known in closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftNorms {
    pub sup: f64,
    pub div: f64,
    pub second: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftField {
    domain: Domain,
    preset: DriftPreset,
    modulation: Option<TimeModulation>,
}

impl DriftField {
    pub fn new(domain: Domain, preset: DriftPreset) -> Result<Self> {
        let finite = |x: f64| x.is_finite();
        let ok = match &preset {
            DriftPreset::Zero => true,
            DriftPreset::Constant(c) => finite(*c),
            DriftPreset::Sine { kappa, m, phi } => finite(*kappa) && finite(*phi) && *m >= 1,
            DriftPreset::NegGradLinear { slope } => finite(*slope),
            DriftPreset::NegGradQuadratic { center, kappa } => finite(*center) && finite(*kappa),
            DriftPreset::Tabulated { times, values } => {
                if times.is_empty() || times.len() != values.len() || times[0] != 0.0 {
                    return Err(Error::Contract("tabulated drift needs one value row per time knot, starting at 0".into()));
                }
                let n = values[0].len();
                times.windows(2).all(|w| w[1] > w[0])
                    && n >= 8
                    && values.iter().all(|row| row.len() == n && row.iter().all(|v| v.is_finite()))
            }
        };
        if !ok {
            return Err(Error::Contract(format!("invalid drift parameters: {preset:?}")));
        }
        Ok(DriftField { domain, preset, modulation: None })
    }

    pub fn zero(domain: Domain) -> Self {
        DriftField { domain, preset: DriftPreset::Zero, modulation: None }
    }

    pub fn with_modulation(mut self, m: TimeModulation) -> Self {
        self.modulation = Some(m);
        self
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn preset(&self) -> &DriftPreset {
        &self.preset
    }

    pub fn modulation(&self) -> Option<&TimeModulation> {
        self.modulation.as_ref()
    }

    fn factor(&self, t: f64) -> f64 {
        self.modulation.as_ref().map_or(1.0, |m| m.factor(t))
    }

    fn wave_number(&self, m: u32) -> f64 {
        let l = self.domain.length();
        if self.domain.is_circle() {
            2.0 * PI * m as f64 / l
        } else {
            PI * m as f64 / l
        }
    }

    /// `u(x, t)` for closed-form presets; tabulated drifts use the cell containing `x`.
    pub fn eval(&self, x: f64, t: f64) -> f64 {
        let f = self.factor(t);
        f * match &self.preset {
            DriftPreset::Zero => 0.0,
            DriftPreset::Constant(c) => *c,
            DriftPreset::Sine { kappa, m, phi } => kappa * (self.wave_number(*m) * x + phi).sin(),
            DriftPreset::NegGradLinear { slope } => -slope,
            DriftPreset::NegGradQuadratic { center, kappa } => -kappa * (x - center),
            DriftPreset::Tabulated { times, values } => {
                let row = &values[times.partition_point(|&k| k <= t).max(1) - 1];
                let n = row.len();
                let h = self.domain.length() / n as f64;
                row[((x / h).floor().max(0.0) as usize).min(n - 1)]
            }
        }
    }

    /// Velocities at the faces used by the flux: `n + 1` faces on an interval
    /// (the two walls included), `n` on a circle (face `i` is the left face of cell `i`).
    pub fn face_velocities(&self, grid: &Grid, t: f64) -> Result<Vec<f64>> {
        if grid.domain() != self.domain {
            return Err(Error::DomainMismatch("drift and grid live on different domains".into()));
        }
        let n = grid.n();
        let faces = if grid.is_circle() { n } else { n + 1 };
        if let DriftPreset::Tabulated { times, values } = &self.preset {
            let row = &values[times.partition_point(|&k| k <= t).max(1) - 1];
            if row.len() != n {
                return Err(Error::Contract(format!("tabulated drift has {} cells, grid has {n}", row.len())));
            }
            let f = self.factor(t);
            return Ok((0..faces)
                .map(|i| {
                    let left = if i == 0 { if grid.is_circle() { row[n - 1] } else { row[0] } } else { row[i - 1] };
                    let right = if i == n { row[n - 1] } else { row[i] };
                    f * 0.5 * (left + right)
                })
                .collect());
        }
        Ok((0..faces).map(|i| self.eval(grid.face(i), t)).collect())
    }

    /// `sup |u|`, `sup |u'|` and `sup |u''|` over space and time.
    pub fn norms(&self) -> DriftNorms {
        let f = self.modulation.as_ref().map_or(1.0, TimeModulation::max_abs);
        let l = self.domain.length();
        let (sup, div, second, certified) = match &self.preset {
            DriftPreset::Zero => (0.0, 0.0, 0.0, true),
            DriftPreset::Constant(c) => (c.abs(), 0.0, 0.0, true),
            DriftPreset::Sine { kappa, m, .. } => {
                let k = self.wave_number(*m);
                (kappa.abs(), kappa.abs() * k, kappa.abs() * k * k, true)
            }
            DriftPreset::NegGradLinear { slope } => (slope.abs(), 0.0, 0.0, true),
            DriftPreset::NegGradQuadratic { center, kappa } => {
                (kappa.abs() * center.abs().max((l - center).abs()), kappa.abs(), 0.0, true)
            }
            DriftPreset::Tabulated { values, .. } => {
                let mut s: f64 = 0.0;
                let mut d1: f64 = 0.0;
                let mut d2: f64 = 0.0;
                for row in values {
                    let n = row.len();
                    let h = l / n as f64;
                    let at = |i: isize| -> f64 {
                        if self.domain.is_circle() {
                            row[i.rem_euclid(n as isize) as usize]
                        } else {
                            row[i.clamp(0, n as isize - 1) as usize]
                        }
                    };
                    for i in 0..n as isize {
                        s = s.max(at(i).abs());
                        d1 = d1.max(((at(i + 1) - at(i)) / h).abs());
                        d2 = d2.max(((at(i + 1) - 2.0 * at(i) + at(i - 1)) / (h * h)).abs());
                    }
                }
                (s, d1, d2, false)
            }
        };
        DriftNorms { sup: f * sup, div: f * div, second: f * second, certified }
    }

    /// Zero normal velocity at the walls (always true on a circle).
    pub fn boundary_compatible(&self) -> bool {
        if self.domain.is_circle() {
            return true;
        }
        let l = self.domain.length();
        match &self.preset {
            DriftPreset::Zero => true,
            DriftPreset::Constant(c) => *c == 0.0,
            DriftPreset::Sine { kappa, phi, .. } => *kappa == 0.0 || phi.sin().abs() < 1e-12,
            DriftPreset::NegGradLinear { slope } => *slope == 0.0,
            DriftPreset::NegGradQuadratic { kappa, .. } => *kappa == 0.0 || l == 0.0,
            DriftPreset::Tabulated { values, .. } => {
                values.iter().all(|row| row[0].abs() < 1e-12 && row[row.len() - 1].abs() < 1e-12)
            }
        }
    }
}

/// Diagnostics of one call to [`fp_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpStepReport {
    pub substeps: usize,
    pub substep: f64,
    pub max_cfl: f64,
    pub mass_drift: f64,
    pub min_density: f64,
    pub entropy_before: f64,
    pub entropy_after: f64,
    /// `1/2 integral integral |-rho'/rho + u|^2 rho` over the step.
    pub dissipation: f64,
    /// `1/2 integral integral |u|^2 rho` over the step.
    pub drift_energy: f64,
    /// `integral ||rho||_inf^2 dt` over the step.
    pub linf_sq_integral: f64,
    pub boundary_compatible: bool,
}

impl FpStepReport {
    /// Concatenation of consecutive reports.
    pub fn merge(&self, next: &FpStepReport) -> FpStepReport {
        FpStepReport {
            substeps: self.substeps + next.substeps,
            substep: self.substep.min(next.substep),
            max_cfl: self.max_cfl.max(next.max_cfl),
            mass_drift: self.mass_drift + next.mass_drift,
            min_density: self.min_density.min(next.min_density),
            entropy_before: self.entropy_before,
            entropy_after: next.entropy_after,
            dissipation: self.dissipation + next.dissipation,
            drift_energy: self.drift_energy + next.drift_energy,
            linf_sq_integral: self.linf_sq_integral + next.linf_sq_integral,
            boundary_compatible: self.boundary_compatible && next.boundary_compatible,
        }
    }
}

/// Constant-coefficient `(I - r L)` with Neumann ends or periodic wrap,
/// factorized once and solved by the Thomas algorithm (plus Sherman-Morrison on a circle).
struct DiffusionSolver {
    r: f64,
    periodic: bool,
    cprime: Vec<f64>,
    inv_denom: Vec<f64>,
    /// Periodic only: `A'^{-1} e` and the scalar `1 + v.z`.
    z: Vec<f64>,
    corner: f64,
    sm_denom: f64,
}

impl DiffusionSolver {
    fn new(n: usize, r: f64, periodic: bool) -> Self {
        let mut s = DiffusionSolver { r, periodic, cprime: vec![0.0; n], inv_denom: vec![0.0; n], z: vec![], corner: 0.0, sm_denom: 1.0 };
        let b = 1.0 + 2.0 * r;
        let (b0, bn) = if periodic {
            // A = A' + e e^T * gamma-scaled corner terms: A'[0][0] = b - gamma, A'[n-1][n-1] = b - r^2/gamma.
            let gamma = -b;
            s.corner = gamma;
            (b - gamma, b - r * r / gamma)
        } else {
            (1.0 + r, 1.0 + r)
        };
        let diag = |i: usize| if i == 0 { b0 } else if i == n - 1 { bn } else { b };
        let mut prev_c = 0.0;
        for i in 0..n {
            let denom = diag(i) - if i == 0 { 0.0 } else { -r * prev_c };
            s.inv_denom[i] = 1.0 / denom;
            let c = if i + 1 < n { -r / denom } else { 0.0 };
            s.cprime[i] = c;
            prev_c = c;
        }
        if periodic {
            let gamma = s.corner;
            let mut u = vec![0.0; n];
            u[0] = gamma;
            u[n - 1] = -r;
            s.z = s.thomas(&u);
            // v = (1, 0, ..., 0, -r / gamma)
            let vz = s.z[0] + (-r / gamma) * s.z[n - 1];
            s.sm_denom = 1.0 + vz;
        }
        s
    }

    fn thomas(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let r = self.r;
        let mut d = vec![0.0; n];
        for i in 0..n {
            let prev = if i == 0 { 0.0 } else { d[i - 1] };
            d[i] = (rhs[i] + r * prev) * self.inv_denom[i];
        }
        for i in (0..n - 1).rev() {
            d[i] -= self.cprime[i] * d[i + 1];
        }
        d
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let y = self.thomas(rhs);
        if !self.periodic {
            return y;
        }
        let n = rhs.len();
        let vy = y[0] + (-self.r / self.corner) * y[n - 1];
        let k = vy / self.sm_denom;
        y.iter().zip(&self.z).map(|(a, b)| a - k * b).collect()
    }
}

/// Substep size: the largest `Delta / N` not exceeding `min(Delta, h / (2 |u|), h^2)`.
pub fn substep_count(grid: &Grid, drift_sup: f64, delta: f64) -> usize {
    let h = grid.h();
    let mut cap = delta.min(h * h);
    if drift_sup > 0.0 {
        cap = cap.min(0.5 * h / drift_sup);
    }
    ((delta / cap) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// Advances `rho` by `delta` starting at time `t0`; `observe` sees every
/// intermediate density as `(substep index, time, values)`.
pub fn fp_step_observed(
    rho: &GridDensity,
    u: &DriftField,
    t0: f64,
    delta: f64,
    mut observe: impl FnMut(usize, f64, &[f64]),
) -> Result<(GridDensity, FpStepReport)> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Contract(format!("step length must be positive (got {delta})")));
    }
    let grid = *rho.grid();
    if grid.domain() != u.domain() {
        return Err(Error::DomainMismatch("drift and density live on different domains".into()));
    }
    let n = grid.n();
    let h = grid.h();
    let periodic = grid.is_circle();
    let sup = u.norms().sup;
    let steps = substep_count(&grid, sup, delta);
    let dt = delta / steps as f64;
    let solver = DiffusionSolver::new(n, dt / (h * h), periodic);
    let centers = grid.centers();
    let static_drift = u.modulation().is_none() && !matches!(u.preset(), DriftPreset::Tabulated { .. });
    let mut faces = u.face_velocities(&grid, t0)?;

    let mass0 = rho.mass();
    let mut report = FpStepReport {
        substeps: steps,
        substep: dt,
        max_cfl: 0.0,
        mass_drift: 0.0,
        min_density: rho.min_value(),
        entropy_before: rho.entropy(),
        entropy_after: 0.0,
        dissipation: 0.0,
        drift_energy: 0.0,
        linf_sq_integral: 0.0,
        boundary_compatible: u.boundary_compatible(),
    };
    let mut v = rho.values().to_vec();
    let mut flux = vec![0.0; n + 1];
    observe(0, t0, &v);
    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        if k > 0 && !static_drift {
            faces = u.face_velocities(&grid, t)?;
        }
        // Upwind advection. flux[i] crosses the left face of cell i; flux[n] the right wall.
        for i in 0..=n {
            flux[i] = if periodic {
                let f = faces[i % n];
                let (l, r) = (v[(i + n - 1) % n], v[i % n]);
                f * if f > 0.0 { l } else { r }
            } else if i == 0 || i == n {
                0.0
            } else {
                let f = faces[i];
                f * if f > 0.0 { v[i - 1] } else { v[i] }
            };
        }
        let cfl = faces.iter().fold(0.0f64, |a, f| a.max(f.abs())) * dt / h;
        report.max_cfl = report.max_cfl.max(cfl);
        let adv: Vec<f64> = (0..n).map(|i| v[i] - dt / h * (flux[i + 1] - flux[i])).collect();
        v = solver.solve(&adv);
        for (i, x) in v.iter_mut().enumerate() {
            if !x.is_finite() {
                return Err(Error::numerical(format!("non-finite density in cell {i}")));
            }
            if *x < 0.0 {
                if *x < -1e-12 {
                    return Err(Error::numerical(format!("density {x:e} in cell {i} is negative")));
                }
                *x = 0.0;
            }
        }
        let tn = t + dt;
        // Rectangle rule on the post-substep state, velocities frozen at the substep start.
        let nf = if periodic { n } else { n - 1 };
        let mut diss = 0.0;
        for j in 0..nf {
            let (a, b) = (v[j], v[(j + 1) % n]);
            let mean = 0.5 * (a + b);
            if mean < 1e-12 {
                continue;
            }
            let uf = faces[(j + 1) % faces.len()];
            let w = -(b - a) / (h * mean) + uf;
            diss += w * w * mean * h;
        }
        report.dissipation += 0.5 * dt * diss;
        let kin: f64 = if static_drift && faces.iter().all(|f| *f == 0.0) {
            0.0
        } else {
            (0..n).map(|i| u.eval(centers[i], t).powi(2) * v[i]).sum::<f64>() * h
        };
        report.drift_energy += 0.5 * dt * kin;
        let linf = v.iter().copied().fold(0.0, f64::max);
        report.linf_sq_integral += dt * linf * linf;
        report.min_density = report.min_density.min(v.iter().copied().fold(f64::INFINITY, f64::min));
        observe(k + 1, tn, &v);
    }
    report.mass_drift = (raw_mass(&grid, &v) - mass0).abs();
    let out = GridDensity::from_raw(grid, v);
    report.entropy_after = out.entropy();
    Ok((out, report))
}

pub fn fp_step(rho: &GridDensity, u: &DriftField, t0: f64, delta: f64) -> Result<(GridDensity, FpStepReport)> {
    fp_step_observed(rho, u, t0, delta, |_, _, _| {})
}

/// One solution sample: `(t, density, report of the segment ending at t)`.
pub type FpSnapshot = (f64, GridDensity, FpStepReport);

/// Solves on `[0, horizon]`, stepping between consecutive snapshot times (plus
/// the horizon). Each returned report covers the segment since the previous snapshot.
pub fn fp_solve(rho0: &GridDensity, u: &DriftField, horizon: f64, snapshot_times: &[f64]) -> Result<Vec<FpSnapshot>> {
    if !(horizon > 0.0) {
        return Err(Error::Contract(format!("horizon must be positive (got {horizon})")));
    }
    let mut times: Vec<f64> = snapshot_times.iter().copied().filter(|&t| t > 0.0 && t < horizon).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times.push(horizon);
    let mut out = Vec::with_capacity(times.len());
    let mut rho = rho0.clone();
    let mut t = 0.0;
    for &next in &times {
        let (r, rep) = fp_step(&rho, u, t, next - t)?;
        out.push((next, r.clone(), rep));
        rho = r;
        t = next;
    }
    Ok(out)
}

/// `t,mass,entropy,tv,linf,dissipation` rows, starting with the initial state.
pub fn fp_report_csv(rho0: &GridDensity, snapshots: &[FpSnapshot]) -> String {
    let first = vec![0.0, rho0.mass(), rho0.entropy(), rho0.total_variation(), rho0.linf(), 0.0];
    csv(
        &["t", "mass", "entropy", "tv", "linf", "dissipation"],
        std::iter::once(first).chain(
            snapshots.iter().map(|(t, r, rep)| vec![*t, r.mass(), r.entropy(), r.total_variation(), r.linf(), rep.dissipation]),
        ),
    )
}

/// One sample of the total-variation audit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvSample {
    pub t: f64,
    pub tv: f64,
    /// `graph_length(rho_t, 1)`.
    pub graph_length: f64,
    /// `integral_0^t ||rho_s||_inf^2 ds`.
    pub linf_sq_integral: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TvGrowthReport {
    pub samples: Vec<TvSample>,
    /// `||u|| + ||u'|| + ||u''||`; `None` when the drift has no certified bounds.
    pub tv_constant: Option<f64>,
    /// `length (||u||^2 + ||u'||^2) / 2`, the constant of the graph-length bound.
    pub graph_constant: Option<f64>,
}

impl TvGrowthReport {
    /// `C (t - s) + e^{C (t - s)} TV(rho_s)` for samples `s_idx <= t_idx`.
    pub fn tv_bound(&self, s_idx: usize, t_idx: usize) -> Option<f64> {
        let c = self.tv_constant?;
        let dt = self.samples[t_idx].t - self.samples[s_idx].t;
        Some(c * dt + (c * dt).exp() * self.samples[s_idx].tv)
    }

    /// Largest `TV(rho_t) / bound(s, t)` over all ordered sample pairs.
    pub fn worst_tv_ratio(&self) -> Option<f64> {
        let mut worst: f64 = 0.0;
        for t in 0..self.samples.len() {
            for s in 0..=t {
                let b = self.tv_bound(s, t)?;
                let tv = self.samples[t].tv;
                worst = worst.max(if b > 0.0 { tv / b } else if tv > 1e-12 { f64::INFINITY } else { 0.0 });
            }
        }
        Some(worst)
    }

    /// `graph_length(rho_0) + C t + C * integral ||rho||^2` at sample `idx` (eps = 1).
    pub fn graph_bound(&self, idx: usize) -> Option<f64> {
        let c = self.graph_constant?;
        let s = self.samples[idx];
        Some(self.samples[0].graph_length + c * s.t + c * s.linf_sq_integral)
    }
}

/// Runs the flow through `times` and records TV and graph length. Bounds are
/// attached only for drifts with closed-form regularity.
pub fn tv_growth_check(rho0: &GridDensity, u: &DriftField, times: &[f64]) -> Result<TvGrowthReport> {
    if !u.boundary_compatible() {
        return Err(Error::Contract(
            "the total-variation bound needs a drift with zero normal component at the walls".into(),
        ));
    }
    let mut ts: Vec<f64> = times.iter().copied().filter(|&t| t > 0.0).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let norms = u.norms();
    let l = rho0.grid().length();
    let mut samples = vec![TvSample { t: 0.0, tv: rho0.total_variation(), graph_length: rho0.graph_length(1.0), linf_sq_integral: 0.0 }];
    let mut rho = rho0.clone();
    let mut t = 0.0;
    let mut acc = 0.0;
    for next in ts {
        let (r, rep) = fp_step(&rho, u, t, next - t)?;
        acc += rep.linf_sq_integral;
        samples.push(TvSample { t: next, tv: r.total_variation(), graph_length: r.graph_length(1.0), linf_sq_integral: acc });
        rho = r;
        t = next;
    }
    let (tv_constant, graph_constant) = if norms.certified {
        (
            Some(norms.sup + norms.div + norms.second),
            Some(0.5 * l * (norms.sup * norms.sup + norms.div * norms.div)),
        )
    } else {
        (None, None)
    };
    Ok(TvGrowthReport { samples, tv_constant, graph_constant })
}
