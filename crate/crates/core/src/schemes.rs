//! Time-discrete drivers: the splitting scheme (Fokker-Planck step, then
//! projection), its three interpolating curves, the circle variant built from a
//! push-forward and a Gaussian convolution, and the JKO step solved in quantile
//! coordinates.

use crate::error::{Error, Result};
use crate::fokker_planck::{fp_step, fp_step_observed, DriftField, DriftPreset, FpStepReport};
use crate::grid::{Domain, Grid, GridDensity};
use crate::io::csv;
use crate::isotonic::pav_box;
use crate::projection::{project_k, PressureField, ProjectionResult};
use crate::quantile::{default_resolution, from_quantile, to_quantile, QuantileFn};
use crate::transport::wasserstein;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SchemeOptions {
    /// Keep every `rho_{k+1}`, `rho~_{k+1}` and pressure (needed for interpolation).
    pub keep_densities: bool,
}

/// Per-step measurements of the splitting scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub k: usize,
    /// End time `(k + 1) tau`.
    pub t: f64,
    pub mass: f64,
    pub entropy_prev: f64,
    pub entropy_tilde: f64,
    pub entropy: f64,
    pub tv: f64,
    pub linf: f64,
    pub linf_tilde: f64,
    /// `W_1(rho_k, rho_{k+1})`.
    pub w1_inc: f64,
    /// `W_2(rho_k, rho_{k+1})`.
    pub w2_inc: f64,
    /// `W_2(rho_k, rho~_{k+1})`.
    pub w2_tilde: f64,
    /// `W_2(rho~_{k+1}, rho_{k+1})`.
    pub w2_moved: f64,
    /// Running `sum W_2(rho_j, rho_{j+1})^2 / tau`.
    pub action_lb: f64,
    pub p_max: f64,
    pub compl_resid: f64,
    pub sup_viol: f64,
    pub mixed_cells: usize,
    pub components: usize,
    pub fp: FpStepReport,
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub diag: StepDiagnostics,
    pub rho_tilde: Option<GridDensity>,
    pub rho_next: Option<GridDensity>,
    /// Pressure for the scheme's time step.
    pub pressure: Option<PressureField>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub drift: DriftField,
    pub tau: f64,
    pub horizon: f64,
    pub rho0: GridDensity,
    pub steps: Vec<StepRecord>,
    pub final_density: GridDensity,
}

impl Trajectory {
    pub fn grid(&self) -> &Grid {
        self.rho0.grid()
    }

    pub fn diagnostics(&self) -> Vec<StepDiagnostics> {
        self.steps.iter().map(|s| s.diag).collect()
    }

    /// `rho_k`, the state at time `k tau`.
    pub fn density(&self, k: usize) -> Result<&GridDensity> {
        if k == 0 {
            return Ok(&self.rho0);
        }
        if k == self.steps.len() {
            return Ok(&self.final_density);
        }
        self.steps
            .get(k - 1)
            .and_then(|s| s.rho_next.as_ref())
            .ok_or_else(|| Error::Contract(format!("density {k} was not kept (enable keep_densities)")))
    }

    fn tilde(&self, k: usize) -> Result<&GridDensity> {
        self.steps[k]
            .rho_tilde
            .as_ref()
            .ok_or_else(|| Error::Contract("intermediate densities were not kept (enable keep_densities)".into()))
    }
}

/// Rounding allowance on the cap for the initial density (normalization error).
pub const INITIAL_CAP_TOL: f64 = 1e-12;

/// Number of steps of length `tau` that fit in `horizon`.
pub fn step_count(tau: f64, horizon: f64) -> usize {
    (horizon / tau + 1e-9).floor() as usize
}

/// Runs the splitting scheme and calls `observe(k, rho~_{k+1}, projection, diagnostics)` after every step.
pub fn main_scheme_run_observed(
    rho0: &GridDensity,
    u: &DriftField,
    tau: f64,
    horizon: f64,
    opts: SchemeOptions,
    mut observe: impl FnMut(usize, &GridDensity, &ProjectionResult, &StepDiagnostics),
) -> Result<Trajectory> {
    if !(tau > 0.0 && tau <= horizon && horizon.is_finite()) {
        return Err(Error::Contract(format!("need 0 < tau <= horizon (tau = {tau}, horizon = {horizon})")));
    }
    if rho0.sup_violation() > INITIAL_CAP_TOL {
        return Err(Error::Contract(format!(
            "initial density exceeds the cap by {:e}",
            rho0.sup_violation()
        )));
    }
    let steps = step_count(tau, horizon);
    let mut records = Vec::with_capacity(steps);
    let mut rho = rho0.clone();
    let mut action = 0.0;
    for k in 0..steps {
        let t0 = k as f64 * tau;
        let (tilde, fp) = fp_step(&rho, u, t0, tau).map_err(|e| e.at_step(k))?;
        let proj = project_k(&tilde).map_err(|e| e.at_step(k))?;
        let next = proj.projected.clone();
        let pressure = proj.pressure.scaled(tau);
        let w2_inc = wasserstein(&rho, &next, 2).map_err(|e| e.at_step(k))?;
        action += w2_inc * w2_inc / tau;
        let diag = StepDiagnostics {
            k,
            t: (k + 1) as f64 * tau,
            mass: next.mass(),
            entropy_prev: rho.entropy(),
            entropy_tilde: fp.entropy_after,
            entropy: next.entropy(),
            tv: next.total_variation(),
            linf: next.linf(),
            linf_tilde: tilde.linf(),
            w1_inc: wasserstein(&rho, &next, 1)?,
            w2_inc,
            w2_tilde: wasserstein(&rho, &tilde, 2)?,
            w2_moved: proj.w2_moved,
            action_lb: action,
            p_max: pressure.max(),
            compl_resid: pressure.complementarity(&next),
            sup_viol: next.sup_violation(),
            mixed_cells: proj.audit.mixed_cells.len(),
            components: proj.audit.components.len(),
            fp,
        };
        if diag.sup_viol > 1e-10 {
            return Err(Error::numerical(format!("projected density exceeds the cap by {:e}", diag.sup_viol)).at_step(k));
        }
        observe(k, &tilde, &proj, &diag);
        records.push(StepRecord {
            diag,
            rho_tilde: opts.keep_densities.then_some(tilde),
            rho_next: opts.keep_densities.then(|| next.clone()),
            pressure: opts.keep_densities.then_some(pressure),
        });
        rho = next;
    }
    Ok(Trajectory { drift: u.clone(), tau, horizon, rho0: rho0.clone(), steps: records, final_density: rho })
}

pub fn main_scheme_run(rho0: &GridDensity, u: &DriftField, tau: f64, horizon: f64, opts: SchemeOptions) -> Result<Trajectory> {
    main_scheme_run_observed(rho0, u, tau, horizon, opts, |_, _, _, _| {})
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    /// Fokker-Planck at double speed on the first half step, then the pressure
    /// displacement back onto `rho_{k+1}` on the second half.
    First,
    /// Fokker-Planck at natural speed, jumping to `rho_k` at each `k tau`.
    Second,
    /// Piecewise constant, `rho_{k+1}` on `[k tau, (k+1) tau)`.
    Third,
}

/// Fokker-Planck state at time `s` in `[0, tau]` after `rho_k`, replayed on the
/// original substep grid and interpolated linearly between substeps.
fn replay_fp(traj: &Trajectory, k: usize, s: f64) -> Result<GridDensity> {
    let rho_k = traj.density(k)?;
    let t0 = k as f64 * traj.tau;
    let mut below: Option<(f64, Vec<f64>)> = None;
    let mut above: Option<(f64, Vec<f64>)> = None;
    fp_step_observed(rho_k, &traj.drift, t0, traj.tau, |_, t, v| {
        let rel = t - t0;
        if rel <= s {
            below = Some((rel, v.to_vec()));
        } else if above.is_none() {
            above = Some((rel, v.to_vec()));
        }
    })?;
    let (a, va) = below.ok_or_else(|| Error::numerical("replay produced no states"))?;
    let v = match above {
        Some((b, vb)) if b > a && s > a => {
            let w = (s - a) / (b - a);
            va.iter().zip(&vb).map(|(x, y)| (1.0 - w) * x + w * y).collect()
        }
        _ => va,
    };
    Ok(GridDensity::from_raw(*rho_k.grid(), v))
}

/// Evaluates one of the interpolating curves at `t` in `[0, N tau]`.
pub fn interpolation_eval(traj: &Trajectory, which: Interpolation, t: f64) -> Result<GridDensity> {
    let tau = traj.tau;
    let n = traj.steps.len();
    let end = n as f64 * tau;
    if !(t >= 0.0 && t <= end * (1.0 + 1e-12)) {
        return Err(Error::Contract(format!("time {t} outside [0, {end}]")));
    }
    let mut k = (t / tau).floor() as usize;
    if (k + 1) as f64 * tau - t <= 1e-12 * tau {
        k += 1;
    }
    if k >= n {
        return Ok(traj.final_density.clone());
    }
    let theta = (t - k as f64 * tau).max(0.0);
    match which {
        Interpolation::Third => Ok(traj.density(k + 1)?.clone()),
        Interpolation::Second => replay_fp(traj, k, theta),
        Interpolation::First => {
            if theta < 0.5 * tau {
                replay_fp(traj, k, 2.0 * theta)
            } else {
                let proj = project_k(traj.tilde(k)?)?;
                let lambda = 2.0 * ((k + 1) as f64 * tau - t) / tau;
                let q = proj.displaced_quantile(lambda.clamp(0.0, 1.0))?;
                from_quantile(&q, traj.grid())
            }
        }
    }
}

/// Column names of every diagnostics table.
pub const DIAGNOSTICS_COLUMNS: [&str; 11] =
    ["t", "mass", "entropy", "tv", "linf", "w1_inc", "w2_inc", "action_lb", "p_max", "compl_resid", "sup_viol"];

/// [`DIAGNOSTICS_COLUMNS`] rows with a first row for the initial state.
pub fn diagnostics_csv(rho0: &GridDensity, diags: &[StepDiagnostics]) -> String {
    let first = vec![
        0.0,
        rho0.mass(),
        rho0.entropy(),
        rho0.total_variation(),
        rho0.linf(),
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        rho0.sup_violation(),
    ];
    csv(
        &DIAGNOSTICS_COLUMNS,
        std::iter::once(first).chain(diags.iter().map(|d| {
            vec![d.t, d.mass, d.entropy, d.tv, d.linf, d.w1_inc, d.w2_inc, d.action_lb, d.p_max, d.compl_resid, d.sup_viol]
        })),
    )
}

/// The per-step time series of a completed run.
pub fn trajectory_diagnostics(traj: &Trajectory) -> Vec<StepDiagnostics> {
    traj.diagnostics()
}

// ---------------------------------------------------------------------------
// Push-forward and Gaussian convolution on the circle.

fn require_circle(domain: Domain, what: &str) -> Result<()> {
    if domain.is_circle() {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "{what} needs a periodic domain: the Gaussian convolution is only defined on the circle"
        )))
    }
}

/// `(id + tau u(., t))_# rho`, computed on the quantile knots.
pub fn variant1_push(rho: &GridDensity, u: &DriftField, tau: f64, t: f64) -> Result<GridDensity> {
    let grid = *rho.grid();
    require_circle(grid.domain(), "the convolution variant")?;
    let lip = u.norms().div;
    if tau * lip >= 1.0 {
        return Err(Error::Contract(format!("tau * |u'| = {} >= 1: the push-forward map is not monotone", tau * lip)));
    }
    let q = to_quantile(rho, default_resolution(grid.n()))?;
    let g: Vec<f64> = q.values().iter().map(|&x| x + tau * u.eval(grid.wrap(x), t)).collect();
    if g.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::numerical("push-forward map lost monotonicity on the quantile knots"));
    }
    let pushed = q.with_values(g)?;
    from_quantile(&pushed, &grid)
}

/// Wrapped heat kernel at time `tau` (variance `2 tau`), integrated exactly over
/// cell pairs, truncated at six standard deviations and renormalized.
pub fn heat_convolve(rho: &GridDensity, tau: f64) -> Result<GridDensity> {
    let grid = *rho.grid();
    require_circle(grid.domain(), "the heat-kernel convolution")?;
    let n = grid.n();
    let h = grid.h();
    let sigma = (2.0 * tau).sqrt();
    let cdf = |z: f64| 0.5 * (1.0 + libm::erf(z / (sigma * std::f64::consts::SQRT_2)));
    let pdf = |z: f64| (-(z * z) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    // Antiderivative of the Gaussian CDF.
    let psi = |z: f64| z * cdf(z) + sigma * sigma * pdf(z);
    let reach = (6.0 * sigma / h).ceil() as i64 + 1;
    let mut weights = vec![0.0; n];
    for d in -reach..=reach {
        // Mass fraction sent from a uniform cell to the cell d positions away.
        let c = d as f64 * h;
        let w = (psi(c + h) - 2.0 * psi(c) + psi(c - h)) / h;
        weights[d.rem_euclid(n as i64) as usize] += w;
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let v = rho.values();
    let out: Vec<f64> = (0..n)
        .map(|i| (0..n).filter(|&d| weights[d] != 0.0).map(|d| weights[d] * v[(i + n - d) % n]).sum())
        .collect();
    Ok(GridDensity::from_raw(grid, out))
}

/// One step of the convolution variant: push-forward, heat kernel, projection.
pub fn variant1_step(rho: &GridDensity, u: &DriftField, tau: f64, t: f64) -> Result<GridDensity> {
    let pushed = variant1_push(rho, u, tau, t)?;
    let smoothed = heat_convolve(&pushed, tau)?;
    Ok(project_k(&smoothed)?.projected)
}

pub fn variant1_run(rho0: &GridDensity, u: &DriftField, tau: f64, horizon: f64) -> Result<Vec<(f64, GridDensity)>> {
    let steps = step_count(tau, horizon);
    let mut out = Vec::with_capacity(steps + 1);
    let mut rho = rho0.clone();
    out.push((0.0, rho.clone()));
    for k in 0..steps {
        rho = variant1_step(&rho, u, tau, k as f64 * tau).map_err(|e| e.at_step(k))?;
        out.push(((k + 1) as f64 * tau, rho.clone()));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// JKO step in quantile coordinates.

/// External potential `V` of the JKO energy `integral V rho + integral rho log rho`.
#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    Linear { slope: f64 },
    Quadratic { center: f64, kappa: f64 },
    /// Values at cell centers of a grid on `[0, length]`, interpolated linearly.
    Tabulated { length: f64, values: Vec<f64> },
}

impl Potential {
    /// The potential whose negative gradient is the given drift.
    pub fn from_drift(u: &DriftField) -> Result<Self> {
        match u.preset() {
            DriftPreset::Zero => Ok(Potential::Linear { slope: 0.0 }),
            DriftPreset::NegGradLinear { slope } => Ok(Potential::Linear { slope: *slope }),
            DriftPreset::Constant(c) => Ok(Potential::Linear { slope: -c }),
            DriftPreset::NegGradQuadratic { center, kappa } => Ok(Potential::Quadratic { center: *center, kappa: *kappa }),
            other => Err(Error::Contract(format!("drift {other:?} is not the gradient of a supported potential"))),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            Potential::Linear { slope } => slope * x,
            Potential::Quadratic { center, kappa } => 0.5 * kappa * (x - center) * (x - center),
            Potential::Tabulated { .. } => {
                let (j, w, v) = self.tab_locate(x);
                (1.0 - w) * v[j] + w * v[j + 1]
            }
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Potential::Linear { slope } => *slope,
            Potential::Quadratic { center, kappa } => kappa * (x - center),
            Potential::Tabulated { length, values } => {
                let h = length / values.len() as f64;
                let (j, w, v) = self.tab_locate(x);
                if w <= 0.0 || w >= 1.0 {
                    0.0
                } else {
                    (v[j + 1] - v[j]) / h
                }
            }
        }
    }

    /// `V''`, constant for every supported potential (zero for piecewise-linear tables).
    pub fn curvature(&self) -> f64 {
        match self {
            Potential::Quadratic { kappa, .. } => *kappa,
            _ => 0.0,
        }
    }

    fn tab_locate(&self, x: f64) -> (usize, f64, &[f64]) {
        let Potential::Tabulated { length, values } = self else { unreachable!() };
        let n = values.len();
        let h = length / n as f64;
        let pos = (x / h - 0.5).clamp(0.0, (n - 1) as f64);
        let j = (pos.floor() as usize).min(n - 2);
        (j, pos - j as f64, values)
    }
}

/// A quantile function on the uniform levels `j / M`.
#[derive(Debug, Clone, PartialEq)]
pub struct JkoState {
    domain: Domain,
    g: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JkoStepReport {
    pub iterations: usize,
    /// `J(rho_k) = integral V rho_k + E(rho_k)` in quantile coordinates.
    pub energy_before: f64,
    pub energy_after: f64,
    /// `W_2(rho_k, rho_{k+1})^2`.
    pub w2_sq: f64,
    /// Norm of the final gradient mapping.
    pub residual: f64,
}

/// The log term is extended quadratically below this slope ratio.
const LOG_KNEE: f64 = 0.5;

/// `-ln r` with its first and second derivatives.
fn neg_log(r: f64) -> (f64, f64, f64) {
    if r >= LOG_KNEE {
        (-r.ln(), -1.0 / r, 1.0 / (r * r))
    } else {
        let d = r - LOG_KNEE;
        let k2 = 1.0 / (LOG_KNEE * LOG_KNEE);
        (-LOG_KNEE.ln() - d / LOG_KNEE + 0.5 * k2 * d * d, -1.0 / LOG_KNEE + k2 * d, k2)
    }
}

impl JkoState {
    /// Samples the quantile of `rho` at `m + 1` uniform levels.
    pub fn from_density(rho: &GridDensity, m: usize) -> Result<Self> {
        let domain = rho.grid().domain();
        if domain.is_circle() {
            return Err(Error::Contract("the JKO step is implemented on an interval".into()));
        }
        if m < 2 {
            return Err(Error::Contract("the JKO step needs at least two levels".into()));
        }
        let q = to_quantile(rho, default_resolution(rho.grid().n()))?;
        let g = (0..=m).map(|j| q.eval(j as f64 / m as f64)).collect();
        Ok(JkoState { domain, g })
    }

    pub fn levels(&self) -> usize {
        self.g.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.g
    }

    pub fn quantile(&self) -> Result<QuantileFn> {
        let m = self.levels();
        let s = (0..=m).map(|j| j as f64 / m as f64).collect();
        QuantileFn::from_knots(self.domain, m, s, self.g.clone())
    }

    pub fn density(&self, grid: &Grid) -> Result<GridDensity> {
        from_quantile(&self.quantile()?, grid)
    }

    /// `integral V(g) ds - integral log g' ds`.
    pub fn energy(&self, v: &Potential) -> f64 {
        let ds = 1.0 / self.levels() as f64;
        self.g
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                ds / 6.0 * (v.value(w[0]) + 4.0 * v.value(mid) + v.value(w[1])) + ds * neg_log((w[1] - w[0]) / ds).0
            })
            .sum()
    }
}

/// `integral (a - b)^2 ds` for piecewise-linear functions on uniform levels.
fn pl_sq_dist(a: &[f64], b: &[f64], ds: f64) -> f64 {
    (0..a.len() - 1)
        .map(|j| {
            let (x, y) = (a[j] - b[j], a[j + 1] - b[j + 1]);
            ds * (x * x + x * y + y * y) / 3.0
        })
        .sum()
}

struct JkoObjective<'a> {
    v: &'a Potential,
    prev: &'a [f64],
    tau: f64,
    ds: f64,
}

impl JkoObjective<'_> {
    fn value(&self, g: &[f64]) -> f64 {
        let ds = self.ds;
        let mut f = 0.0;
        for j in 0..g.len() - 1 {
            let (a, b) = (g[j], g[j + 1]);
            let mid = 0.5 * (a + b);
            f += ds / 6.0 * (self.v.value(a) + 4.0 * self.v.value(mid) + self.v.value(b));
            f += ds * neg_log((b - a) / ds).0;
        }
        f + pl_sq_dist(g, self.prev, ds) / (2.0 * self.tau)
    }

    /// Tridiagonal Hessian `(diag, off)`; potential curvature is clamped at zero
    /// so the Newton model stays convex.
    fn hessian(&self, g: &[f64], diag: &mut [f64], off: &mut [f64]) {
        let ds = self.ds;
        diag.iter_mut().for_each(|x| *x = 0.0);
        off.iter_mut().for_each(|x| *x = 0.0);
        let q = ds / (6.0 * self.tau);
        let k = self.v.curvature().max(0.0);
        for j in 0..g.len() - 1 {
            let (a, b) = (g[j], g[j + 1]);
            diag[j] += ds / 3.0 * k + 2.0 * q;
            diag[j + 1] += ds / 3.0 * k + 2.0 * q;
            off[j] += ds / 6.0 * k + q;
            let c = neg_log((b - a) / ds).2 / ds;
            diag[j] += c;
            diag[j + 1] += c;
            off[j] -= c;
        }
    }

    fn gradient(&self, g: &[f64], out: &mut [f64]) {
        let ds = self.ds;
        out.iter_mut().for_each(|x| *x = 0.0);
        for j in 0..g.len() - 1 {
            let (a, b) = (g[j], g[j + 1]);
            let dm = self.v.derivative(0.5 * (a + b));
            out[j] += ds / 6.0 * (self.v.derivative(a) + 2.0 * dm);
            out[j + 1] += ds / 6.0 * (self.v.derivative(b) + 2.0 * dm);
            let dl = neg_log((b - a) / ds).1;
            out[j] -= dl;
            out[j + 1] += dl;
            let (x, y) = (a - self.prev[j], b - self.prev[j + 1]);
            out[j] += ds * (2.0 * x + y) / (6.0 * self.tau);
            out[j + 1] += ds * (x + 2.0 * y) / (6.0 * self.tau);
        }
    }
}

/// Solves a symmetric positive definite tridiagonal system by elimination.
fn solve_tridiagonal(diag: &[f64], off: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut piv = diag[0];
    c[0] = if n > 1 { off[0] / piv } else { 0.0 };
    x[0] = rhs[0] / piv;
    for i in 1..n {
        piv = diag[i] - off[i - 1] * c[i - 1];
        if i + 1 < n {
            c[i] = off[i] / piv;
        }
        x[i] = (rhs[i] - off[i - 1] * x[i - 1]) / piv;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    x
}

/// Log barrier for `g_{j+1} - g_j >= ds` (the cap) and `0 <= g <= length`.
struct CapBarrier {
    ds: f64,
    length: f64,
}

impl CapBarrier {
    fn slacks<'a>(&'a self, g: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        let m = g.len() - 1;
        g.windows(2).map(move |w| w[1] - w[0] - self.ds).chain([g[0], self.length - g[m]])
    }

    fn value(&self, g: &[f64]) -> Option<f64> {
        let mut b = 0.0;
        for s in self.slacks(g) {
            if !(s > 0.0) {
                return None;
            }
            b -= s.ln();
        }
        Some(b)
    }

    /// Adds `mu` times the barrier gradient and Hessian.
    fn accumulate(&self, g: &[f64], mu: f64, grad: &mut [f64], diag: &mut [f64], off: &mut [f64]) {
        let m = g.len() - 1;
        for j in 0..m {
            let s = g[j + 1] - g[j] - self.ds;
            grad[j] += mu / s;
            grad[j + 1] -= mu / s;
            let h = mu / (s * s);
            diag[j] += h;
            diag[j + 1] += h;
            off[j] -= h;
        }
        grad[0] -= mu / g[0];
        diag[0] += mu / (g[0] * g[0]);
        let r = self.length - g[m];
        grad[m] += mu / r;
        diag[m] += mu / (r * r);
    }

    fn count(&self, g: &[f64]) -> usize {
        g.len() + 1
    }
}

pub const JKO_MAX_ITERATIONS: usize = 2000;
/// Duality-gap bound `(#constraints) mu` at which the barrier path stops.
const JKO_GAP: f64 = 1e-11;
/// Squared Newton decrement (twice the predicted decrease) that ends a centering.
const JKO_DECREMENT: f64 = 1e-13;
const JKO_MU0: f64 = 1e-4;
const JKO_MU_FACTOR: f64 = 0.1;
/// Weight of the strictly feasible profile mixed into the starting point.
const JKO_INTERIOR_MIX: f64 = 1e-3;

/// One JKO step: minimizes `J(g) + W_2^2(g, g_k) / (2 tau)` over quantiles with
/// `g' >= 1` inside `[0, length]`, by a log-barrier path followed with damped
/// Newton steps (the Hessian is tridiagonal in the knot values).
pub fn jko_step_state(state: &JkoState, v: &Potential, tau: f64) -> Result<(JkoState, JkoStepReport)> {
    if !(tau > 0.0) {
        return Err(Error::Contract(format!("time step must be positive (got {tau})")));
    }
    let m = state.levels();
    let ds = 1.0 / m as f64;
    let length = state.domain.length();
    if !(length > 1.0) {
        return Err(Error::Contract(format!("the capped JKO step needs length > 1 (got {length})")));
    }
    let obj = JkoObjective { v, prev: &state.g, tau, ds };
    let barrier = CapBarrier { ds, length };
    let w: Vec<f64> = (0..=m).map(|j| if j == 0 || j == m { 0.5 * ds } else { ds }).collect();
    let y: Vec<f64> = state.g.iter().enumerate().map(|(j, v)| v - j as f64 * ds).collect();
    let y = pav_box(&y, &w, 0.0, length - 1.0);
    let mut x: Vec<f64> = y
        .iter()
        .enumerate()
        .map(|(j, yj)| {
            let inner = (length - 1.0) * (j + 1) as f64 / (m + 2) as f64;
            (1.0 - JKO_INTERIOR_MIX) * yj + JKO_INTERIOR_MIX * inner + j as f64 * ds
        })
        .collect();
    let energy_before = state.energy(v);
    let mut grad = vec![0.0; m + 1];
    let mut diag = vec![0.0; m + 1];
    let mut off = vec![0.0; m];
    let mut iterations = 0;
    let mut decrement;
    let mut mu = JKO_MU0;
    loop {
        let merit = |g: &[f64]| barrier.value(g).map(|b| obj.value(g) + mu * b);
        let mut fx = merit(&x).ok_or_else(|| Error::numerical("JKO starting point is not strictly feasible"))?;
        loop {
            obj.gradient(&x, &mut grad);
            obj.hessian(&x, &mut diag, &mut off);
            barrier.accumulate(&x, mu, &mut grad, &mut diag, &mut off);
            let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
            let d = solve_tridiagonal(&diag, &off, &rhs);
            let slope: f64 = grad.iter().zip(&d).map(|(g, d)| g * d).sum();
            decrement = (-slope).max(0.0);
            if decrement <= JKO_DECREMENT || !(slope < 0.0) {
                break;
            }
            let mut alpha = 1.0f64;
            // Fraction-to-boundary rule along every slack.
            let rate = d.windows(2).map(|w| w[1] - w[0]).chain([d[0], -d[m]]);
            for (s, r) in barrier.slacks(&x).zip(rate) {
                if r < 0.0 {
                    alpha = alpha.min(-0.99 * s / r);
                }
            }
            let mut accepted = false;
            while alpha > 1e-16 {
                let trial: Vec<f64> = x.iter().zip(&d).map(|(x, d)| x + alpha * d).collect();
                if let Some(ft) = merit(&trial) {
                    if ft <= fx + 1e-4 * alpha * slope {
                        x = trial;
                        fx = ft;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            iterations += 1;
            if !accepted {
                break;
            }
            if iterations >= JKO_MAX_ITERATIONS {
                return Err(Error::numerical(format!(
                    "JKO solver did not converge in {JKO_MAX_ITERATIONS} Newton iterations (decrement {decrement:e})"
                )));
            }
        }
        if barrier.count(&x) as f64 * mu <= JKO_GAP {
            break;
        }
        mu *= JKO_MU_FACTOR;
    }
    let next = JkoState { domain: state.domain, g: x };
    let report = JkoStepReport {
        iterations,
        energy_before,
        energy_after: next.energy(v),
        w2_sq: pl_sq_dist(&next.g, &state.g, ds),
        residual: decrement.sqrt(),
    };
    Ok((next, report))
}

/// One JKO step from a grid density, with `n` uniform quantile levels.
pub fn jko_step(rho: &GridDensity, v: &Potential, tau: f64) -> Result<GridDensity> {
    let s = JkoState::from_density(rho, rho.grid().n())?;
    let (next, _) = jko_step_state(&s, v, tau)?;
    next.density(rho.grid())
}

#[derive(Debug, Clone)]
pub struct JkoRun {
    pub times: Vec<f64>,
    pub states: Vec<JkoState>,
    pub reports: Vec<JkoStepReport>,
}

/// Iterated JKO steps on `levels` uniform quantile levels.
pub fn jko_run(rho0: &GridDensity, v: &Potential, tau: f64, horizon: f64, levels: usize) -> Result<JkoRun> {
    if !(tau > 0.0 && tau <= horizon) {
        return Err(Error::Contract(format!("need 0 < tau <= horizon (tau = {tau}, horizon = {horizon})")));
    }
    let steps = step_count(tau, horizon);
    let mut state = JkoState::from_density(rho0, levels)?;
    let mut run = JkoRun { times: vec![0.0], states: vec![state.clone()], reports: Vec::with_capacity(steps) };
    for k in 0..steps {
        let (next, rep) = jko_step_state(&state, v, tau).map_err(|e| e.at_step(k))?;
        run.times.push((k + 1) as f64 * tau);
        run.states.push(next.clone());
        run.reports.push(rep);
        state = next;
    }
    Ok(run)
}

// ---------------------------------------------------------------------------
// Stationary profile for the drift -1 on an interval of length 2.

/// Root of `x = e^{x - 2}` in `(0, 1)`, by bisection.
pub fn stationary_x0() -> f64 {
    let f = |x: f64| x - (x - 2.0).exp();
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Cell averages of `min(1, e^{x0 - x})` on `[0, 2]`: the minimizer of
/// `integral x rho + integral rho log rho` among densities bounded by 1.
pub fn stationary_profile(grid: &Grid) -> Result<GridDensity> {
    if grid.is_circle() || (grid.length() - 2.0).abs() > 1e-12 {
        return Err(Error::Contract("the stationary oracle is defined on the interval [0, 2]".into()));
    }
    let x0 = stationary_x0();
    let h = grid.h();
    // Primitive of min(1, e^{x0 - x}).
    let prim = |x: f64| if x <= x0 { x } else { x0 + 1.0 - (x0 - x).exp() };
    let values = (0..grid.n()).map(|i| (prim(grid.face(i + 1)) - prim(grid.face(i))) / h).collect();
    GridDensity::new(*grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_density, Profile};

    #[test]
    fn fixed_point_oracle() {
        let x0 = stationary_x0();
        assert!((x0 - 0.15859).abs() < 1e-5);
        let g = Grid::new(Domain::interval(2.0).unwrap(), 100).unwrap();
        let p = stationary_profile(&g).unwrap();
        assert!((p.mass() - 1.0).abs() < 1e-12 && p.linf() <= 1.0 + 1e-15);
    }

    #[test]
    fn heat_kernel_conserves_mass_and_matches_fourier_mode() {
        let g = Grid::new(Domain::circle(2.0).unwrap(), 200).unwrap();
        let rho = GridDensity::normalized(g, g.centers().iter().map(|x| 0.5 + 0.25 * (std::f64::consts::PI * x).cos()).collect()).unwrap();
        let out = heat_convolve(&rho, 1e-2).unwrap();
        assert!((out.mass() - 1.0).abs() < 1e-12);
        let decay = (-std::f64::consts::PI.powi(2) * 1e-2).exp();
        let max_err = g
            .centers()
            .iter()
            .zip(out.values())
            .map(|(x, v)| (v - 0.5 - 0.25 * decay * (std::f64::consts::PI * x).cos()).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-3, "{max_err}");
    }

    #[test]
    fn push_forward_by_constant_drift_translates() {
        let g = Grid::new(Domain::circle(2.0).unwrap(), 100).unwrap();
        let rho = make_density(g, &Profile::Block { a: 0.2, b: 0.7, height: 1.0 }).unwrap();
        let u = DriftField::new(g.domain(), DriftPreset::Constant(2.0)).unwrap();
        let out = variant1_push(&rho, &u, 0.05, 0.0).unwrap();
        let expect = make_density(g, &Profile::Block { a: 0.3, b: 0.8, height: 1.0 }).unwrap();
        assert!(out.l1_distance(&expect).unwrap() < 1e-12);
        assert!(variant1_push(&GridDensity::uniform(Grid::new(Domain::interval(2.0).unwrap(), 16).unwrap()), &DriftField::zero(Domain::interval(2.0).unwrap()), 0.1, 0.0).is_err());
    }

    #[test]
    fn jko_keeps_uniform() {
        let g = Grid::new(Domain::interval(2.0).unwrap(), 40).unwrap();
        let rho = GridDensity::uniform(g);
        let out = jko_step(&rho, &Potential::Linear { slope: 0.0 }, 0.1).unwrap();
        assert!(out.l1_distance(&rho).unwrap() < 1e-9);
    }

    #[test]
    fn jko_gradient_matches_finite_differences() {
        let m = 12;
        let ds = 1.0 / m as f64;
        let prev: Vec<f64> = (0..=m).map(|j| 0.1 + 1.5 * j as f64 * ds).collect();
        let g: Vec<f64> = (0..=m).map(|j| 0.05 + 1.7 * j as f64 * ds + 0.01 * (j as f64).sin()).collect();
        let v = Potential::Quadratic { center: 0.7, kappa: 2.0 };
        let obj = JkoObjective { v: &v, prev: &prev, tau: 0.1, ds };
        let mut grad = vec![0.0; m + 1];
        obj.gradient(&g, &mut grad);
        for j in 0..=m {
            let mut a = g.clone();
            let mut b = g.clone();
            a[j] += 1e-6;
            b[j] -= 1e-6;
            let fd = (obj.value(&a) - obj.value(&b)) / 2e-6;
            assert!((fd - grad[j]).abs() < 1e-6 * (1.0 + fd.abs()), "j={j} fd={fd} g={}", grad[j]);
        }
    }
}
