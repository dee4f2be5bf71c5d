//! Command implementations behind the `crowdsim` binary: scheme runs with
//! on-disk output, single projections, plot-script emission and a self-test.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{SchemeConfig, SchemeKind};
use crate::error::{Error, Result};
use crate::fokker_planck::fp_step;
use crate::grid::{make_density, Domain, Grid, GridDensity, Profile};
use crate::io::{csv, density_csv, parse_density_csv};
use crate::oracle::{lp_project, DiscreteMeasure};
use crate::projection::{project_k, projection_csv};
use crate::schemes::{
    jko_step_state, main_scheme_run_observed, step_count, variant1_step, JkoState, Potential, SchemeOptions,
    DIAGNOSTICS_COLUMNS, INITIAL_CAP_TOL,
};
use crate::transport::wasserstein;

/// Process exit status for an error: 2 for unusable input, 3 for numerical failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Contract(_)
        | Error::InvalidDomain(_)
        | Error::InvalidGrid(_)
        | Error::InvalidDensity(_)
        | Error::DomainMismatch(_) => 2,
        Error::Numerical { .. } | Error::Oracle(_) => 3,
        Error::Io(_) => 1,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub scheme: SchemeKind,
    pub steps: usize,
    pub final_entropy: f64,
    pub final_tv: f64,
    pub max_pressure: f64,
    pub sup_violation: f64,
    pub output_dir: PathBuf,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} run, {} steps: entropy {:.6e}, TV {:.6e}, max pressure {:.6e}, sup violation {:.3e} -> {}",
            self.scheme.name(),
            self.steps,
            self.final_entropy,
            self.final_tv,
            self.max_pressure,
            self.sup_violation,
            self.output_dir.display()
        )
    }
}

/// Accumulates diagnostics rows and writes snapshots as a run progresses.
struct Recorder {
    snapshots: PathBuf,
    every: usize,
    rows: Vec<Vec<f64>>,
    prev: GridDensity,
    action: f64,
    max_pressure: f64,
}

impl Recorder {
    fn new(dir: &Path, every: usize, rho0: &GridDensity) -> Result<Self> {
        let snapshots = dir.join("snapshots");
        fs::create_dir_all(&snapshots)?;
        let first = vec![0.0, rho0.mass(), rho0.entropy(), rho0.total_variation(), rho0.linf(), 0.0, 0.0, 0.0, 0.0, 0.0, rho0.sup_violation()];
        let rec = Recorder { snapshots, every, rows: vec![first], prev: rho0.clone(), action: 0.0, max_pressure: 0.0 };
        rec.snapshot(0, rho0)?;
        Ok(rec)
    }

    fn snapshot(&self, idx: usize, rho: &GridDensity) -> Result<()> {
        fs::write(self.snapshots.join(format!("t_{idx:06}.csv")), density_csv(rho))?;
        Ok(())
    }

    /// Records the state after step `k` (0-based); `pressure` is `(p_max, residual)` when the scheme has one.
    fn step(&mut self, k: usize, t: f64, tau: f64, rho: &GridDensity, pressure: (f64, f64), last: bool) -> Result<()> {
        let w1 = wasserstein(&self.prev, rho, 1)?;
        let w2 = wasserstein(&self.prev, rho, 2)?;
        self.action += w2 * w2 / tau;
        self.max_pressure = self.max_pressure.max(pressure.0);
        self.rows.push(vec![
            t,
            rho.mass(),
            rho.entropy(),
            rho.total_variation(),
            rho.linf(),
            w1,
            w2,
            self.action,
            pressure.0,
            pressure.1,
            rho.sup_violation(),
        ]);
        if (k + 1) % self.every == 0 || last {
            self.snapshot(k + 1, rho)?;
        }
        self.prev = rho.clone();
        Ok(())
    }

    fn finish(self, dir: &Path, scheme: SchemeKind, steps: usize) -> Result<RunSummary> {
        fs::write(dir.join("diagnostics.csv"), csv(&DIAGNOSTICS_COLUMNS, self.rows))?;
        Ok(RunSummary {
            scheme,
            steps,
            final_entropy: self.prev.entropy(),
            final_tv: self.prev.total_variation(),
            max_pressure: self.max_pressure,
            sup_violation: self.prev.sup_violation(),
            output_dir: dir.to_path_buf(),
        })
    }
}

/// Runs the configured scheme and writes `run.meta`, `snapshots/t_<step>.csv`,
/// `diagnostics.csv` and, when requested, the plot scripts. Relative paths in
/// the configuration resolve against `base` (the directory of the config file).
pub fn run_command(cfg: &SchemeConfig, base: &Path) -> Result<RunSummary> {
    let dir = if cfg.output_dir.is_absolute() { cfg.output_dir.clone() } else { base.join(&cfg.output_dir) };
    let rho0 = cfg.initial_density(base)?;
    let u = cfg.drift_field()?;
    if cfg.scheme != SchemeKind::FpOnly && rho0.sup_violation() > INITIAL_CAP_TOL {
        return Err(Error::Config(vec![format!(
            "initial density exceeds the cap by {:e}; scheme {} needs rho0 <= 1",
            rho0.sup_violation(),
            cfg.scheme.name()
        )]));
    }
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("run.meta"), cfg.to_meta())?;
    let steps = step_count(cfg.tau, cfg.horizon);
    let tau = cfg.tau;
    let mut rec = Recorder::new(&dir, cfg.snapshot_every, &rho0)?;
    match cfg.scheme {
        SchemeKind::Main => {
            let mut failure = None;
            main_scheme_run_observed(&rho0, &u, tau, cfg.horizon, SchemeOptions::default(), |k, _, proj, d| {
                if failure.is_none() {
                    if let Err(e) = rec.step(k, d.t, tau, &proj.projected, (d.p_max, d.compl_resid), k + 1 == steps) {
                        failure = Some(e);
                    }
                }
            })?;
            if let Some(e) = failure {
                return Err(e);
            }
        }
        SchemeKind::FpOnly => {
            let mut rho = rho0.clone();
            for k in 0..steps {
                let (next, _) = fp_step(&rho, &u, k as f64 * tau, tau).map_err(|e| e.at_step(k))?;
                rec.step(k, (k + 1) as f64 * tau, tau, &next, (0.0, 0.0), k + 1 == steps)?;
                rho = next;
            }
        }
        SchemeKind::Variant1 => {
            let mut rho = rho0.clone();
            for k in 0..steps {
                let next = variant1_step(&rho, &u, tau, k as f64 * tau).map_err(|e| e.at_step(k))?;
                rec.step(k, (k + 1) as f64 * tau, tau, &next, (0.0, 0.0), k + 1 == steps)?;
                rho = next;
            }
        }
        SchemeKind::Jko => {
            let v = Potential::from_drift(&u)?;
            let grid = *rho0.grid();
            let mut state = JkoState::from_density(&rho0, grid.n())?;
            for k in 0..steps {
                let (next, _) = jko_step_state(&state, &v, tau).map_err(|e| e.at_step(k))?;
                rec.step(k, (k + 1) as f64 * tau, tau, &next.density(&grid)?, (0.0, 0.0), k + 1 == steps)?;
                state = next;
            }
        }
    }
    let summary = rec.finish(&dir, cfg.scheme, steps)?;
    if cfg.emit_plots {
        emit_plot_scripts(&dir)?;
    }
    Ok(summary)
}

/// Writes `plot_density.gp` and `plot_diag.gp` (gnuplot) into a run directory.
/// The scripts name only files that exist when they are written.
pub fn emit_plot_scripts(dir: &Path) -> Result<()> {
    let mut snaps: Vec<String> = match fs::read_dir(dir.join("snapshots")) {
        Ok(entries) => entries
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|name| name.starts_with("t_") && name.ends_with(".csv"))
            .collect(),
        Err(_) => Vec::new(),
    };
    snaps.sort();
    let mut density = String::from("# Density snapshots, one curve per file.\nset datafile separator ','\nset xlabel 'x'\nset ylabel 'rho'\nset key outside right\n");
    if snaps.is_empty() {
        density.push_str("# no snapshots were written\n");
    } else {
        let curves: Vec<String> = snaps
            .iter()
            .map(|s| format!("'snapshots/{s}' using 1:2 skip 1 with lines title 'step {}'", s[2..s.len() - 4].trim_start_matches('0').parse::<usize>().unwrap_or(0)))
            .collect();
        density.push_str(&format!("plot {}\n", curves.join(", \\\n     ")));
    }
    fs::write(dir.join("plot_density.gp"), density)?;

    let mut diag = String::from("# Diagnostics time series.\nset datafile separator ','\nset xlabel 't'\n");
    if dir.join("diagnostics.csv").is_file() {
        diag.push_str("set multiplot layout 2,2\n");
        for (col, name) in [(3, "entropy"), (4, "tv"), (9, "p_max"), (7, "w2_inc")] {
            diag.push_str(&format!("set title '{name}'\nplot 'diagnostics.csv' using 1:{col} skip 1 with lines notitle\n"));
        }
        diag.push_str("unset multiplot\n");
    } else {
        diag.push_str("# diagnostics.csv was not written\n");
    }
    fs::write(dir.join("plot_diag.gp"), diag)?;
    Ok(())
}

/// Projects the density in an `x,rho` file onto `{rho <= 1}` and writes the
/// result table (`x,rho_in,rho_out,p,saturated`). Returns the W2 distance moved
/// and the output path (default: `<input stem>.projected.csv` next to the input).
pub fn project_command(input: &Path, circle: bool, out: Option<&Path>) -> Result<(f64, PathBuf)> {
    let text = fs::read_to_string(input).map_err(|e| Error::Io(format!("{}: {e}", input.display())))?;
    let rho = parse_density_csv(&text, circle)?;
    let result = project_k(&rho)?;
    let out = match out {
        Some(p) => p.to_path_buf(),
        None => {
            let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "density".into());
            input.with_file_name(format!("{stem}.projected.csv"))
        }
    };
    fs::write(&out, projection_csv(&result))?;
    Ok((result.w2_moved, out))
}

/// One line of the self-test.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Fast end-to-end checks (a few seconds): projection against the LP oracle,
/// the closed-form block projection, heat flow against its Fourier solution,
/// JKO at equilibrium and pressure complementarity along a short run.
pub fn selftest() -> Vec<Check> {
    type Probe = fn() -> Result<(bool, String)>;
    let probes: [(&str, Probe); 5] = [
        ("projection matches the transportation LP", || {
            let g = Grid::new(Domain::interval(2.0)?, 16)?;
            let mut worst: f64 = 0.0;
            for seed in 0..10 {
                let mu = make_density(g, &Profile::Random { pieces: 5, seed })?;
                let ours = project_k(&mu)?.projected;
                let lp = lp_project(&DiscreteMeasure::from_density(&mu), &vec![g.h(); g.n()])?;
                let theirs = GridDensity::normalized(g, lp.weights().iter().map(|w| w / g.h()).collect())?;
                worst = worst.max(ours.l1_distance(&theirs)? / g.h());
            }
            Ok((worst <= 2.0, format!("worst L1 {worst:.3} h")))
        }),
        ("block of height 2 projects to the unit block", || {
            let g = Grid::new(Domain::interval(2.0)?, 200)?;
            let r = project_k(&make_density(g, &Profile::Block { a: 0.0, b: 0.5, height: 2.0 })?)?;
            let target = make_density(g, &Profile::Block { a: 0.0, b: 1.0, height: 1.0 })?;
            let l1 = r.projected.l1_distance(&target)?;
            let w2 = (r.w2_moved * r.w2_moved - 1.0 / 12.0).abs();
            Ok((l1 <= 1e-10 && w2 <= 2.0 * g.h() * 2.0, format!("L1 {l1:.1e}, |W2^2 - 1/12| {w2:.1e}")))
        }),
        ("heat flow matches the Fourier solution", || {
            let g = Grid::new(Domain::circle(2.0)?, 100)?;
            let pi = std::f64::consts::PI;
            let exact = |t: f64| -> Vec<f64> {
                (0..g.n())
                    .map(|i| 0.5 + 0.25 * (-pi * pi * t).exp() * ((pi * g.face(i + 1)).sin() - (pi * g.face(i)).sin()) / (pi * g.h()))
                    .collect()
            };
            let rho0 = GridDensity::new(g, exact(0.0))?;
            let u = crate::fokker_planck::DriftField::zero(g.domain());
            let (rho, _) = fp_step(&rho0, &u, 0.0, 0.1)?;
            let err = rho.values().iter().zip(exact(0.1)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            Ok((err <= 0.01, format!("Linf error {err:.2e}")))
        }),
        ("JKO leaves the uniform density in place", || {
            let g = Grid::new(Domain::interval(2.0)?, 50)?;
            let rho = GridDensity::uniform(g);
            let out = crate::schemes::jko_step(&rho, &Potential::Linear { slope: 0.0 }, 0.1)?;
            let d = out.l1_distance(&rho)?;
            Ok((d <= 1e-8, format!("L1 drift {d:.1e}")))
        }),
        ("pressure vanishes off the saturated set", || {
            let g = Grid::new(Domain::interval(2.0)?, 100)?;
            let rho0 = make_density(g, &Profile::Block { a: 1.0, b: 2.0, height: 1.0 })?;
            let u = crate::fokker_planck::DriftField::new(g.domain(), crate::fokker_planck::DriftPreset::Sine { kappa: 1.0, m: 1, phi: 0.0 })?;
            let traj = crate::schemes::main_scheme_run(&rho0, &u, 1e-2, 0.1, SchemeOptions::default())?;
            let worst = traj.diagnostics().iter().map(|d| d.compl_resid.abs() / d.p_max.max(1e-300)).fold(0.0, f64::max);
            Ok((worst <= 1e-8, format!("worst residual / p_max {worst:.1e}")))
        }),
    ];
    probes
        .into_iter()
        .map(|(name, run)| match run() {
            Ok((pass, detail)) => Check { name, pass, detail },
            Err(e) => Check { name, pass: false, detail: format!("error: {e}") },
        })
        .collect()
}
