//! Run configuration: a flat `key = value` file with dotted keys.
//!
//! ```text
//! # comments start with '#'
//! domain.kind = interval        # or circle
//! domain.length = 2.0
//! grid.n = 200
//! initial.profile = block       # uniform | block | triangle | finger | random | file
//! initial.a = 0.0
//! initial.b = 1.0
//! initial.height = 1.0
//! drift.preset = sine           # zero | constant | sine | neg_grad_linear | neg_grad_quadratic | tabulated
//! drift.kappa = 1.0
//! drift.m = 1
//! scheme = main                 # main | jko | variant1 | fp-only
//! time.tau = 1e-3
//! time.horizon = 0.1
//! ```
//!
//! A `[section]` line prefixes the keys that follow it, so `[time]` then
//! `tau = 1e-3` is the same as `time.tau = 1e-3`. Optional keys:
//! `time.snapshot_every` (1), `output.dir` (`out`), `output.emit_plots` (false),
//! `seed` (0), `drift.phi` (0), `drift.modulation_knots` / `drift.modulation_factors`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fokker_planck::{DriftField, DriftPreset, TimeModulation};
use crate::grid::{make_density, Domain, DomainKind, Grid, GridDensity, Profile};
use crate::io::{fmt17, parse_density_csv};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Main,
    Jko,
    Variant1,
    FpOnly,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Main => "main",
            SchemeKind::Jko => "jko",
            SchemeKind::Variant1 => "variant1",
            SchemeKind::FpOnly => "fp-only",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "main" => SchemeKind::Main,
            "jko" => SchemeKind::Jko,
            "variant1" => SchemeKind::Variant1,
            "fp-only" => SchemeKind::FpOnly,
            _ => return None,
        })
    }
}

/// Initial density: a built-in profile, or an `x,rho` CSV file.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Profile(Profile),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub domain: Domain,
    pub n: usize,
    pub initial: InitialSpec,
    pub drift: DriftPreset,
    pub modulation: Option<(Vec<f64>, Vec<f64>)>,
    pub scheme: SchemeKind,
    pub tau: f64,
    pub horizon: f64,
    pub snapshot_every: usize,
    pub output_dir: PathBuf,
    pub emit_plots: bool,
    pub seed: u64,
}

impl SchemeConfig {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.domain, self.n)
    }

    pub fn drift_field(&self) -> Result<DriftField> {
        let u = DriftField::new(self.domain, self.drift.clone())?;
        Ok(match &self.modulation {
            Some((k, f)) => u.with_modulation(TimeModulation::new(k.clone(), f.clone())?),
            None => u,
        })
    }

    /// Builds the initial density. Relative file paths resolve against `base`.
    pub fn initial_density(&self, base: &Path) -> Result<GridDensity> {
        let grid = self.grid()?;
        match &self.initial {
            InitialSpec::Profile(p) => make_density(grid, p),
            InitialSpec::File(path) => {
                let full = if path.is_absolute() { path.clone() } else { base.join(path) };
                let text = std::fs::read_to_string(&full).map_err(|e| Error::Io(format!("{}: {e}", full.display())))?;
                let rho = parse_density_csv(&text, self.domain.is_circle())?;
                if rho.grid() != &grid {
                    return Err(Error::Config(vec![format!(
                        "initial.path: file grid ({} cells, length {}) does not match grid.n = {} and domain.length = {}",
                        rho.grid().n(),
                        rho.grid().length(),
                        self.n,
                        self.domain.length()
                    )]));
                }
                Ok(rho)
            }
        }
    }

    /// Serializes to the configuration format; `parse_config_str` inverts it exactly.
    pub fn to_meta(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("domain.kind", self.domain.kind().name().to_string());
        put("domain.length", fmt17(self.domain.length()));
        put("grid.n", self.n.to_string());
        match &self.initial {
            InitialSpec::Profile(p) => match p {
                Profile::Uniform => put("initial.profile", "uniform".into()),
                Profile::Block { a, b, height } => {
                    put("initial.profile", "block".into());
                    put("initial.a", fmt17(*a));
                    put("initial.b", fmt17(*b));
                    put("initial.height", fmt17(*height));
                }
                Profile::Triangle { center, width } => {
                    put("initial.profile", "triangle".into());
                    put("initial.center", fmt17(*center));
                    put("initial.width", fmt17(*width));
                }
                Profile::Finger { k, r } => {
                    put("initial.profile", "finger".into());
                    put("initial.k", k.to_string());
                    put("initial.r", fmt17(*r));
                }
                Profile::Random { pieces, .. } => {
                    put("initial.profile", "random".into());
                    put("initial.pieces", pieces.to_string());
                }
                Profile::Tabulated(values) => {
                    put("initial.profile", "tabulated".into());
                    put("initial.values", list(values));
                }
            },
            InitialSpec::File(path) => {
                put("initial.profile", "file".into());
                put("initial.path", path.display().to_string());
            }
        }
        match &self.drift {
            DriftPreset::Zero => put("drift.preset", "zero".into()),
            DriftPreset::Constant(c) => {
                put("drift.preset", "constant".into());
                put("drift.value", fmt17(*c));
            }
            DriftPreset::Sine { kappa, m, phi } => {
                put("drift.preset", "sine".into());
                put("drift.kappa", fmt17(*kappa));
                put("drift.m", m.to_string());
                put("drift.phi", fmt17(*phi));
            }
            DriftPreset::NegGradLinear { slope } => {
                put("drift.preset", "neg_grad_linear".into());
                put("drift.slope", fmt17(*slope));
            }
            DriftPreset::NegGradQuadratic { center, kappa } => {
                put("drift.preset", "neg_grad_quadratic".into());
                put("drift.center", fmt17(*center));
                put("drift.kappa", fmt17(*kappa));
            }
            DriftPreset::Tabulated { values, .. } => {
                put("drift.preset", "tabulated".into());
                put("drift.values", list(&values[0]));
            }
        }
        if let Some((k, f)) = &self.modulation {
            put("drift.modulation_knots", list(k));
            put("drift.modulation_factors", list(f));
        }
        put("scheme", self.scheme.name().into());
        put("time.tau", fmt17(self.tau));
        put("time.horizon", fmt17(self.horizon));
        put("time.snapshot_every", self.snapshot_every.to_string());
        put("output.dir", self.output_dir.display().to_string());
        put("output.emit_plots", self.emit_plots.to_string());
        put("seed", self.seed.to_string());
        s
    }
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| fmt17(*x)).collect::<Vec<_>>().join(", ")
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<SchemeConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
    parse_config_str(&text)
}

/// Key/value table that records every problem instead of stopping at the first.
struct Table {
    entries: BTreeMap<String, (usize, String)>,
    used: std::collections::BTreeSet<String>,
    errors: Vec<String>,
}

impl Table {
    fn raw(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.entries.get(key).map(|(_, v)| v.clone())
    }

    fn required<T>(&mut self, key: &str, parse: impl Fn(&str) -> std::result::Result<T, String>) -> Option<T> {
        match self.raw(key) {
            Some(v) => self.convert(key, &v, parse),
            None => {
                self.errors.push(format!("missing key `{key}`"));
                None
            }
        }
    }

    fn optional<T>(&mut self, key: &str, default: T, parse: impl Fn(&str) -> std::result::Result<T, String>) -> Option<T> {
        match self.raw(key) {
            Some(v) => self.convert(key, &v, parse),
            None => Some(default),
        }
    }

    fn convert<T>(&mut self, key: &str, v: &str, parse: impl Fn(&str) -> std::result::Result<T, String>) -> Option<T> {
        match parse(v) {
            Ok(x) => Some(x),
            Err(e) => {
                let line = self.entries[key].0;
                self.errors.push(format!("line {line}: `{key}`: {e}"));
                None
            }
        }
    }
}

fn float(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(format!("expected a finite number, found `{s}`")),
    }
}

fn uint<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String> {
    s.parse::<T>().map_err(|_| format!("expected a nonnegative integer, found `{s}`"))
}

fn boolean(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, found `{s}`")),
    }
}

fn floats(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',').map(|x| float(x.trim())).collect()
}

fn text(s: &str) -> std::result::Result<String, String> {
    Ok(s.to_string())
}

/// Parses and validates configuration text, reporting every violation at once.
pub fn parse_config_str(src: &str) -> Result<SchemeConfig> {
    let mut t = Table { entries: BTreeMap::new(), used: Default::default(), errors: Vec::new() };
    let mut section = String::new();
    for (i, raw) in src.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            t.errors.push(format!("line {}: expected `key = value`, found `{line}`", i + 1));
            continue;
        };
        let key = if section.is_empty() { k.trim().to_string() } else { format!("{section}.{}", k.trim()) };
        if t.entries.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
            t.errors.push(format!("line {}: duplicate key `{key}`", i + 1));
        }
    }

    let kind = t.required("domain.kind", |s| match s {
        "interval" => Ok(DomainKind::Interval),
        "circle" => Ok(DomainKind::Circle),
        _ => Err(format!("expected interval or circle, found `{s}`")),
    });
    let length = t.required("domain.length", float);
    if let Some(l) = length {
        if !(l > 1.0) {
            t.errors.push(format!("domain.length = {l}: the domain must be longer than 1 so that a density <= 1 of mass 1 fits"));
        }
    }
    let n = t.required("grid.n", uint::<usize>);
    if let Some(n) = n {
        if n < 8 {
            t.errors.push(format!("grid.n = {n}: at least 8 cells are required"));
        }
    }

    let seed = t.optional("seed", 0u64, uint::<u64>);
    let initial = match t.required("initial.profile", text).as_deref() {
        Some("uniform") => Some(InitialSpec::Profile(Profile::Uniform)),
        Some("block") => match (t.required("initial.a", float), t.required("initial.b", float), t.required("initial.height", float)) {
            (Some(a), Some(b), Some(height)) => Some(InitialSpec::Profile(Profile::Block { a, b, height })),
            _ => None,
        },
        Some("triangle") => match (t.required("initial.center", float), t.required("initial.width", float)) {
            (Some(center), Some(width)) => Some(InitialSpec::Profile(Profile::Triangle { center, width })),
            _ => None,
        },
        Some("finger") => match (t.required("initial.k", uint::<usize>), t.required("initial.r", float)) {
            (Some(k), Some(r)) => Some(InitialSpec::Profile(Profile::Finger { k, r })),
            _ => None,
        },
        Some("random") => t
            .required("initial.pieces", uint::<usize>)
            .map(|pieces| InitialSpec::Profile(Profile::Random { pieces, seed: seed.unwrap_or(0) })),
        Some("tabulated") => t.required("initial.values", floats).map(|v| InitialSpec::Profile(Profile::Tabulated(v))),
        Some("file") => t.required("initial.path", text).map(|p| InitialSpec::File(PathBuf::from(p))),
        Some(other) => {
            t.errors.push(format!(
                "initial.profile: unknown profile `{other}` (uniform, block, triangle, finger, random, tabulated, file)"
            ));
            None
        }
        None => None,
    };

    let drift = match t.required("drift.preset", text).as_deref() {
        Some("zero") => Some(DriftPreset::Zero),
        Some("constant") => t.required("drift.value", float).map(DriftPreset::Constant),
        Some("sine") => {
            let kappa = t.required("drift.kappa", float);
            let m = t.required("drift.m", uint::<u32>);
            let phi = t.optional("drift.phi", 0.0, float);
            match (kappa, m, phi) {
                (Some(kappa), Some(m), Some(phi)) => Some(DriftPreset::Sine { kappa, m, phi }),
                _ => None,
            }
        }
        Some("neg_grad_linear") => t.required("drift.slope", float).map(|slope| DriftPreset::NegGradLinear { slope }),
        Some("neg_grad_quadratic") => match (t.required("drift.center", float), t.required("drift.kappa", float)) {
            (Some(center), Some(kappa)) => Some(DriftPreset::NegGradQuadratic { center, kappa }),
            _ => None,
        },
        Some("tabulated") => t
            .required("drift.values", floats)
            .map(|v| DriftPreset::Tabulated { times: vec![0.0], values: vec![v] }),
        Some(other) => {
            t.errors.push(format!(
                "drift.preset: unknown preset `{other}` (zero, constant, sine, neg_grad_linear, neg_grad_quadratic, tabulated)"
            ));
            None
        }
        None => None,
    };
    let modulation = match (t.raw("drift.modulation_knots"), t.raw("drift.modulation_factors")) {
        (None, None) => None,
        (Some(k), Some(f)) => match (t.convert("drift.modulation_knots", &k, floats), t.convert("drift.modulation_factors", &f, floats)) {
            (Some(k), Some(f)) => {
                if let Err(e) = TimeModulation::new(k.clone(), f.clone()) {
                    t.errors.push(format!("drift.modulation_*: {e}"));
                }
                Some((k, f))
            }
            _ => None,
        },
        _ => {
            t.errors.push("drift.modulation_knots and drift.modulation_factors must be given together".into());
            None
        }
    };

    let scheme = t.required("scheme", |s| {
        SchemeKind::parse(s).ok_or_else(|| format!("unknown scheme `{s}` (main, jko, variant1, fp-only)"))
    });
    let tau = t.required("time.tau", float);
    let horizon = t.required("time.horizon", float);
    let snapshot_every = t.optional("time.snapshot_every", 1usize, uint::<usize>);
    let output_dir = t.optional("output.dir", PathBuf::from("out"), |s| Ok(PathBuf::from(s)));
    let emit_plots = t.optional("output.emit_plots", false, boolean);

    if let (Some(tau), Some(horizon)) = (tau, horizon) {
        if !(tau > 0.0) {
            t.errors.push(format!("time.tau = {tau}: must be positive"));
        }
        if tau > horizon {
            t.errors.push(format!("time.tau = {tau} exceeds time.horizon = {horizon}"));
        }
    }
    if snapshot_every == Some(0) {
        t.errors.push("time.snapshot_every must be at least 1".into());
    }
    if let (Some(scheme), Some(kind)) = (scheme, kind) {
        if scheme == SchemeKind::Variant1 && kind != DomainKind::Circle {
            t.errors.push(
                "scheme = variant1 requires domain.kind = circle: the Gaussian-convolution variant needs a periodic setting"
                    .into(),
            );
        }
        if scheme == SchemeKind::Jko && kind != DomainKind::Interval {
            t.errors.push("scheme = jko is implemented on an interval only".into());
        }
    }
    if let (Some(SchemeKind::Jko), Some(d)) = (scheme, &drift) {
        if matches!(d, DriftPreset::Sine { .. } | DriftPreset::Tabulated { .. }) {
            t.errors.push("scheme = jko needs a gradient drift (zero, constant, neg_grad_linear, neg_grad_quadratic)".into());
        }
    }
    if let (Some(DriftPreset::Tabulated { values, .. }), Some(n)) = (&drift, n) {
        if values[0].len() != n {
            t.errors.push(format!("drift.values has {} entries, grid.n is {n}", values[0].len()));
        }
    }

    let unknown: Vec<String> = t.entries.keys().filter(|k| !t.used.contains(*k)).cloned().collect();
    for k in unknown {
        let line = t.entries[&k].0;
        t.errors.push(format!("line {line}: unknown key `{k}`"));
    }

    let domain = match (kind, length) {
        (Some(kind), Some(l)) if l > 1.0 => match Domain::new(kind, l) {
            Ok(d) => Some(d),
            Err(e) => {
                t.errors.push(e.to_string());
                None
            }
        },
        _ => None,
    };
    if !t.errors.is_empty() {
        return Err(Error::Config(t.errors));
    }
    // Every field is present once no error was recorded.
    Ok(SchemeConfig {
        domain: domain.unwrap(),
        n: n.unwrap(),
        initial: initial.unwrap(),
        drift: drift.unwrap(),
        modulation,
        scheme: scheme.unwrap(),
        tau: tau.unwrap(),
        horizon: horizon.unwrap(),
        snapshot_every: snapshot_every.unwrap(),
        output_dir: output_dir.unwrap(),
        emit_plots: emit_plots.unwrap(),
        seed: seed.unwrap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "domain.kind = interval\ndomain.length = 2.0\ngrid.n = 200\ninitial.profile = uniform\n\
                           drift.preset = zero\nscheme = main\ntime.tau = 1e-3\ntime.horizon = 0.1\n";

    fn errors(src: &str) -> Vec<String> {
        match parse_config_str(src) {
            Err(Error::Config(v)) => v,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_parses() {
        let c = parse_config_str(MINIMAL).unwrap();
        assert_eq!(c.n, 200);
        assert_eq!(c.scheme, SchemeKind::Main);
        assert_eq!(c.domain, Domain::interval(2.0).unwrap());
        assert_eq!(c.snapshot_every, 1);
        assert!(!c.emit_plots);
    }

    #[test]
    fn sections_prefix_keys() {
        let src = "[domain]\nkind = circle\nlength = 3\n[grid]\nn = 64\n[initial]\nprofile = uniform\n\
                   [drift]\npreset = sine\nkappa = 1\nm = 2\n[time]\ntau = 0.01\nhorizon = 0.1\n[]\nscheme = variant1\n";
        let c = parse_config_str(src).unwrap();
        assert_eq!(c.drift, DriftPreset::Sine { kappa: 1.0, m: 2, phi: 0.0 });
        assert_eq!(c.scheme, SchemeKind::Variant1);
    }

    #[test]
    fn variant1_on_interval_names_periodicity() {
        let e = errors(&MINIMAL.replace("scheme = main", "scheme = variant1"));
        assert!(e.iter().any(|m| m.contains("periodic")), "{e:?}");
    }

    #[test]
    fn short_domain_is_rejected() {
        let e = errors(&MINIMAL.replace("domain.length = 2.0", "domain.length = 0.8"));
        assert!(e.iter().any(|m| m.contains("longer than 1")), "{e:?}");
    }

    #[test]
    fn all_violations_are_reported() {
        let src = MINIMAL.replace("grid.n = 200", "grid.n = 4").replace("time.tau = 1e-3\n", "time.tau = 1\nbogus = 3\n");
        let src = src.replace("drift.preset = zero\n", "");
        let e = errors(&src);
        assert!(e.iter().any(|m| m.contains("at least 8")));
        assert!(e.iter().any(|m| m.contains("exceeds time.horizon")));
        assert!(e.iter().any(|m| m.contains("unknown key `bogus`")));
        assert!(e.iter().any(|m| m.contains("missing key `drift.preset`")));
        assert_eq!(e.len(), 4, "{e:?}");
    }

    #[test]
    fn parameters_of_other_profiles_are_unknown() {
        let e = errors(&MINIMAL.replace("initial.profile = uniform", "initial.profile = uniform\ninitial.a = 0.5"));
        assert!(e.iter().any(|m| m.contains("unknown key `initial.a`")), "{e:?}");
    }

    #[test]
    fn meta_round_trips() {
        let src = MINIMAL
            .replace("initial.profile = uniform", "initial.profile = block\ninitial.a = 0.1\ninitial.b = 1.3\ninitial.height = 0.8")
            .replace("drift.preset = zero", "drift.preset = sine\ndrift.kappa = 0.3\ndrift.m = 2\ndrift.phi = 0.1\ndrift.modulation_knots = 0, 0.05\ndrift.modulation_factors = 1, -1")
            + "output.emit_plots = true\nseed = 7\ntime.snapshot_every = 5\n";
        let c = parse_config_str(&src).unwrap();
        let again = parse_config_str(&c.to_meta()).unwrap();
        assert_eq!(c, again);
        assert_eq!(again.to_meta(), c.to_meta());
    }
}
