//! Domains, uniform grids, cell-averaged densities and the scalar functionals
//! evaluated on them.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Densities below this value contribute nothing to the entropy.
pub const ENTROPY_FLOOR: f64 = 1e-300;
/// Mass tolerance for a valid [`GridDensity`].
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainKind {
    Interval,
    Circle,
}

impl DomainKind {
    pub fn name(self) -> &'static str {
        match self {
            DomainKind::Interval => "interval",
            DomainKind::Circle => "circle",
        }
    }
}

/// `[0, length]` or the circle of circumference `length`. The length must
/// exceed 1 so that the capped set `{rho <= 1}` contains probability densities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    kind: DomainKind,
    length: f64,
}

impl Domain {
    pub fn new(kind: DomainKind, length: f64) -> Result<Self> {
        if !(length.is_finite() && length > 1.0) {
            return Err(Error::InvalidDomain(format!(
                "length must be finite and > 1 so the capped set is nonempty (got {length})"
            )));
        }
        Ok(Domain { kind, length })
    }

    pub fn interval(length: f64) -> Result<Self> {
        Self::new(DomainKind::Interval, length)
    }

    pub fn circle(length: f64) -> Result<Self> {
        Self::new(DomainKind::Circle, length)
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn is_circle(&self) -> bool {
        self.kind == DomainKind::Circle
    }
}

/// Uniform grid of `n` cells; cell `i` is `[i h, (i+1) h)` with center `(i + 1/2) h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    domain: Domain,
    n: usize,
}

impl Grid {
    pub fn new(domain: Domain, n: usize) -> Result<Self> {
        if n < 8 {
            return Err(Error::InvalidGrid(format!("need at least 8 cells (got {n})")));
        }
        Ok(Grid { domain, n })
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.domain.length / self.n as f64
    }

    pub fn length(&self) -> f64 {
        self.domain.length
    }

    pub fn is_circle(&self) -> bool {
        self.domain.is_circle()
    }

    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.center(i)).collect()
    }

    /// Position of face `i` (left edge of cell `i`); face `n` is the right end.
    pub fn face(&self, i: usize) -> f64 {
        if i == self.n {
            self.domain.length
        } else {
            i as f64 * self.h()
        }
    }

    /// Cell containing `x`, clamped into range (circle positions are wrapped first).
    pub fn cell_of(&self, x: f64) -> usize {
        let x = if self.is_circle() { self.wrap(x) } else { x };
        let i = (x / self.h()).floor();
        if i < 0.0 {
            0
        } else {
            (i as usize).min(self.n - 1)
        }
    }

    /// Maps a position onto `[0, length)`.
    pub fn wrap(&self, x: f64) -> f64 {
        let l = self.domain.length;
        let y = x.rem_euclid(l);
        if y >= l {
            0.0
        } else {
            y
        }
    }

    pub(crate) fn same_as(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::DomainMismatch(format!(
                "{} of length {} with {} cells vs {} of length {} with {} cells",
                self.domain.kind.name(),
                self.domain.length,
                self.n,
                other.domain.kind.name(),
                other.domain.length,
                other.n
            )));
        }
        Ok(())
    }
}

/// Cell-averaged probability density: nonnegative values with `sum rho_i h = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    grid: Grid,
    values: Vec<f64>,
}

impl GridDensity {
    /// Validates nonnegativity and unit mass (within [`MASS_TOL`]).
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        check_values(&grid, &values)?;
        let m = raw_mass(&grid, &values);
        if (m - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDensity(format!("mass {m} differs from 1")));
        }
        Ok(GridDensity { grid, values })
    }

    /// Rescales nonnegative values to unit mass.
    pub fn normalized(grid: Grid, mut values: Vec<f64>) -> Result<Self> {
        check_values(&grid, &values)?;
        let m = raw_mass(&grid, &values);
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::InvalidDensity(format!("cannot normalize mass {m}")));
        }
        for v in &mut values {
            *v /= m;
        }
        Ok(GridDensity { grid, values })
    }

    /// Wraps values whose mass has been tracked by the caller (solver outputs).
    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n());
        GridDensity { grid, values }
    }

    pub fn uniform(grid: Grid) -> Self {
        let v = 1.0 / grid.length();
        GridDensity { grid, values: vec![v; grid.n()] }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mass(&self) -> f64 {
        raw_mass(&self.grid, &self.values)
    }

    /// `sum rho log rho h`, with cells below [`ENTROPY_FLOOR`] contributing zero.
    pub fn entropy(&self) -> f64 {
        let h = self.grid.h();
        self.values
            .iter()
            .filter(|&&r| r >= ENTROPY_FLOOR)
            .map(|&r| r * r.ln() * h)
            .sum()
    }

    /// Sum of absolute jumps across interior faces (plus the wrap face on a circle).
    pub fn total_variation(&self) -> f64 {
        self.edges().map(|(a, b)| (b - a).abs()).sum()
    }

    /// Discrete `integral sqrt(eps^2 + |rho'|^2)`. Each edge contributes
    /// `sqrt(eps^2 h^2 + jump^2)`; on an interval the two boundary half cells add
    /// `eps h` so that a constant density yields exactly `eps * length`.
    pub fn graph_length(&self, eps: f64) -> f64 {
        let eh = eps * self.grid.h();
        let interior: f64 = self.edges().map(|(a, b)| eh.hypot(b - a)).sum();
        if self.grid.is_circle() {
            interior
        } else {
            interior + eh
        }
    }

    /// `max_i (rho_i - 1)`; nonpositive exactly when the density respects the cap.
    pub fn sup_violation(&self) -> f64 {
        self.linf() - 1.0
    }

    pub fn linf(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `sum |rho_i - nu_i| h`.
    pub fn l1_distance(&self, other: &GridDensity) -> Result<f64> {
        self.grid.same_as(&other.grid)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>() * self.grid.h())
    }

    pub fn linf_distance(&self, other: &GridDensity) -> Result<f64> {
        self.grid.same_as(&other.grid)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    /// `integral V rho` with `V` sampled at cell centers.
    pub fn potential_energy(&self, v: impl Fn(f64) -> f64) -> f64 {
        let h = self.grid.h();
        self.values.iter().enumerate().map(|(i, r)| v(self.grid.center(i)) * r * h).sum()
    }

    /// Pairs `(rho_left, rho_right)` across every edge counted by TV.
    fn edges(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let n = self.values.len();
        let wrap = if self.grid.is_circle() { Some((self.values[n - 1], self.values[0])) } else { None };
        self.values.windows(2).map(|w| (w[0], w[1])).chain(wrap)
    }
}

pub(crate) fn raw_mass(grid: &Grid, values: &[f64]) -> f64 {
    values.iter().sum::<f64>() * grid.h()
}

fn check_values(grid: &Grid, values: &[f64]) -> Result<()> {
    if values.len() != grid.n() {
        return Err(Error::InvalidDensity(format!("{} values for {} cells", values.len(), grid.n())));
    }
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidDensity(format!("cell {i} has value {v}")));
    }
    Ok(())
}

/// Named initial profiles. Every profile is discretized by exact cell averages
/// and then renormalized to unit mass.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Uniform,
    /// `height` on `[a, b]`, zero elsewhere.
    Block { a: f64, b: f64, height: f64 },
    /// Hat function centered at `center` with base `width`.
    Triangle { center: f64, width: f64 },
    /// `2k` slots of width `2r` starting at 0; odd slots carry a plateau
    /// `1 - pi r / 4` topped by a semicircle of radius `r`, even slots are empty.
    /// With `2 r k = 1` the total mass is 1 and each odd slot holds exactly its length.
    Finger { k: usize, r: f64 },
    /// Raw per-cell values.
    Tabulated(Vec<f64>),
    /// Piecewise constant on `pieces` equal slabs with heights drawn uniformly
    /// from `[0, 1)` by a ChaCha generator seeded with `seed`.
    Random { pieces: usize, seed: u64 },
}

/// Discretizes `profile` on `grid`.
pub fn make_density(grid: Grid, profile: &Profile) -> Result<GridDensity> {
    let n = grid.n();
    let h = grid.h();
    let l = grid.length();
    let values: Vec<f64> = match profile {
        Profile::Uniform => vec![1.0; n],
        Profile::Block { a, b, height } => {
            if !(a < b) || !height.is_finite() || *height < 0.0 {
                return Err(Error::InvalidDensity(format!("bad block [{a}, {b}] height {height}")));
            }
            (0..n)
                .map(|i| {
                    let (lo, hi) = (grid.face(i), grid.face(i + 1));
                    let overlap = (hi.min(*b) - lo.max(*a)).max(0.0);
                    height * overlap / h
                })
                .collect()
        }
        Profile::Triangle { center, width } => {
            if !(*width > 0.0) {
                return Err(Error::InvalidDensity(format!("triangle width must be positive (got {width})")));
            }
            let half = width / 2.0;
            let shifts: &[f64] = if grid.is_circle() { &[-l, 0.0, l] } else { &[0.0] };
            (0..n)
                .map(|i| {
                    let (lo, hi) = (grid.face(i), grid.face(i + 1));
                    shifts
                        .iter()
                        .map(|s| hat_primitive(hi - center - s, half) - hat_primitive(lo - center - s, half))
                        .sum::<f64>()
                        / h
                })
                .collect()
        }
        Profile::Finger { k, r } => {
            if *k == 0 || !(*r > 0.0) {
                return Err(Error::InvalidDensity(format!("finger needs k >= 1 and r > 0 (got k={k}, r={r})")));
            }
            let plateau = 1.0 - std::f64::consts::PI * r / 4.0;
            (0..n)
                .map(|i| {
                    let (lo, hi) = (grid.face(i), grid.face(i + 1));
                    let mut acc = 0.0;
                    for slot in (1..2 * k).step_by(2) {
                        let c = 2.0 * r * slot as f64 + r;
                        let a = lo.max(c - r);
                        let b = hi.min(c + r);
                        if b > a {
                            let cap = (cap_primitive(b - c, *r) - cap_primitive(a - c, *r)).max(0.0);
                            acc += plateau * (b - a) + cap;
                        }
                    }
                    acc / h
                })
                .collect()
        }
        Profile::Tabulated(v) => v.clone(),
        Profile::Random { pieces, seed } => {
            if *pieces == 0 {
                return Err(Error::InvalidDensity("random profile needs at least one piece".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let heights: Vec<f64> = (0..*pieces).map(|_| rng.random::<f64>()).collect();
            (0..n).map(|i| heights[i * pieces / n]).collect()
        }
    };
    GridDensity::normalized(grid, values)
}

/// Primitive of `max(0, 1 - |y| / half)` vanishing at `-infinity`.
fn hat_primitive(y: f64, half: f64) -> f64 {
    if y <= -half {
        0.0
    } else if y <= 0.0 {
        let t = y + half;
        t * t / (2.0 * half)
    } else if y < half {
        let t = half - y;
        half - t * t / (2.0 * half)
    } else {
        half
    }
}

/// Primitive of `sqrt(r^2 - y^2)` on `[-r, r]`, odd about 0.
fn cap_primitive(y: f64, r: f64) -> f64 {
    let y = y.clamp(-r, r);
    let root = ((r - y) * (r + y)).max(0.0).sqrt();
    0.5 * (y * root + r * r * y.atan2(root))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{LN_2, PI};

    fn interval(n: usize) -> Grid {
        Grid::new(Domain::interval(2.0).unwrap(), n).unwrap()
    }

    #[test]
    fn domain_and_grid_validation() {
        assert!(Domain::interval(1.0).is_err());
        assert!(Domain::circle(0.8).is_err());
        assert!(Grid::new(Domain::interval(2.0).unwrap(), 7).is_err());
        let g = interval(100);
        assert_eq!(g.h() * 100.0, 2.0);
        assert!((g.center(0) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn profile_examples() {
        let g = interval(100);
        let u = make_density(g, &Profile::Uniform).unwrap();
        assert!(u.values().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert!((u.entropy() + LN_2).abs() < 1e-12);
        assert!((u.sup_violation() + 0.5).abs() < 1e-15);

        let b = make_density(g, &Profile::Block { a: 0.0, b: 0.5, height: 2.0 }).unwrap();
        for (i, &v) in b.values().iter().enumerate() {
            let expect = if i < 25 { 2.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-12, "cell {i}: {v}");
        }
        assert!((b.entropy() - LN_2).abs() < 1e-12);
        assert!((b.sup_violation() - 1.0).abs() < 1e-12);

        let ind = make_density(g, &Profile::Block { a: 0.0, b: 1.0, height: 1.0 }).unwrap();
        assert!(ind.entropy().abs() < 1e-12);
        assert!((ind.total_variation() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_mass_profile_is_rejected() {
        let g = interval(16);
        assert!(make_density(g, &Profile::Tabulated(vec![0.0; 16])).is_err());
        assert!(make_density(g, &Profile::Block { a: 0.0, b: 1.0, height: 0.0 }).is_err());
    }

    #[test]
    fn finger_closed_forms() {
        let (k, r) = (10usize, 0.05);
        let plateau = 1.0 - PI * r / 4.0;
        let circle = Grid::new(Domain::circle(2.0).unwrap(), 4000).unwrap();
        let f = make_density(circle, &Profile::Finger { k, r }).unwrap();
        assert!((f.mass() - 1.0).abs() < 1e-12);
        // Raw mass before renormalization is already 2 r k = 1.
        let tv_closed = 2.0 * k as f64 * (plateau + r);
        assert!((f.total_variation() - tv_closed).abs() < 0.01, "tv {}", f.total_variation());
        // Bumps peak at plateau + r, slightly above the cap.
        assert!((f.linf() - (plateau + r)).abs() < 1e-6);
        // On the interval the jump at the right wall is not counted.
        let line = make_density(interval(4000), &Profile::Finger { k, r }).unwrap();
        assert!((line.total_variation() - (tv_closed - plateau)).abs() < 0.01);
    }

    #[test]
    fn triangle_is_exact_hat() {
        let g = interval(200);
        let t = make_density(g, &Profile::Triangle { center: 1.0, width: 1.2 }).unwrap();
        assert!((t.linf() - 1.0 / 0.6).abs() < 0.02);
        let c = Grid::new(Domain::circle(2.0).unwrap(), 200).unwrap();
        let wrapped = make_density(c, &Profile::Triangle { center: 0.0, width: 1.0 }).unwrap();
        assert!((wrapped.values()[0] - wrapped.values()[199]).abs() < 1e-12);
    }

    #[test]
    fn graph_length_examples() {
        let g = interval(100);
        let u = GridDensity::uniform(g);
        assert!((u.graph_length(1.0) - 2.0).abs() < 1e-12);
        let b = make_density(g, &Profile::Random { pieces: 7, seed: 3 }).unwrap();
        assert!((b.graph_length(0.0) - b.total_variation()).abs() < 1e-15);
        assert!(b.graph_length(0.5) <= b.graph_length(1.0));
        let c = Grid::new(Domain::circle(2.0).unwrap(), 64).unwrap();
        assert!((GridDensity::uniform(c).graph_length(1.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn monotone_profile_tv_is_end_difference() {
        let g = interval(32);
        let raw: Vec<f64> = (0..32).map(|i| 1.0 + i as f64 * 0.1).collect();
        let d = GridDensity::normalized(g, raw).unwrap();
        let v = d.values();
        assert!((d.total_variation() - (v[31] - v[0])).abs() < 1e-12);
    }

    #[test]
    fn random_profile_is_seeded() {
        let g = interval(64);
        let a = make_density(g, &Profile::Random { pieces: 5, seed: 9 }).unwrap();
        let b = make_density(g, &Profile::Random { pieces: 5, seed: 9 }).unwrap();
        let c = make_density(g, &Profile::Random { pieces: 5, seed: 10 }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
