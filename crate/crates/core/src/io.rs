//! CSV emission and parsing. Every float is written with 17 significant digits.

use crate::error::{Error, Result};
use crate::grid::{Domain, Grid, GridDensity};

/// Scientific notation with 17 significant digits (round-trips every `f64`).
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Builds a CSV document from a header and numeric rows.
pub fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(fmt17).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// `x,rho` rows at cell centers.
pub fn density_csv(rho: &GridDensity) -> String {
    let g = rho.grid();
    csv(&["x", "rho"], rho.values().iter().enumerate().map(|(i, &v)| vec![g.center(i), v]))
}

/// The length `l` with `l / n == h` that has the shortest decimal form. `h * n`
/// alone can land an ulp away from the length the file was written with.
fn infer_length(h: f64, n: usize) -> f64 {
    let guess = h * n as f64;
    let mut below = guess;
    let mut above = guess;
    let mut candidates = vec![guess];
    for _ in 0..4 {
        below = below.next_down();
        above = above.next_up();
        candidates.extend([below, above]);
    }
    candidates
        .into_iter()
        .filter(|l| l / n as f64 == h)
        .min_by_key(|l| l.to_string().len())
        .unwrap_or(guess)
}

/// Parses an `x,rho` file. The grid spacing is inferred from the first center
/// (`x_0 = h / 2`) and checked against the remaining rows.
pub fn parse_density_csv(text: &str, circle: bool) -> Result<GridDensity> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Io("empty density file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["x", "rho"] {
        return Err(Error::Io(format!("expected header `x,rho`, found `{header}`")));
    }
    let mut xs = Vec::new();
    let mut rs = Vec::new();
    for (k, line) in lines.enumerate() {
        let mut it = line.split(',').map(str::trim);
        let parse = |v: Option<&str>| -> Result<f64> {
            v.ok_or_else(|| Error::Io(format!("row {} is short", k + 1)))?
                .parse::<f64>()
                .map_err(|e| Error::Io(format!("row {}: {e}", k + 1)))
        };
        xs.push(parse(it.next())?);
        rs.push(parse(it.next())?);
    }
    let n = xs.len();
    if n == 0 {
        return Err(Error::Io("density file has no rows".into()));
    }
    let h = 2.0 * xs[0];
    for (i, x) in xs.iter().enumerate() {
        if (x - (i as f64 + 0.5) * h).abs() > 1e-9 * (1.0 + x.abs()) {
            return Err(Error::Io(format!("row {} is not a uniform cell center (x = {x})", i + 1)));
        }
    }
    let length = infer_length(h, n);
    let domain = if circle { Domain::circle(length)? } else { Domain::interval(length)? };
    let grid = Grid::new(domain, n)?;
    let mass: f64 = rs.iter().sum::<f64>() * grid.h();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDensity(format!("file density has mass {mass}, expected 1")));
    }
    GridDensity::normalized(grid, rs)
}
