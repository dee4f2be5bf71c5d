//! Exact discrete optimal transport on small instances, used as an independent
//! oracle. The transportation problem is solved by successive shortest paths
//! with Dijkstra on reduced costs; optimality is then audited from the final
//! potentials (dual feasibility, complementary slackness, duality gap) instead
//! of being taken on trust.

use crate::error::{Error, Result};
use crate::grid::GridDensity;

/// Largest instance (sources plus targets) the oracle accepts.
pub const MAX_POINTS: usize = 4096;
const AUDIT_TOL: f64 = 1e-9;
/// Residual amounts below this are treated as exhausted.
const FLOW_EPS: f64 = 1e-15;

/// Weighted points in one or two dimensions (1D points use `y = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<[f64; 2]>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() || points.is_empty() {
            return Err(Error::Oracle(format!("{} points with {} weights", points.len(), weights.len())));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Oracle("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Oracle(format!("weights sum to {total}, not 1")));
        }
        Ok(DiscreteMeasure { points, weights })
    }

    pub fn on_line(xs: &[f64], weights: Vec<f64>) -> Result<Self> {
        Self::new(xs.iter().map(|&x| [x, 0.0]).collect(), weights)
    }

    /// Atoms `rho_i h` at the cell centers.
    pub fn from_density(rho: &GridDensity) -> Self {
        let g = rho.grid();
        let h = g.h();
        DiscreteMeasure {
            points: g.centers().into_iter().map(|x| [x, 0.0]).collect(),
            weights: rho.values().iter().map(|v| v * h).collect(),
        }
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Ground metric between support points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GroundCost {
    Euclidean,
    /// 1D geodesic distance on a circle of the given circumference.
    Periodic(f64),
}

impl GroundCost {
    fn distance(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        match *self {
            GroundCost::Euclidean => (a[0] - b[0]).hypot(a[1] - b[1]),
            GroundCost::Periodic(l) => {
                let d = (a[0] - b[0]).rem_euclid(l);
                d.min(l - d)
            }
        }
    }
}

/// Optimal coupling with its certificate.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    /// Nonzero entries `(source, target, mass)`.
    pub entries: Vec<(usize, usize, f64)>,
    pub source_marginal: Vec<f64>,
    pub target_marginal: Vec<f64>,
    pub cost: f64,
    /// Primal cost minus dual objective.
    pub duality_gap: f64,
    /// Largest `u_i + v_j - c_ij` over all pairs.
    pub dual_violation: f64,
    /// `sum gamma_ij |c_ij - u_i - v_j|`.
    pub slackness_residual: f64,
}

impl TransportPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.source_marginal.len()];
        for &(i, _, f) in &self.entries {
            r[i] += f;
        }
        r
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.target_marginal.len()];
        for &(_, j, f) in &self.entries {
            c[j] += f;
        }
        c
    }
}

struct Flow {
    flow: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
}

/// Balanced transportation problem `min sum c_ij f_ij` with row sums `supply`
/// and column sums `demand`, by successive shortest augmenting paths.
fn transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<Flow> {
    let (m, n) = (supply.len(), demand.len());
    let s_node = 0;
    let t_node = m + n + 1;
    let nodes = m + n + 2;
    let mut rem_s: Vec<f64> = supply.to_vec();
    let mut rem_t: Vec<f64> = demand.to_vec();
    let mut flow = vec![0.0; m * n];
    let mut pi = vec![0.0; nodes];
    let c = |i: usize, j: usize| cost[i * n + j];

    let mut dist = vec![f64::INFINITY; nodes];
    let mut done = vec![false; nodes];
    let mut parent = vec![usize::MAX; nodes];
    let mut iterations = 0usize;
    loop {
        let left: f64 = rem_s.iter().sum();
        if left <= FLOW_EPS * (m as f64).max(1.0) {
            break;
        }
        iterations += 1;
        if iterations > 50 * (m + n) * (m + n) + 1000 {
            return Err(Error::Oracle("augmentation limit exceeded".into()));
        }
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        done.iter_mut().for_each(|d| *d = false);
        parent.iter_mut().for_each(|p| *p = usize::MAX);
        dist[s_node] = 0.0;
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for k in 0..nodes {
                if !done[k] && dist[k] < best {
                    best = dist[k];
                    u = k;
                }
            }
            if u == usize::MAX || u == t_node {
                break;
            }
            done[u] = true;
            let du = dist[u];
            let relax = |to: usize, rc: f64, dist: &mut Vec<f64>, parent: &mut Vec<usize>| {
                let nd = du + rc.max(0.0);
                if nd < dist[to] {
                    dist[to] = nd;
                    parent[to] = u;
                }
            };
            if u == s_node {
                for i in 0..m {
                    if rem_s[i] > FLOW_EPS {
                        relax(1 + i, pi[s_node] - pi[1 + i], &mut dist, &mut parent);
                    }
                }
            } else if u <= m {
                let i = u - 1;
                for j in 0..n {
                    let to = 1 + m + j;
                    if !done[to] {
                        relax(to, c(i, j) + pi[u] - pi[to], &mut dist, &mut parent);
                    }
                }
                if supply[i] - rem_s[i] > FLOW_EPS {
                    relax(s_node, pi[u] - pi[s_node], &mut dist, &mut parent);
                }
            } else {
                let j = u - 1 - m;
                for i in 0..m {
                    let to = 1 + i;
                    if !done[to] && flow[i * n + j] > FLOW_EPS {
                        relax(to, -c(i, j) + pi[u] - pi[to], &mut dist, &mut parent);
                    }
                }
                if rem_t[j] > FLOW_EPS {
                    relax(t_node, pi[u] - pi[t_node], &mut dist, &mut parent);
                }
            }
        }
        if !dist[t_node].is_finite() {
            return Err(Error::Oracle("no augmenting path: marginals are infeasible".into()));
        }
        let dt = dist[t_node];
        for k in 0..nodes {
            pi[k] += dist[k].min(dt);
        }
        // Walk the path back from the sink and find the bottleneck.
        let mut path = vec![t_node];
        let mut k = t_node;
        while k != s_node {
            k = parent[k];
            path.push(k);
        }
        path.reverse();
        let mut amount = f64::INFINITY;
        for w in path.windows(2) {
            let (a, b) = (w[0], w[1]);
            let cap = if a == s_node {
                rem_s[b - 1]
            } else if b == t_node {
                rem_t[a - 1 - m]
            } else if a <= m && b > m {
                f64::INFINITY
            } else if a > m && b <= m && b != s_node {
                flow[(b - 1) * n + (a - 1 - m)]
            } else {
                // source -> super source: undo part of a supply
                supply[a - 1] - rem_s[a - 1]
            };
            amount = amount.min(cap);
        }
        for w in path.windows(2) {
            let (a, b) = (w[0], w[1]);
            if a == s_node {
                rem_s[b - 1] -= amount;
                if rem_s[b - 1] < FLOW_EPS {
                    rem_s[b - 1] = 0.0;
                }
            } else if b == t_node {
                rem_t[a - 1 - m] -= amount;
                if rem_t[a - 1 - m] < FLOW_EPS {
                    rem_t[a - 1 - m] = 0.0;
                }
            } else if a <= m && b > m {
                flow[(a - 1) * n + (b - 1 - m)] += amount;
            } else if a > m && b <= m && b != s_node {
                let f = &mut flow[(b - 1) * n + (a - 1 - m)];
                *f -= amount;
                if *f < FLOW_EPS {
                    *f = 0.0;
                }
            } else {
                rem_s[a - 1] += amount;
            }
        }
    }
    let u = (0..m).map(|i| -pi[1 + i]).collect();
    let v = (0..n).map(|j| pi[1 + m + j]).collect();
    Ok(Flow { flow, u, v })
}

fn certify(supply: &[f64], demand: &[f64], cost: &[f64], f: Flow) -> Result<TransportPlan> {
    let n = demand.len();
    let mut primal = 0.0;
    let mut viol: f64 = 0.0;
    let mut slack = 0.0;
    let mut entries = Vec::new();
    let scale = cost.iter().fold(1.0f64, |a, &c| a.max(c.abs()));
    for (i, ui) in f.u.iter().enumerate() {
        for (j, vj) in f.v.iter().enumerate() {
            let cij = cost[i * n + j];
            let fij = f.flow[i * n + j];
            viol = viol.max(ui + vj - cij);
            if fij > 0.0 {
                primal += fij * cij;
                slack += fij * (cij - ui - vj).abs();
                entries.push((i, j, fij));
            }
        }
    }
    let dual: f64 = supply.iter().zip(&f.u).map(|(a, u)| a * u).sum::<f64>()
        + demand.iter().zip(&f.v).map(|(b, v)| b * v).sum::<f64>();
    let gap = primal - dual;
    if viol > AUDIT_TOL * scale || slack > AUDIT_TOL * scale || gap.abs() > AUDIT_TOL * scale {
        return Err(Error::Oracle(format!(
            "optimality audit failed: dual violation {viol:e}, slackness {slack:e}, gap {gap:e}"
        )));
    }
    Ok(TransportPlan {
        entries,
        source_marginal: supply.to_vec(),
        target_marginal: demand.to_vec(),
        cost: primal,
        duality_gap: gap,
        dual_violation: viol.max(0.0),
        slackness_residual: slack,
    })
}

/// Exact optimal plan for the cost `d(x, y)^p` with Euclidean `d`.
pub fn solve_ot(a: &DiscreteMeasure, b: &DiscreteMeasure, p: u32) -> Result<TransportPlan> {
    solve_ot_with(a, b, p, GroundCost::Euclidean)
}

pub fn solve_ot_with(a: &DiscreteMeasure, b: &DiscreteMeasure, p: u32, ground: GroundCost) -> Result<TransportPlan> {
    if p != 1 && p != 2 {
        return Err(Error::Oracle(format!("unsupported exponent {p}")));
    }
    if a.len() + b.len() > MAX_POINTS {
        return Err(Error::Oracle(format!("{} points exceed the oracle cap of {MAX_POINTS}", a.len() + b.len())));
    }
    let (sa, sb): (f64, f64) = (a.weights.iter().sum(), b.weights.iter().sum());
    if (sa - sb).abs() > 1e-10 {
        return Err(Error::Oracle(format!("marginal masses differ ({sa} vs {sb})")));
    }
    let cost: Vec<f64> = a
        .points
        .iter()
        .flat_map(|&x| b.points.iter().map(move |&y| ground.distance(x, y).powi(p as i32)))
        .collect();
    let f = transport(&a.weights, &b.weights, &cost)?;
    certify(&a.weights, &b.weights, &cost, f)
}

/// Quadratic-cost projection of `mu` onto `{b : 0 <= b_k <= capacity_k, sum b = 1}`
/// supported on the points of `mu`. A slack source holding `sum c - 1` reaches
/// every target at zero cost, turning the free target marginal into a balanced
/// transportation problem; the slack's share of each target is unused capacity.
pub fn lp_project(mu: &DiscreteMeasure, capacity: &[f64]) -> Result<DiscreteMeasure> {
    lp_project_with(mu, capacity, GroundCost::Euclidean)
}

pub fn lp_project_with(mu: &DiscreteMeasure, capacity: &[f64], ground: GroundCost) -> Result<DiscreteMeasure> {
    let k = mu.len();
    if capacity.len() != k {
        return Err(Error::Oracle(format!("{} capacities for {k} points", capacity.len())));
    }
    if 2 * k + 1 > MAX_POINTS {
        return Err(Error::Oracle(format!("{k} points exceed the oracle cap")));
    }
    if capacity.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(Error::Oracle("capacities must be finite and nonnegative".into()));
    }
    let total: f64 = capacity.iter().sum();
    if total < 1.0 - 1e-12 {
        return Err(Error::Oracle(format!("capacities sum to {total} < 1")));
    }
    let mut supply = mu.weights.clone();
    supply.push((total - 1.0).max(0.0));
    let mut cost = Vec::with_capacity((k + 1) * k);
    for x in &mu.points {
        for y in &mu.points {
            cost.push(ground.distance(*x, *y).powi(2));
        }
    }
    cost.extend(std::iter::repeat_n(0.0, k));
    let f = transport(&supply, capacity, &cost)?;
    let plan = certify(&supply, capacity, &cost, f)?;
    let mut b = vec![0.0; k];
    for &(i, j, m) in &plan.entries {
        if i < k {
            b[j] += m;
        }
    }
    let s: f64 = b.iter().sum();
    for v in &mut b {
        *v /= s;
    }
    DiscreteMeasure::new(mu.points.clone(), b)
}
