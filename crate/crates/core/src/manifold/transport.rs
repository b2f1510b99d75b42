//! Exact discrete optimal transport.
//!
//! W1 between two weighted atom sets is solved as a min-cost flow by
//! successive shortest paths. W2 between equal-size empirical clouds is a
//! minimum-cost perfect matching, solved with the Hungarian algorithm.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::persistence::PointCloud;

const MASS_TOL: f64 = 1e-9;
/// Residual flow below this fraction of the total mass is treated as spent.
const FLOW_EPS: f64 = 1e-12;
/// Relaxations smaller than this fraction of the largest cost are ignored,
/// so rounding can never open a negative cycle in the residual graph.
const COST_EPS: f64 = 1e-12;

struct Arc {
    to: usize,
    cap: f64,
    cost: f64,
}

struct FlowNetwork {
    arcs: Vec<Arc>,
    out: Vec<Vec<usize>>,
    cap_eps: f64,
    cost_eps: f64,
}

impl FlowNetwork {
    fn new(nodes: usize, mass: f64, max_cost: f64) -> Self {
        Self {
            arcs: Vec::new(),
            out: vec![Vec::new(); nodes],
            cap_eps: FLOW_EPS * mass,
            cost_eps: COST_EPS * max_cost.max(f64::MIN_POSITIVE),
        }
    }

    fn add(&mut self, from: usize, to: usize, cap: f64, cost: f64) {
        self.out[from].push(self.arcs.len());
        self.arcs.push(Arc { to, cap, cost });
        self.out[to].push(self.arcs.len());
        self.arcs.push(Arc {
            to: from,
            cap: 0.0,
            cost: -cost,
        });
    }

    /// Bellman–Ford shortest path tree over arcs with residual capacity.
    fn shortest_paths(&self, source: usize) -> (Vec<f64>, Vec<usize>) {
        let n = self.out.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut via = vec![usize::MAX; n];
        dist[source] = 0.0;
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                if dist[u] == f64::INFINITY {
                    continue;
                }
                for &a in &self.out[u] {
                    let arc = &self.arcs[a];
                    if arc.cap > self.cap_eps && dist[u] + arc.cost < dist[arc.to] - self.cost_eps {
                        dist[arc.to] = dist[u] + arc.cost;
                        via[arc.to] = a;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        (dist, via)
    }

    fn tail(&self, arc: usize) -> usize {
        self.arcs[arc ^ 1].to
    }

    /// Pushes up to `amount` from `source` to `sink`; returns the total cost.
    fn min_cost_flow(&mut self, source: usize, sink: usize, amount: f64) -> f64 {
        let mut remaining = amount;
        let mut total = 0.0;
        let nodes = self.out.len();
        while remaining > self.cap_eps {
            let (dist, via) = self.shortest_paths(source);
            if dist[sink] == f64::INFINITY {
                break;
            }
            let mut push = remaining;
            let mut v = sink;
            let mut steps = 0;
            while v != source {
                let a = via[v];
                push = push.min(self.arcs[a].cap);
                v = self.tail(a);
                steps += 1;
                if steps > nodes {
                    // A tree built with the tolerances above has no cycles;
                    // bail out rather than spin if rounding ever forms one.
                    return total;
                }
            }
            let mut v = sink;
            while v != source {
                let a = via[v];
                self.arcs[a].cap -= push;
                self.arcs[a ^ 1].cap += push;
                v = self.tail(a);
            }
            total += push * dist[sink];
            remaining -= push;
        }
        total
    }
}

fn check_measure(name: &str, w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::InvalidMeasure(format!("{name} has no atoms")));
    }
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidMeasure(format!(
            "{name} has negative or non-finite weights"
        )));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > MASS_TOL {
        return Err(Error::InvalidMeasure(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

/// Exact W1 between `mu` and `nu` under `cost[(i, j)]` (rows index `mu`).
pub fn wasserstein1_discrete(mu: &[f64], nu: &[f64], cost: &DMatrix<f64>) -> Result<f64> {
    check_measure("mu", mu)?;
    check_measure("nu", nu)?;
    if cost.nrows() != mu.len() || cost.ncols() != nu.len() {
        return Err(Error::InvalidInput(format!(
            "cost is {}x{}, measures have {} and {} atoms",
            cost.nrows(),
            cost.ncols(),
            mu.len(),
            nu.len()
        )));
    }
    if cost.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::InvalidInput("cost must be finite and >= 0".into()));
    }
    let (m, n) = (mu.len(), nu.len());
    let source = m + n;
    let sink = source + 1;
    let mass = mu.iter().sum::<f64>().min(nu.iter().sum::<f64>());
    let mut net = FlowNetwork::new(m + n + 2, mass, cost.max());
    for (i, &w) in mu.iter().enumerate() {
        net.add(source, i, w, 0.0);
    }
    for (j, &w) in nu.iter().enumerate() {
        net.add(m + j, sink, w, 0.0);
    }
    for i in 0..m {
        for j in 0..n {
            net.add(i, m + j, f64::INFINITY, cost[(i, j)]);
        }
    }
    Ok(net.min_cost_flow(source, sink, mass).max(0.0))
}

/// Minimum-cost perfect matching on a square cost matrix. Returns the column
/// assigned to each row and the total cost.
pub fn hungarian(cost: &DMatrix<f64>) -> (Vec<usize>, f64) {
    let n = cost.nrows();
    debug_assert_eq!(n, cost.ncols());
    // Potentials-based O(n^3) formulation with 1-based sentinels.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[(i, j)])
        .sum();
    (assignment, total)
}

/// W2 between two equal-size empirical clouds with uniform weights.
pub fn wasserstein2_empirical(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "W2 needs equal sizes, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.dim() != y.dim() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    let n = x.len();
    let cost = DMatrix::from_fn(n, n, |i, j| {
        x.point(i)
            .iter()
            .zip(y.point(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    });
    let (_, total) = hungarian(&cost);
    Ok((total.max(0.0) / n as f64).sqrt())
}
