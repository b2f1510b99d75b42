//! Vietoris–Rips persistence in dimensions 0 and 1.
//!
//! H0 is computed with union-find over edges in filtration order, which
//! reproduces single-linkage merge heights. H1 is computed by reducing the
//! coboundary matrix of edges over GF(2), processing edges from the latest to
//! the earliest and clearing the edges already known to kill an H0 class.
//!
//! Edges are ordered by `(length, i, j)` and triangles by `(latest edge,
//! opposite vertex)`, so output is deterministic for a given input ordering.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite set of points in `R^D`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    data: Vec<f64>,
}

impl PointCloud {
    pub fn new(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points
            .first()
            .map(|p| p.len())
            .ok_or_else(|| Error::InvalidInput("empty point cloud".into()))?;
        let mut data = Vec::with_capacity(dim * points.len());
        for p in points {
            if p.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "point of dimension {} in a cloud of dimension {dim}",
                    p.len()
                )));
            }
            data.extend_from_slice(p);
        }
        Self::from_flat(dim, data)
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("ambient dimension must be >= 1".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::InvalidInput(format!(
                "{} coordinates do not split into points of dimension {dim}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite coordinate".into()));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        euclidean(self.point(i), self.point(j))
    }

    /// Returns a copy with every coordinate multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    /// Largest pairwise distance.
    pub fn diameter(&self) -> f64 {
        let n = self.len();
        let mut best = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                best = best.max(self.dist(i, j));
            }
        }
        best
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// One bar of a persistence diagram. `death == None` is an essential class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub birth: f64,
    pub death: Option<f64>,
    pub dim: u8,
}

impl Feature {
    pub fn finite(birth: f64, death: f64, dim: u8) -> Self {
        Self {
            birth,
            death: Some(death),
            dim,
        }
    }

    pub fn essential(birth: f64, dim: u8) -> Self {
        Self {
            birth,
            death: None,
            dim,
        }
    }

    pub fn is_essential(&self) -> bool {
        self.death.is_none()
    }

    pub fn lifetime(&self) -> Option<f64> {
        self.death.map(|d| d - self.birth)
    }
}

/// Persistence diagram of a single homology dimension.
///
/// Serialises as a JSON array of `{birth, death|null, dim}` objects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Feature>", try_from = "Vec<Feature>")]
pub struct PersistenceDiagram {
    dim: u8,
    features: Vec<Feature>,
}

impl PersistenceDiagram {
    pub fn new(dim: u8, features: Vec<Feature>) -> Result<Self> {
        if dim > 1 {
            return Err(Error::InvalidInput(format!("homology dimension {dim} > 1")));
        }
        for f in &features {
            if f.dim != dim {
                return Err(Error::InvalidInput(format!(
                    "feature of dimension {} in an H{dim} diagram",
                    f.dim
                )));
            }
            if !f.birth.is_finite() {
                return Err(Error::InvalidInput("non-finite birth".into()));
            }
            if let Some(d) = f.death {
                if !d.is_finite() || d < f.birth {
                    return Err(Error::InvalidInput(format!(
                        "death {d} precedes birth {}",
                        f.birth
                    )));
                }
            }
        }
        Ok(Self { dim, features })
    }

    pub fn empty(dim: u8) -> Self {
        Self {
            dim,
            features: Vec::new(),
        }
    }

    pub fn dim(&self) -> u8 {
        self.dim
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn finite(&self) -> impl Iterator<Item = &Feature> {
        self.features.iter().filter(|f| !f.is_essential())
    }

    pub fn essential(&self) -> impl Iterator<Item = &Feature> {
        self.features.iter().filter(|f| f.is_essential())
    }

    /// Features sorted by `(birth, death)`, essential classes last; handy for
    /// comparing diagrams as multisets.
    pub fn sorted_features(&self) -> Vec<Feature> {
        let mut out = self.features.clone();
        out.sort_by(|a, b| {
            a.birth.total_cmp(&b.birth).then_with(|| match (a.death, b.death) {
                (Some(x), Some(y)) => x.total_cmp(&y),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            })
        });
        out
    }
}

impl From<PersistenceDiagram> for Vec<Feature> {
    fn from(d: PersistenceDiagram) -> Self {
        d.features
    }
}

impl TryFrom<Vec<Feature>> for PersistenceDiagram {
    type Error = Error;

    fn try_from(features: Vec<Feature>) -> Result<Self> {
        let dim = features.first().map_or(0, |f| f.dim);
        Self::new(dim, features)
    }
}

/// Finite lifetimes `death - birth` of one diagram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lifetimes {
    pub values: Vec<f64>,
    pub dim: u8,
}

impl Lifetimes {
    pub fn new(dim: u8, values: Vec<f64>) -> Self {
        Self { values, dim }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Finite-feature lifetimes in diagram order.
pub fn lifetimes(d: &PersistenceDiagram) -> Lifetimes {
    Lifetimes {
        values: d.features.iter().filter_map(Feature::lifetime).collect(),
        dim: d.dim,
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when `a` and `b` were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    len: f64,
    i: u32,
    j: u32,
}

fn edge_order(a: &Edge, b: &Edge) -> std::cmp::Ordering {
    a.len
        .total_cmp(&b.len)
        .then(a.i.cmp(&b.i))
        .then(a.j.cmp(&b.j))
}

fn validate_cloud(cloud: &PointCloud, max_radius: f64) -> Result<()> {
    if cloud.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "persistence needs at least 2 points, got {}",
            cloud.len()
        )));
    }
    if !(max_radius > 0.0) {
        return Err(Error::InvalidInput(format!(
            "max_radius must be positive, got {max_radius}"
        )));
    }
    Ok(())
}

/// All edges of length `<= max_radius`, in filtration order.
fn sorted_edges(cloud: &PointCloud, max_radius: f64) -> Vec<Edge> {
    let n = cloud.len();
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let len = cloud.dist(i, j);
            if len <= max_radius {
                edges.push(Edge {
                    len,
                    i: i as u32,
                    j: j as u32,
                });
            }
        }
    }
    edges.sort_unstable_by(edge_order);
    edges
}

/// Minimum spanning forest of the `max_radius`-truncated graph by dense Prim,
/// returned in filtration order. Kruskal over this forest produces the same
/// merge heights as Kruskal over the full edge list.
fn spanning_forest(cloud: &PointCloud, max_radius: f64) -> Vec<Edge> {
    let n = cloud.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![usize::MAX; n];
    let mut forest = Vec::with_capacity(n - 1);
    for root in 0..n {
        if in_tree[root] {
            continue;
        }
        best[root] = 0.0;
        from[root] = usize::MAX;
        loop {
            let mut u = usize::MAX;
            let mut du = f64::INFINITY;
            for v in 0..n {
                if !in_tree[v] && best[v] < du {
                    du = best[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            in_tree[u] = true;
            if from[u] != usize::MAX {
                let (a, b) = (from[u].min(u), from[u].max(u));
                forest.push(Edge {
                    len: du,
                    i: a as u32,
                    j: b as u32,
                });
            }
            let pu = cloud.point(u);
            for v in 0..n {
                if in_tree[v] {
                    continue;
                }
                let d = euclidean(pu, cloud.point(v));
                if d <= max_radius && d < best[v] {
                    best[v] = d;
                    from[v] = u;
                }
            }
        }
        // Vertices left at infinity belong to other components.
        for v in 0..n {
            if !in_tree[v] {
                best[v] = f64::INFINITY;
                from[v] = usize::MAX;
            }
        }
    }
    forest.sort_unstable_by(edge_order);
    forest
}

/// H0 by union-find. Returns the diagram and, per edge, whether it merged two
/// components (such edges never create H1 classes).
fn h0_from_edges(n: usize, edges: &[Edge]) -> (PersistenceDiagram, Vec<bool>) {
    let mut uf = UnionFind::new(n);
    let mut merged = vec![false; edges.len()];
    let mut features = Vec::with_capacity(n);
    let mut components = n;
    for (k, e) in edges.iter().enumerate() {
        if uf.union(e.i as usize, e.j as usize) {
            merged[k] = true;
            components -= 1;
            features.push(Feature::finite(0.0, e.len, 0));
        }
    }
    features.extend((0..components).map(|_| Feature::essential(0.0, 0)));
    (PersistenceDiagram { dim: 0, features }, merged)
}

/// XOR of two sorted, duplicate-free key lists.
fn symmetric_difference(a: &[u64], b: &[u64], out: &mut Vec<u64>) {
    out.clear();
    let (mut x, mut y) = (0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => {
                out.push(a[x]);
                x += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[y]);
                y += 1;
            }
            std::cmp::Ordering::Equal => {
                x += 1;
                y += 1;
            }
        }
    }
    out.extend_from_slice(&a[x..]);
    out.extend_from_slice(&b[y..]);
}

fn h1_from_edges(n: usize, edges: &[Edge], merged: &[bool]) -> PersistenceDiagram {
    const ABSENT: u32 = u32::MAX;
    let mut index = vec![ABSENT; n * n];
    for (k, e) in edges.iter().enumerate() {
        let (i, j) = (e.i as usize, e.j as usize);
        index[i * n + j] = k as u32;
        index[j * n + i] = k as u32;
    }
    let n64 = n as u64;
    // A triangle is keyed by its latest edge and the vertex opposite to it;
    // key order is filtration order.
    let triangle_len = |key: u64| edges[(key / n64) as usize].len;

    let mut pivots: HashMap<u64, usize> = HashMap::new();
    let mut reduced: Vec<Vec<u64>> = Vec::new();
    let mut features = Vec::new();
    let mut column = Vec::new();
    let mut scratch = Vec::new();

    for k in (0..edges.len()).rev() {
        if merged[k] {
            continue;
        }
        let e = edges[k];
        let (i, j) = (e.i as usize, e.j as usize);
        column.clear();
        for v in 0..n {
            if v == i || v == j {
                continue;
            }
            let a = index[i * n + v];
            let b = index[j * n + v];
            if a == ABSENT || b == ABSENT {
                continue;
            }
            let k32 = k as u32;
            let (latest, opposite) = if k32 > a && k32 > b {
                (k32, v)
            } else if a > b {
                (a, j)
            } else {
                (b, i)
            };
            column.push(latest as u64 * n64 + opposite as u64);
        }
        column.sort_unstable();

        while let Some(&low) = column.first() {
            match pivots.get(&low) {
                Some(&other) => {
                    symmetric_difference(&column, &reduced[other], &mut scratch);
                    std::mem::swap(&mut column, &mut scratch);
                }
                None => break,
            }
        }

        match column.first() {
            None => features.push(Feature::essential(e.len, 1)),
            Some(&low) => {
                let death = triangle_len(low);
                if death > e.len {
                    features.push(Feature::finite(e.len, death, 1));
                }
                pivots.insert(low, reduced.len());
                reduced.push(column.clone());
            }
        }
    }
    PersistenceDiagram { dim: 1, features }
}

/// Vietoris–Rips persistence up to `max_dim` (0 or 1), truncated at
/// `max_radius`. Returns one diagram per dimension. Zero-persistence H1 pairs
/// are omitted; zero-length H0 bars (duplicate points) are kept so that the H0
/// feature count always equals the point count.
pub fn rips_persistence(
    cloud: &PointCloud,
    max_dim: u8,
    max_radius: f64,
) -> Result<Vec<PersistenceDiagram>> {
    validate_cloud(cloud, max_radius)?;
    if max_dim > 1 {
        return Err(Error::InvalidInput(format!(
            "max_dim {max_dim} unsupported (0 or 1)"
        )));
    }
    let n = cloud.len();
    if max_dim == 0 {
        let forest = spanning_forest(cloud, max_radius);
        let (h0, _) = h0_from_edges(n, &forest);
        return Ok(vec![h0]);
    }
    let edges = sorted_edges(cloud, max_radius);
    let (h0, merged) = h0_from_edges(n, &edges);
    let h1 = h1_from_edges(n, &edges, &merged);
    Ok(vec![h0, h1])
}

/// H0 persistence of `(x, f)` samples: each coordinate is standardised to
/// zero mean and unit variance, then Rips H0 is taken at the full diameter.
pub fn sublevel_h0(samples: &[(f64, f64)]) -> Result<PersistenceDiagram> {
    if samples.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|(x, f)| !x.is_finite() || !f.is_finite()) {
        return Err(Error::InvalidInput("non-finite sample".into()));
    }
    let n = samples.len() as f64;
    let standardise = |values: Vec<f64>| -> (Vec<f64>, bool) {
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 0.0 && sd.is_finite() {
            (values.iter().map(|v| (v - mean) / sd).collect(), true)
        } else {
            (vec![0.0; values.len()], false)
        }
    };
    let (xs, x_varies) = standardise(samples.iter().map(|s| s.0).collect());
    let (fs, f_varies) = standardise(samples.iter().map(|s| s.1).collect());
    if !x_varies && !f_varies {
        return Err(Error::DegenerateCloud(
            "both coordinates have zero variance".into(),
        ));
    }
    let data = xs.iter().zip(&fs).flat_map(|(x, f)| [*x, *f]).collect();
    let cloud = PointCloud::from_flat(2, data)?;
    let radius = cloud.diameter();
    if !(radius > 0.0) {
        return Err(Error::DegenerateCloud("zero diameter".into()));
    }
    let mut diagrams = rips_persistence(&cloud, 0, radius)?;
    Ok(diagrams.remove(0))
}

fn half_persistence(f: &Feature) -> f64 {
    f.lifetime().unwrap_or(f64::INFINITY) / 2.0
}

fn linf(a: &Feature, b: &Feature) -> f64 {
    let db = (a.birth - b.birth).abs();
    match (a.death, b.death) {
        (Some(x), Some(y)) => db.max((x - y).abs()),
        _ => db,
    }
}

/// Whether a perfect matching exists in a bipartite graph given as adjacency
/// lists (Kuhn's augmenting paths).
fn has_perfect_matching(adj: &[Vec<usize>], right: usize) -> bool {
    fn augment(
        u: usize,
        adj: &[Vec<usize>],
        seen: &mut [bool],
        match_right: &mut [usize],
    ) -> bool {
        for &v in &adj[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if match_right[v] == usize::MAX || augment(match_right[v], adj, seen, match_right) {
                match_right[v] = u;
                return true;
            }
        }
        false
    }
    let mut match_right = vec![usize::MAX; right];
    let mut seen = vec![false; right];
    for u in 0..adj.len() {
        seen.iter_mut().for_each(|s| *s = false);
        if !augment(u, adj, &mut seen, &mut match_right) {
            return false;
        }
    }
    true
}

fn finite_bottleneck(a: &[Feature], b: &[Feature]) -> f64 {
    let (na, nb) = (a.len(), b.len());
    if na + nb == 0 {
        return 0.0;
    }
    let mut candidates: Vec<f64> = Vec::with_capacity(na * nb + na + nb + 1);
    candidates.push(0.0);
    for p in a {
        candidates.push(half_persistence(p));
        for q in b {
            candidates.push(linf(p, q));
        }
    }
    candidates.extend(b.iter().map(half_persistence));
    candidates.sort_unstable_by(f64::total_cmp);
    candidates.dedup();

    // Left: a-points then diagonal copies of b-points.
    // Right: b-points then diagonal copies of a-points.
    let feasible = |delta: f64| -> bool {
        let size = na + nb;
        let mut adj = vec![Vec::new(); size];
        for (i, p) in a.iter().enumerate() {
            for (j, q) in b.iter().enumerate() {
                if linf(p, q) <= delta {
                    adj[i].push(j);
                }
            }
            if half_persistence(p) <= delta {
                adj[i].push(nb + i);
            }
        }
        for (j, q) in b.iter().enumerate() {
            let row = &mut adj[na + j];
            if half_persistence(q) <= delta {
                row.push(j);
            }
            row.extend(nb..nb + na);
        }
        has_perfect_matching(&adj, size)
    };

    let (mut lo, mut hi) = (0usize, candidates.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if feasible(candidates[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    candidates[lo]
}

/// Exact bottleneck distance. Finite features may match the diagonal;
/// essential features are matched to essential features only.
pub fn bottleneck_distance(d1: &PersistenceDiagram, d2: &PersistenceDiagram) -> Result<f64> {
    if d1.dim != d2.dim {
        return Err(Error::IncomparableDiagrams(format!(
            "H{} vs H{}",
            d1.dim, d2.dim
        )));
    }
    let mut ess1: Vec<f64> = d1.essential().map(|f| f.birth).collect();
    let mut ess2: Vec<f64> = d2.essential().map(|f| f.birth).collect();
    if ess1.len() != ess2.len() {
        return Err(Error::IncomparableDiagrams(format!(
            "{} vs {} essential features",
            ess1.len(),
            ess2.len()
        )));
    }
    ess1.sort_unstable_by(f64::total_cmp);
    ess2.sort_unstable_by(f64::total_cmp);
    let essential = ess1
        .iter()
        .zip(&ess2)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);

    let f1: Vec<Feature> = d1.finite().copied().collect();
    let f2: Vec<Feature> = d2.finite().copied().collect();
    Ok(essential.max(finite_bottleneck(&f1, &f2)))
}
