//! Geometry of trajectory and channel point clouds.
//!
//! PCA of long parameter vectors goes through the small `n x n` Gram matrix.
//! The channel cloud is summarised by the spectral gap of its Gaussian kernel
//! and by Ollivier–Ricci curvature on its kNN graph.

mod transport;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::persistence::PointCloud;

pub use transport::{hungarian, wasserstein1_discrete, wasserstein2_empirical};

/// Floor applied to zero-length kNN edges.
pub const EDGE_LENGTH_FLOOR: f64 = 1e-12;

/// Eigenpairs of a symmetric matrix, eigenvalues in decreasing order.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Gram matrix of `history[i] - history[0]`.
pub fn anchored_gram<V: AsRef<[f64]>>(history: &[V]) -> DMatrix<f64> {
    let anchor = history[0].as_ref();
    let diffs: Vec<Vec<f64>> = history
        .iter()
        .map(|v| v.as_ref().iter().zip(anchor).map(|(a, b)| a - b).collect())
        .collect();
    let g = cross_gram(&diffs, &diffs);
    // Exact symmetry; the blocked product may differ in the last bit.
    DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| if i <= j { g[(i, j)] } else { g[(j, i)] })
}

/// `A^T B` for column sets `a` and `b` of equal length, through a blocked
/// matrix product. Pairwise dot products over vectors this long are bound by
/// memory bandwidth; the blocked product reuses cache lines.
pub fn cross_gram<V: AsRef<[f64]>, W: AsRef<[f64]>>(a: &[V], b: &[W]) -> DMatrix<f64> {
    let d = a.first().map(|v| v.as_ref().len()).unwrap_or(0);
    if a.is_empty() || b.is_empty() || d == 0 {
        return DMatrix::zeros(a.len(), b.len());
    }
    if a.len() <= 8 {
        // A few rows against many: packing `b` would cost more than the dots.
        return DMatrix::from_fn(a.len(), b.len(), |i, j| dot(a[i].as_ref(), b[j].as_ref()));
    }
    let at = DMatrix::from_iterator(d, a.len(), a.iter().flat_map(|v| v.as_ref().iter().copied())).transpose();
    let bm = DMatrix::from_iterator(d, b.len(), b.iter().flat_map(|v| v.as_ref().iter().copied()));
    at * bm
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorise the reduction.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

fn check_history<V: AsRef<[f64]>>(history: &[V], m: usize) -> Result<usize> {
    if m == 0 {
        return Err(Error::InvalidInput("PCA dimension must be >= 1".into()));
    }
    if history.len() < m + 1 {
        return Err(Error::InsufficientHistory {
            have: history.len(),
            need: m + 1,
        });
    }
    let d = history[0].as_ref().len();
    if d == 0 || history.iter().any(|v| v.as_ref().len() != d) {
        return Err(Error::InvalidInput("history vectors differ in length".into()));
    }
    if history.iter().any(|v| v.as_ref().iter().any(|x| !x.is_finite())) {
        return Err(Error::InvalidInput("non-finite history entry".into()));
    }
    Ok(d)
}

/// Projects `history` onto its top `m` principal components.
pub fn pca_project<V: AsRef<[f64]>>(history: &[V], m: usize) -> Result<PointCloud> {
    check_history(history, m)?;
    pca_from_gram(&anchored_gram(history), m, history)
}

/// PCA scores from a Gram matrix of the history taken about any fixed anchor
/// (double centring removes the anchor). `history` is only read to fix the
/// sign of each component: the first non-negligible loading is positive.
pub fn pca_from_gram<V: AsRef<[f64]>>(
    gram: &DMatrix<f64>,
    m: usize,
    history: &[V],
) -> Result<PointCloud> {
    let d = check_history(history, m)?;
    let n = history.len();
    if gram.nrows() != n || gram.ncols() != n {
        return Err(Error::InvalidInput(format!(
            "Gram is {}x{}, history has {n} entries",
            gram.nrows(),
            gram.ncols()
        )));
    }
    let row_means: Vec<f64> = (0..n).map(|i| gram.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let centred = DMatrix::from_fn(n, n, |i, j| gram[(i, j)] - row_means[i] - row_means[j] + grand);
    let (values, vectors) = sorted_eigen(centred);
    let floor = 1e-12 * values[0].max(0.0);
    let anchor = history[0].as_ref();

    let mut data = vec![0.0; n * m];
    for c in 0..m.min(n) {
        let lambda = values[c];
        if !(lambda > floor) || lambda <= 0.0 {
            continue;
        }
        let u = vectors.column(c);
        let sigma = lambda.sqrt();
        let mut sign = 1.0;
        for j in 0..d {
            let s: f64 = (0..n)
                .map(|i| u[i] * (history[i].as_ref()[j] - anchor[j]))
                .sum();
            if (s / sigma).abs() > 1e-8 {
                sign = s.signum();
                break;
            }
        }
        for i in 0..n {
            data[i * m + c] = sign * sigma * u[i];
        }
    }
    PointCloud::from_flat(m, data)
}

/// Gaussian kernel matrix of a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub entries: DMatrix<f64>,
    pub gamma: f64,
}

pub fn gaussian_kernel(cloud: &PointCloud, gamma: f64) -> Result<KernelMatrix> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidInput(format!("bandwidth must be positive, got {gamma}")));
    }
    let n = cloud.len();
    let two_g2 = 2.0 * gamma * gamma;
    let mut k = DMatrix::from_element(n, n, 1.0);
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = cloud
                .point(i)
                .iter()
                .zip(cloud.point(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let v = (-d2 / two_g2).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(KernelMatrix { entries: k, gamma })
}

/// Eigenvalues in decreasing order.
pub fn kernel_spectrum(k: &KernelMatrix) -> Vec<f64> {
    sorted_eigen(k.entries.clone()).0
}

/// `lambda_1 - lambda_2` of the kernel matrix.
pub fn spectral_gap(k: &KernelMatrix) -> f64 {
    let ev = kernel_spectrum(k);
    match ev.len() {
        0 => 0.0,
        1 => ev[0].max(0.0),
        _ => (ev[0] - ev[1]).max(0.0),
    }
}

/// Symmetrised k-nearest-neighbour graph.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    pub k: usize,
    /// Directed kNN lists, nearest first.
    pub knn: Vec<Vec<(usize, f64)>>,
    /// Undirected adjacency sorted by vertex index: an edge is present when
    /// either endpoint lists the other.
    pub adjacency: Vec<Vec<(usize, f64)>>,
}

impl NeighborGraph {
    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    /// Undirected edges `(i, j, length)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(i, nbrs)| {
            nbrs.iter()
                .filter(move |(j, _)| *j > i)
                .map(move |&(j, d)| (i, j, d))
        })
    }
}

pub fn knn_graph(cloud: &PointCloud, k: usize) -> Result<NeighborGraph> {
    let n = cloud.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidInput(format!(
            "k must satisfy 0 < k < {n}, got {k}"
        )));
    }
    let mut knn = Vec::with_capacity(n);
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        let mut cand: Vec<(usize, f64)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (j, cloud.dist(i, j)))
            .collect();
        cand.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        cand.truncate(k);
        for c in cand.iter_mut() {
            c.1 = c.1.max(EDGE_LENGTH_FLOOR);
        }
        for &(j, d) in &cand {
            adjacency[i].push((j, d));
            adjacency[j].push((i, d));
        }
        knn.push(cand);
    }
    for list in adjacency.iter_mut() {
        list.sort_by(|a, b| a.0.cmp(&b.0));
        list.dedup_by(|a, b| a.0 == b.0);
    }
    Ok(NeighborGraph { k, knn, adjacency })
}

/// Edge curvatures, zero off the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureMatrix {
    pub entries: DMatrix<f64>,
}

impl CurvatureMatrix {
    pub fn frobenius_norm(&self) -> f64 {
        self.entries.norm()
    }
}

/// Curvature of a single edge with uniform measures on each endpoint's
/// neighbours.
pub fn edge_curvature(g: &NeighborGraph, cloud: &PointCloud, x: usize, y: usize, d: f64) -> Result<f64> {
    let a = &g.adjacency[x];
    let b = &g.adjacency[y];
    let mu = vec![1.0 / a.len() as f64; a.len()];
    let nu = vec![1.0 / b.len() as f64; b.len()];
    let cost = DMatrix::from_fn(a.len(), b.len(), |i, j| {
        let (p, q) = (a[i].0, b[j].0);
        if p == q {
            0.0
        } else {
            cloud.dist(p, q)
        }
    });
    let w1 = wasserstein1_discrete(&mu, &nu, &cost)?;
    Ok(1.0 - w1 / d)
}

pub fn ollivier_ricci(g: &NeighborGraph, cloud: &PointCloud) -> Result<CurvatureMatrix> {
    let n = g.len();
    if cloud.len() != n {
        return Err(Error::InvalidInput(format!(
            "graph has {n} vertices, cloud has {} points",
            cloud.len()
        )));
    }
    let mut entries = DMatrix::zeros(n, n);
    for (x, y, d) in g.edges() {
        let kappa = edge_curvature(g, cloud, x, y, d)?;
        entries[(x, y)] = kappa;
        entries[(y, x)] = kappa;
    }
    Ok(CurvatureMatrix { entries })
}
