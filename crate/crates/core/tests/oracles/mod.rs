//! Brute-force references shared by the oracle suites and the acceptance
//! target. Each one is deliberately naive.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tri_core::manifold::NeighborGraph;
use tri_core::persistence::{PersistenceDiagram, PointCloud};

pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> PointCloud {
    let pts: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    PointCloud::new(&pts).unwrap()
}

pub fn dist_matrix(c: &PointCloud) -> Vec<Vec<f64>> {
    let n = c.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    c.point(i)
                        .iter()
                        .zip(c.point(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        })
        .collect()
}

/// Agglomerative single linkage with the Lance-Williams min update.
pub fn single_linkage_heights(c: &PointCloud) -> Vec<f64> {
    let mut d = dist_matrix(c);
    let n = d.len();
    let mut alive: Vec<bool> = vec![true; n];
    let mut heights = Vec::new();
    for _ in 1..n {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..n {
            for j in i + 1..n {
                if alive[i] && alive[j] && d[i][j] < best.0 {
                    best = (d[i][j], i, j);
                }
            }
        }
        let (h, a, b) = best;
        heights.push(h);
        alive[b] = false;
        for k in 0..n {
            let m = d[a][k].min(d[b][k]);
            d[a][k] = m;
            d[k][a] = m;
        }
    }
    heights.sort_by(f64::total_cmp);
    heights
}

/// Standard column reduction of the full boundary matrix of the Rips complex
/// truncated at `r`, over GF(2). Returns finite H1 bars with positive
/// persistence and the births of essential H1 classes.
pub fn boundary_matrix_h1(c: &PointCloud, r: f64) -> (Vec<(f64, f64)>, Vec<f64>) {
    let d = dist_matrix(c);
    let n = d.len();
    // (value, dim, vertex list)
    let mut simplices: Vec<(f64, usize, Vec<usize>)> = (0..n).map(|i| (0.0, 0, vec![i])).collect();
    for i in 0..n {
        for j in i + 1..n {
            if d[i][j] <= r {
                simplices.push((d[i][j], 1, vec![i, j]));
            }
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let v = d[i][j].max(d[i][k]).max(d[j][k]);
                if v <= r {
                    simplices.push((v, 2, vec![i, j, k]));
                }
            }
        }
    }
    simplices.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let index: std::collections::HashMap<Vec<usize>, usize> =
        simplices.iter().enumerate().map(|(i, s)| (s.2.clone(), i)).collect();
    let mut columns: Vec<Vec<usize>> = simplices
        .iter()
        .map(|(_, dim, v)| {
            if *dim == 0 {
                return Vec::new();
            }
            let mut col: Vec<usize> = (0..v.len())
                .map(|skip| {
                    let face: Vec<usize> = v.iter().enumerate().filter(|(k, _)| *k != skip).map(|(_, &x)| x).collect();
                    index[&face]
                })
                .collect();
            col.sort_unstable();
            col
        })
        .collect();
    let mut low_owner: std::collections::HashMap<usize, usize> = Default::default();
    let mut paired = vec![false; simplices.len()];
    let mut bars = Vec::new();
    for j in 0..columns.len() {
        while let Some(&low) = columns[j].last() {
            match low_owner.get(&low) {
                Some(&k) => {
                    let other = columns[k].clone();
                    let mut merged = Vec::new();
                    let (mut a, mut b) = (0, 0);
                    let cur = &columns[j];
                    while a < cur.len() || b < other.len() {
                        match (cur.get(a), other.get(b)) {
                            (Some(x), Some(y)) if x == y => {
                                a += 1;
                                b += 1;
                            }
                            (Some(x), Some(y)) if x < y => {
                                merged.push(*x);
                                a += 1;
                            }
                            (Some(_), Some(y)) => {
                                merged.push(*y);
                                b += 1;
                            }
                            (Some(x), None) => {
                                merged.push(*x);
                                a += 1;
                            }
                            (None, Some(y)) => {
                                merged.push(*y);
                                b += 1;
                            }
                            (None, None) => unreachable!(),
                        }
                    }
                    columns[j] = merged;
                }
                None => {
                    low_owner.insert(low, j);
                    paired[low] = true;
                    paired[j] = true;
                    if simplices[j].1 == 2 {
                        let (b, dth) = (simplices[low].0, simplices[j].0);
                        if dth > b {
                            bars.push((b, dth));
                        }
                    }
                    break;
                }
            }
        }
    }
    let essential = (0..simplices.len())
        .filter(|&j| simplices[j].1 == 1 && !paired[j] && columns[j].is_empty())
        .map(|j| simplices[j].0)
        .collect();
    bars.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    (bars, essential)
}

pub fn sorted_pairs(d: &PersistenceDiagram) -> (Vec<(f64, f64)>, Vec<f64>) {
    let mut fin: Vec<(f64, f64)> = d.finite().map(|f| (f.birth, f.death.unwrap())).collect();
    fin.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut ess: Vec<f64> = d.essential().map(|f| f.birth).collect();
    ess.sort_by(f64::total_cmp);
    (fin, ess)
}

/// Bottleneck by trying every matching of the diagonal-augmented diagrams.
pub fn bottleneck_brute(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let size = a.len() + b.len();
    let half = |p: &(f64, f64)| (p.1 - p.0) / 2.0;
    let cost = |i: usize, j: usize| -> f64 {
        match (i < a.len(), j < b.len()) {
            (true, true) => (a[i].0 - b[j].0).abs().max((a[i].1 - b[j].1).abs()),
            (true, false) => half(&a[i]),
            (false, true) => half(&b[j]),
            (false, false) => 0.0,
        }
    };
    let mut perm: Vec<usize> = (0..size).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let c = p.iter().enumerate().map(|(i, &j)| cost(i, j)).fold(0.0, f64::max);
        best = best.min(c);
    });
    best
}

pub fn permute(v: &mut [usize], k: usize, f: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

pub fn random_measure(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Minimum cost over the vertices of the transportation polytope. Every
/// vertex is a basic feasible solution supported on `m + n - 1` cells, so
/// each such cell subset is solved and kept when non-negative.
pub fn w1_by_vertices(mu: &[f64], nu: &[f64], cost: &DMatrix<f64>) -> f64 {
    let (m, n) = (mu.len(), nu.len());
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let k = m + n - 1;
    let rhs = DVector::from_iterator(k, mu.iter().chain(nu.iter()).take(k).copied());
    let mut best = f64::INFINITY;
    let mut pick = vec![0usize; k];
    fn next(pick: &mut [usize], total: usize) -> bool {
        let k = pick.len();
        for i in (0..k).rev() {
            if pick[i] < total - k + i {
                pick[i] += 1;
                for j in i + 1..k {
                    pick[j] = pick[j - 1] + 1;
                }
                return true;
            }
        }
        false
    }
    for (i, p) in pick.iter_mut().enumerate() {
        *p = i;
    }
    loop {
        // Rows: supply constraints for every i, demand for all j but the
        // last (the dropped one is implied by total mass).
        let a = DMatrix::from_fn(k, k, |row, col| {
            let (ci, cj) = cells[pick[col]];
            let hit = if row < m { ci == row } else { cj == row - m };
            if hit {
                1.0
            } else {
                0.0
            }
        });
        if let Some(x) = a.clone().lu().solve(&rhs) {
            let residual = (&a * &x - &rhs).amax();
            if residual < 1e-9 && x.iter().all(|&v| v >= -1e-12) {
                let c: f64 = pick.iter().zip(x.iter()).map(|(&p, &v)| cost[cells[p]] * v).sum();
                best = best.min(c);
            }
        }
        if !next(&mut pick, cells.len()) {
            break;
        }
    }
    best
}

pub fn min_over_permutations(cost: &DMatrix<f64>) -> f64 {
    let mut p: Vec<usize> = (0..cost.nrows()).collect();
    let mut best = f64::INFINITY;
    permute(&mut p, 0, &mut |p| {
        best = best.min(p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum());
    });
    best
}

/// Two regular hexagons of unit side joined by one bridge between facing
/// vertices, each hexagon complete. With Euclidean ground costs the bridge
/// is negative only while the gap is short against the cluster depth, so the
/// gap here is 1.5 to 3 times the cluster edge length.
pub fn hexagon_pair(gap: f64) -> (PointCloud, NeighborGraph, (usize, usize)) {
    let mut pts = Vec::new();
    for (cx, facing) in [(-(1.0 + gap / 2.0), 0.0f64), (1.0 + gap / 2.0, std::f64::consts::PI)] {
        for i in 0..6 {
            let a = facing + i as f64 * std::f64::consts::PI / 3.0;
            pts.push(vec![cx + a.cos(), a.sin()]);
        }
    }
    let c = PointCloud::new(&pts).unwrap();
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); 12];
    for i in 0..12 {
        for j in 0..12 {
            if i != j && (i < 6) == (j < 6) {
                adjacency[i].push((j, c.dist(i, j)));
            }
        }
    }
    adjacency[0].push((6, c.dist(0, 6)));
    adjacency[6].push((0, c.dist(0, 6)));
    for list in adjacency.iter_mut() {
        list.sort_by_key(|e| e.0);
    }
    let g = NeighborGraph {
        k: 5,
        knn: adjacency.clone(),
        adjacency,
    };
    (c, g, (0, 6))
}
