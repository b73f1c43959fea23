//! Dynamic directed K-nearest-neighbor graphs over patch embeddings.
//!
//! Each node points at the `k` other nodes closest to it in squared
//! Euclidean distance. Self-loops are never produced; ties are broken by the
//! smaller node index, so the table is a deterministic function of the input.

use rayon::prelude::*;

use crate::error::{Result, VigError};
use crate::tensor::{Real, Tensor};

/// Directed adjacency with constant out-degree `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGraph {
    num_nodes: usize,
    k: usize,
    /// Row-major `[num_nodes, k]`, each row sorted by (distance, index).
    neighbors: Vec<usize>,
    /// Squared distances matching `neighbors`.
    distances: Vec<f64>,
}

impl PatchGraph {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node * self.k..(node + 1) * self.k]
    }

    pub fn distances(&self, node: usize) -> &[f64] {
        &self.distances[node * self.k..(node + 1) * self.k]
    }

    pub fn table(&self) -> &[usize] {
        &self.neighbors
    }

    /// Every directed edge as `(source, target, rank, squared distance)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        (0..self.num_nodes).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .zip(self.distances(i))
                .enumerate()
                .map(move |(rank, (&j, &d))| (i, j, rank, d))
        })
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len()
    }

    /// Checks out-degree, index range and absence of self-loops.
    pub fn validate(&self) -> Result<()> {
        if self.neighbors.len() != self.num_nodes * self.k {
            return Err(VigError::Data(format!(
                "neighbor table holds {} entries, expected {} x {}",
                self.neighbors.len(),
                self.num_nodes,
                self.k
            )));
        }
        for i in 0..self.num_nodes {
            for &j in self.neighbors(i) {
                if j >= self.num_nodes || j == i {
                    return Err(VigError::Data(format!("invalid edge {i} -> {j}")));
                }
            }
        }
        Ok(())
    }
}

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum()
}

/// All squared Euclidean distances between the rows of `x[N, D]`.
/// Not differentiable: the result is a constant tensor.
pub fn pairwise_sq_dist<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.expect_rank("pairwise_sq_dist", 2)?;
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let rows: Vec<&[T]> = x.data().chunks_exact(d).collect();
    let mut out = vec![T::zero(); n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = T::lit(sq_dist(rows[i], rows[j]));
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    Tensor::new(out, &[n, n])
}

/// Directed KNN graph over the rows of `x[N, D]`.
pub fn knn_graph<T: Real>(x: &Tensor<T>, k: usize) -> Result<PatchGraph> {
    x.expect_rank("knn_graph", 2)?;
    let (n, d) = (x.shape()[0], x.shape()[1]);
    if k == 0 || k >= n {
        return Err(VigError::Config(format!(
            "knn_graph needs 1 <= k <= N-1, got k={k} with N={n} nodes"
        )));
    }
    Ok(knn_rows(x.data(), n, d, k))
}

/// KNN over a raw row-major buffer. `k` must be at most `n - 1`; `k == 0`
/// yields an empty neighbor table.
pub(crate) fn knn_rows<T: Real>(data: &[T], n: usize, d: usize, k: usize) -> PatchGraph {
    assert!(k < n.max(1), "k={k} needs more than {n} nodes");
    let row = |i: usize| &data[i * d..(i + 1) * d];
    let by_dist_then_index =
        |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let select = |i: usize| -> Vec<(f64, usize)> {
        if k == 0 {
            return Vec::new();
        }
        let mut cand: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (sq_dist(row(i), row(j)), j))
            .collect();
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, by_dist_then_index);
            cand.truncate(k);
        }
        cand.sort_unstable_by(by_dist_then_index);
        cand
    };
    let picked: Vec<Vec<(f64, usize)>> = if n * n * d > 1 << 15 {
        (0..n).into_par_iter().map(select).collect()
    } else {
        (0..n).map(select).collect()
    };
    let mut neighbors = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    for row in picked {
        for (dist, j) in row {
            neighbors.push(j);
            distances.push(dist);
        }
    }
    PatchGraph {
        num_nodes: n,
        k,
        neighbors,
        distances,
    }
}
