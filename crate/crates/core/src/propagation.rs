//! Augmented-structure stream: a cosine kNN graph over the reconstructed
//! features, and personalized-PageRank propagation of the raw features
//! over it.

use crate::error::{Error, Result};
use crate::numerics::{sym_normalize, SparseMatrix, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedGraph {
    /// Binary symmetric kNN adjacency with an empty diagonal.
    pub knn: SparseMatrix,
    /// `D^{-1/2} Â D^{-1/2}`.
    pub normalized: SparseMatrix,
    pub k: usize,
}

impl AugmentedGraph {
    pub fn num_nodes(&self) -> usize {
        self.knn.rows()
    }

    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        (0..self.knn.rows())
            .map(|r| self.knn.row_iter(r).map(|(c, _)| c).collect())
            .collect()
    }
}

struct Cosine<'a> {
    x: &'a Tensor,
    norms: Vec<f64>,
}

impl<'a> Cosine<'a> {
    fn new(x: &'a Tensor) -> Self {
        let norms = (0..x.rows())
            .map(|r| x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        Self { x, norms }
    }

    /// Always evaluated with the smaller index first, so `(i, j)` and
    /// `(j, i)` produce the same bits.
    fn sim(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        let denom = self.norms[a] * self.norms[b];
        if denom == 0.0 {
            return 0.0;
        }
        let dot: f64 = self.x.row(a).iter().zip(self.x.row(b)).map(|(p, q)| p * q).sum();
        dot / denom
    }
}

/// Symmetric kNN graph: `i ~ j` iff `s_ij ≥ min(ε_i, ε_j)`, where `ε_i` is
/// the `k`-th largest cosine similarity between node `i` and any other node.
/// Self-pairs are excluded and all ties at the threshold are admitted, so
/// every node ends up with at least `k` neighbors.
pub fn knn_graph(x: &Tensor, k: usize) -> Result<AugmentedGraph> {
    let n = x.rows();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!("k={k} must satisfy 1 <= k < n={n}")));
    }
    let cos = Cosine::new(x);
    let mut row = Vec::with_capacity(n - 1);
    let thresholds: Vec<f64> = (0..n)
        .map(|i| {
            row.clear();
            row.extend((0..n).filter(|&j| j != i).map(|j| cos.sim(i, j)));
            let (_, kth, _) = row.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
            *kth
        })
        .collect();

    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if cos.sim(i, j) >= thresholds[i].min(thresholds[j]) {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
    }
    for list in &mut neighbors {
        list.sort_unstable();
    }
    let knn = SparseMatrix::from_adjacency(&neighbors);
    let normalized = sym_normalize(&knn);
    Ok(AugmentedGraph { knn, normalized, k })
}

/// `L` steps of `X ← (1−α) Ã X + α X'` from `X = X'`.
pub fn ppr_propagate(aug: &AugmentedGraph, x_prime: &Tensor, alpha: f64, steps: usize) -> Result<Tensor> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "teleport probability {alpha} outside (0, 1]"
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("propagation needs at least one step".into()));
    }
    if x_prime.rows() != aug.num_nodes() {
        return Err(Error::Shape(format!(
            "{} feature rows for a {}-node graph",
            x_prime.rows(),
            aug.num_nodes()
        )));
    }
    let mut x = x_prime.clone();
    for _ in 0..steps {
        let mut next = aug.normalized.matmul_dense(&x)?;
        for (v, &x0) in next.data_mut().iter_mut().zip(x_prime.data()) {
            *v = (1.0 - alpha) * *v + alpha * x0;
        }
        x = next;
    }
    Ok(x)
}
