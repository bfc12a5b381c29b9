//! Compressed sparse row matrices for adjacency structure.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// CSR matrix. Column indices are sorted and unique within each row.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

impl SparseMatrix {
    /// Builds a CSR matrix from `(row, col, value)` triplets. Duplicate
    /// coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= rows || c >= cols) {
            return Err(Error::Shape(format!("entry ({r}, {c}) outside a {rows}x{cols} matrix")));
        }
        triplets.sort_by_key(|a| (a.0, a.1));
        let mut offsets = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            indices.push(c);
            values.push(v);
            offsets[r + 1] += 1;
        }
        for r in 0..rows {
            offsets[r + 1] += offsets[r];
        }
        let mut m = Self {
            rows,
            cols,
            offsets,
            indices,
            values,
            symmetric: false,
        };
        m.symmetric = m.check_symmetric();
        Ok(m)
    }

    /// Binary adjacency from per-node sorted neighbor lists.
    pub fn from_adjacency(neighbors: &[Vec<usize>]) -> Self {
        let n = neighbors.len();
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        let mut indices = Vec::new();
        for list in neighbors {
            debug_assert!(list.windows(2).all(|w| w[0] < w[1]));
            indices.extend_from_slice(list);
            offsets.push(indices.len());
        }
        let values = vec![1.0; indices.len()];
        let mut m = Self {
            rows: n,
            cols: n,
            offsets,
            indices,
            values,
            symmetric: false,
        };
        m.symmetric = m.check_symmetric();
        m
    }

    /// Same as [`from_adjacency`](Self::from_adjacency) with the diagonal
    /// added to every row.
    pub fn from_adjacency_with_self_loops(neighbors: &[Vec<usize>]) -> Self {
        let with_loops: Vec<Vec<usize>> = neighbors
            .iter()
            .enumerate()
            .map(|(i, list)| {
                let mut l = list.clone();
                if let Err(pos) = l.binary_search(&i) {
                    l.insert(pos, i);
                }
                l
            })
            .collect();
        Self::from_adjacency(&with_loops)
    }

    fn check_symmetric(&self) -> bool {
        if self.rows != self.cols {
            return false;
        }
        (0..self.rows).all(|i| self.row_iter(i).all(|(j, v)| self.get(j, i).is_some_and(|w| w == v)))
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    #[inline]
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    #[inline]
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        self.offsets[r]..self.offsets[r + 1]
    }

    pub fn row_iter(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.row_range(r).map(move |e| (self.indices[e], self.values[e]))
    }

    pub fn degree(&self, r: usize) -> usize {
        self.offsets[r + 1] - self.offsets[r]
    }

    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        let range = self.row_range(r);
        self.indices[range.clone()]
            .binary_search(&c)
            .ok()
            .map(|k| self.values[range.start + k])
    }

    /// Row index of every stored entry, aligned with `indices()`.
    pub fn row_of_entries(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            out.extend(std::iter::repeat_n(r, self.degree(r)));
        }
        out
    }

    /// Same sparsity pattern with replaced values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.nnz() {
            return Err(Error::Shape(format!(
                "expected {} values, got {}",
                self.nnz(),
                values.len()
            )));
        }
        let mut m = Self {
            values,
            symmetric: false,
            ..self.clone()
        };
        m.symmetric = m.check_symmetric();
        Ok(m)
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row_iter(r) {
                t.set(r, c, v);
            }
        }
        t
    }

    /// `self · x`.
    pub fn matmul_dense(&self, x: &Tensor) -> Result<Tensor> {
        if self.cols != x.rows() {
            return Err(Error::Shape(format!(
                "spmm: {}x{} sparse times {}x{} dense",
                self.rows,
                self.cols,
                x.rows(),
                x.cols()
            )));
        }
        let m = x.cols();
        let mut out = Tensor::zeros(self.rows, m);
        for r in 0..self.rows {
            let orow = out.row_mut(r);
            for e in self.row_range(r) {
                let v = self.values[e];
                for (o, &xv) in orow.iter_mut().zip(x.row(self.indices[e])) {
                    *o += v * xv;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · x`.
    pub fn transpose_matmul_dense(&self, x: &Tensor) -> Result<Tensor> {
        if self.rows != x.rows() {
            return Err(Error::Shape(format!(
                "spmm_t: {}x{} sparse (transposed) times {}x{} dense",
                self.rows,
                self.cols,
                x.rows(),
                x.cols()
            )));
        }
        let m = x.cols();
        let mut out = Tensor::zeros(self.cols, m);
        for r in 0..self.rows {
            let xrow = x.row(r);
            for e in self.row_range(r) {
                let v = self.values[e];
                let orow = out.row_mut(self.indices[e]);
                for (o, &xv) in orow.iter_mut().zip(xrow) {
                    *o += v * xv;
                }
            }
        }
        Ok(out)
    }
}

/// `D^{-1/2} A D^{-1/2}` with `D` the row-sum degree matrix of `a`.
/// Zero-degree rows stay zero. Each off-diagonal value is computed once for
/// the upper triangle and mirrored, so the result is exactly symmetric.
pub fn sym_normalize(a: &SparseMatrix) -> SparseMatrix {
    let inv_sqrt: Vec<f64> = (0..a.rows())
        .map(|r| {
            let d: f64 = a.row_iter(r).map(|(_, v)| v).sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut values = Vec::with_capacity(a.nnz());
    for r in 0..a.rows() {
        for (c, v) in a.row_iter(r) {
            let (lo, hi) = if r <= c { (r, c) } else { (c, r) };
            let upper = if r <= c { v } else { a.get(lo, hi).unwrap_or(v) };
            values.push(inv_sqrt[lo] * upper * inv_sqrt[hi]);
        }
    }
    a.with_values(values).expect("pattern preserved")
}
