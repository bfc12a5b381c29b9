//! Reverse-mode differentiation over dense and sparse matrix primitives.
//!
//! Every forward call on [`Tape`] evaluates eagerly and appends one node.
//! [`Tape::backward`] walks the nodes in reverse insertion order, which is a
//! valid topological order because inputs always precede their consumers.
//!
//! ```
//! use mdsgnn::numerics::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let w = tape.param(Tensor::from_rows(&[vec![1.0, -2.0]]));
//! let loss = tape.sum(w);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(&tape, w).data(), &[1.0, 1.0]);
//! ```

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::tensor::{matmul, matmul_nt, matmul_tn};
use crate::numerics::{SparseMatrix, Tensor};

/// Probability floor applied before the log in [`Tape::cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;
/// Logits are clamped to `[-LOGIT_CLAMP, LOGIT_CLAMP]` inside the BCE loss.
pub const LOGIT_CLAMP: f64 = 30.0;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    SpMM(Arc<SparseMatrix>, Var),
    EdgeScores {
        pattern: Arc<SparseMatrix>,
        src: Var,
        dst: Var,
    },
    EdgeSoftmax {
        pattern: Arc<SparseMatrix>,
        logits: Var,
    },
    EdgeAggregate {
        pattern: Arc<SparseMatrix>,
        weights: Var,
        x: Var,
    },
    Add(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    Mul(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Elu(Var),
    Sigmoid(Var),
    RowSoftmax(Var),
    RowLogSoftmax(Var),
    Dropout(Var, Vec<f64>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanCols(Var),
    RowL2Normalize(Var),
    FillRows {
        base: Var,
        fill: Var,
        rows: Vec<usize>,
    },
    Sum(Var),
    CrossEntropy {
        probs: Var,
        targets: Vec<(usize, usize)>,
    },
    MaskedBce {
        logits: Var,
        target: Tensor,
        rows: Vec<usize>,
    },
    MaskedMse {
        pred: Var,
        target: Tensor,
        rows: Vec<usize>,
    },
    CrossViewNtXent(Var),
    CanonicalNtXent(Var),
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`; all-zero when the loss does not depend on it.
    pub fn get(&self, tape: &Tape, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.value(var).shape();
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, tape: &Tape, var: Var) -> Tensor {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = tape.value(var).shape();
                Tensor::zeros(r, c)
            }
        }
    }
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::Shape(format!("{op}: {detail}"))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul_nt(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMulNt(a, b), rg))
    }

    /// Sparse (constant) times dense.
    pub fn spmm(&mut self, a: Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let out = a.matmul_dense(self.value(x))?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SpMM(a, x), rg))
    }

    /// Per stored entry `(r, c)` of `pattern`: `src[r] + dst[c]`. `src` and
    /// `dst` are `n×1`; the result is `nnz×1`.
    pub fn edge_scores(&mut self, pattern: Arc<SparseMatrix>, src: Var, dst: Var) -> Result<Var> {
        let (s, d) = (self.value(src), self.value(dst));
        if s.shape() != (pattern.rows(), 1) || d.shape() != (pattern.cols(), 1) {
            return Err(shape_err(
                "edge_scores",
                format!(
                    "node scores {:?}/{:?} for a {}-node pattern",
                    s.shape(),
                    d.shape(),
                    pattern.rows()
                ),
            ));
        }
        let mut out = Vec::with_capacity(pattern.nnz());
        for r in 0..pattern.rows() {
            for e in pattern.row_range(r) {
                out.push(s.data()[r] + d.data()[pattern.indices()[e]]);
            }
        }
        let out = Tensor::from_vec(pattern.nnz(), 1, out)?;
        let rg = self.rg(&[src, dst]);
        Ok(self.push(out, Op::EdgeScores { pattern, src, dst }, rg))
    }

    /// Softmax of `nnz×1` edge logits within each row of `pattern`.
    pub fn edge_softmax(&mut self, pattern: Arc<SparseMatrix>, logits: Var) -> Result<Var> {
        let x = self.value(logits);
        if x.shape() != (pattern.nnz(), 1) {
            return Err(shape_err(
                "edge_softmax",
                format!("{:?} for nnz {}", x.shape(), pattern.nnz()),
            ));
        }
        let mut out = vec![0.0; pattern.nnz()];
        for r in 0..pattern.rows() {
            let range = pattern.row_range(r);
            if range.is_empty() {
                continue;
            }
            let seg = &x.data()[range.clone()];
            let m = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, &v) in out[range.clone()].iter_mut().zip(seg) {
                *o = (v - m).exp();
                z += *o;
            }
            for o in &mut out[range] {
                *o /= z;
            }
        }
        let out = Tensor::from_vec(pattern.nnz(), 1, out)?;
        let rg = self.rg(&[logits]);
        Ok(self.push(out, Op::EdgeSoftmax { pattern, logits }, rg))
    }

    /// `out_r = Σ_{(r,c) ∈ pattern} w_rc · x_c` with `nnz×1` edge weights.
    pub fn edge_aggregate(&mut self, pattern: Arc<SparseMatrix>, weights: Var, x: Var) -> Result<Var> {
        let (w, xv) = (self.value(weights), self.value(x));
        if w.shape() != (pattern.nnz(), 1) || xv.rows() != pattern.cols() {
            return Err(shape_err(
                "edge_aggregate",
                format!(
                    "weights {:?}, features {:?}, nnz {}",
                    w.shape(),
                    xv.shape(),
                    pattern.nnz()
                ),
            ));
        }
        let m = xv.cols();
        let mut out = Tensor::zeros(pattern.rows(), m);
        for r in 0..pattern.rows() {
            let orow = out.row_mut(r);
            for e in pattern.row_range(r) {
                let we = w.data()[e];
                for (o, &v) in orow.iter_mut().zip(xv.row(pattern.indices()[e])) {
                    *o += we * v;
                }
            }
        }
        let rg = self.rg(&[weights, x]);
        Ok(self.push(out, Op::EdgeAggregate { pattern, weights, x }, rg))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a `1×c` row to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.shape() != (1, xv.cols()) {
            return Err(shape_err(
                "add_row_bias",
                format!("{:?} vs {:?}", xv.shape(), bv.shape()),
            ));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddRowBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, s), rg)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let (r, c) = self.value(a).shape();
        let out = Tensor::from_vec(r, c, data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(&[x]);
        self.push(out, Op::LeakyRelu(x, slope), rg)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { v.exp_m1() });
        let rg = self.rg(&[x]);
        self.push(out, Op::Elu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn row_softmax(&mut self, x: Var) -> Var {
        let out = row_softmax(self.value(x));
        let rg = self.rg(&[x]);
        self.push(out, Op::RowSoftmax(x), rg)
    }

    pub fn row_log_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let lse = log_sum_exp(row.iter().copied());
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::RowLogSoftmax(x), rg)
    }

    /// Inverted dropout. Returns `x` itself when `train` is false or the
    /// rate is zero.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R, train: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} not in [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::from_vec(xv.rows(), xv.cols(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Dropout(x, mask), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| shape_err("concat_cols", "no inputs".into()))?;
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(shape_err("concat_cols", "row counts differ".into()));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, total);
        let mut offset = 0;
        for &p in parts {
            let pv = &self.nodes[p.0].value;
            let c = pv.cols();
            for r in 0..rows {
                out.row_mut(r)[offset..offset + c].copy_from_slice(pv.row(r));
            }
            offset += c;
        }
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| shape_err("concat_rows", "no inputs".into()))?;
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(shape_err("concat_rows", "column counts differ".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols.max(1);
        let out = Tensor::from_vec(if cols == 0 { 0 } else { rows }, cols, data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Mean over the columns of each row, giving an `n×1` tensor.
    pub fn mean_cols(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.cols().max(1) as f64;
        let data = (0..xv.rows()).map(|r| xv.row(r).iter().sum::<f64>() / c).collect();
        let out = Tensor::from_vec(xv.rows(), 1, data).expect("n×1");
        let rg = self.rg(&[x]);
        self.push(out, Op::MeanCols(x), rg)
    }

    /// Scales each row to unit L2 norm. Zero rows stay zero.
    pub fn row_l2_normalize(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v /= norm;
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::RowL2Normalize(x), rg)
    }

    /// Pairwise cosine similarities between the rows of `a` and of `b`.
    /// Zero rows have similarity 0 with everything.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        let na = self.row_l2_normalize(a);
        let nb = if a == b { na } else { self.row_l2_normalize(b) };
        self.matmul_nt(na, nb)
    }

    /// Replaces each listed row of `base` with the `1×f` row `fill`.
    pub fn fill_rows(&mut self, base: Var, fill: Var, rows: Vec<usize>) -> Result<Var> {
        let (bv, fv) = (self.value(base), self.value(fill));
        if fv.shape() != (1, bv.cols()) {
            return Err(shape_err(
                "fill_rows",
                format!("fill {:?} for width {}", fv.shape(), bv.cols()),
            ));
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= bv.rows()) {
            return Err(shape_err("fill_rows", format!("row {r} out of {}", bv.rows())));
        }
        let mut out = bv.clone();
        for &r in &rows {
            out.row_mut(r).copy_from_slice(fv.data());
        }
        let rg = self.rg(&[base, fill]);
        Ok(self.push(out, Op::FillRows { base, fill, rows }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(out, Op::Sum(x), rg)
    }

    /// `-(1/|targets|) Σ ln max(p[i, y], PROB_FLOOR)` over `(i, y)` pairs.
    pub fn cross_entropy(&mut self, probs: Var, targets: Vec<(usize, usize)>) -> Result<Var> {
        if targets.is_empty() {
            return Err(Error::InvalidArgument("cross_entropy over an empty index set".into()));
        }
        let p = self.value(probs);
        let mut total = 0.0;
        for &(i, y) in &targets {
            if i >= p.rows() || y >= p.cols() {
                return Err(shape_err(
                    "cross_entropy",
                    format!("target ({i}, {y}) outside {:?}", p.shape()),
                ));
            }
            total -= p.get(i, y).max(PROB_FLOOR).ln();
        }
        let out = Tensor::scalar(total / targets.len() as f64);
        let rg = self.rg(&[probs]);
        Ok(self.push(out, Op::CrossEntropy { probs, targets }, rg))
    }

    /// Mean over `rows` of the summed binary cross-entropy between
    /// `sigmoid(clamp(logits))` and `target`.
    pub fn masked_bce_with_logits(&mut self, logits: Var, target: Tensor, rows: Vec<usize>) -> Result<Var> {
        self.check_masked("masked_bce", logits, &target, &rows)?;
        let x = self.value(logits);
        let mut total = 0.0;
        for &r in &rows {
            for (&z, &t) in x.row(r).iter().zip(target.row(r)) {
                let z = z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
                // softplus(z) - t z == -[t ln σ(z) + (1-t) ln(1-σ(z))]
                total += z.max(0.0) - t * z + (-z.abs()).exp().ln_1p();
            }
        }
        let out = Tensor::scalar(total / rows.len() as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(out, Op::MaskedBce { logits, target, rows }, rg))
    }

    /// Mean over `rows` of the squared L2 distance between rows.
    pub fn masked_mse(&mut self, pred: Var, target: Tensor, rows: Vec<usize>) -> Result<Var> {
        self.check_masked("masked_mse", pred, &target, &rows)?;
        let x = self.value(pred);
        let total: f64 = rows
            .iter()
            .map(|&r| {
                x.row(r)
                    .iter()
                    .zip(target.row(r))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum();
        let out = Tensor::scalar(total / rows.len() as f64);
        let rg = self.rg(&[pred]);
        Ok(self.push(out, Op::MaskedMse { pred, target, rows }, rg))
    }

    fn check_masked(&self, op: &str, x: Var, target: &Tensor, rows: &[usize]) -> Result<()> {
        let xv = self.value(x);
        if xv.shape() != target.shape() {
            return Err(shape_err(
                op,
                format!("{:?} vs target {:?}", xv.shape(), target.shape()),
            ));
        }
        if rows.is_empty() {
            return Err(Error::InvalidArgument(format!("{op}: no rows to average over")));
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= xv.rows()) {
            return Err(shape_err(op, format!("row {r} out of {}", xv.rows())));
        }
        Ok(())
    }

    /// Contrastive loss on an `n×n` cross-view logit matrix `s`
    /// (`s[i][k] = sim(z_i, z'_k)/τ`). Positives sit on the diagonal; each
    /// denominator runs over the off-diagonal entries of the anchor's row
    /// (first term) or column (second term) only.
    pub fn cross_view_ntxent(&mut self, s: Var) -> Result<Var> {
        let sv = self.value(s);
        let n = sv.rows();
        if sv.cols() != n || n < 2 {
            return Err(shape_err(
                "ntxent",
                format!("needs a square matrix with n >= 2, got {:?}", sv.shape()),
            ));
        }
        let mut total = 0.0;
        for i in 0..n {
            let row_lse = log_sum_exp((0..n).filter(|&k| k != i).map(|k| sv.get(i, k)));
            let col_lse = log_sum_exp((0..n).filter(|&k| k != i).map(|k| sv.get(k, i)));
            total += 2.0 * sv.get(i, i) - row_lse - col_lse;
        }
        let out = Tensor::scalar(-total / (2.0 * n as f64));
        let rg = self.rg(&[s]);
        Ok(self.push(out, Op::CrossViewNtXent(s), rg))
    }

    /// SimCLR-style loss on a `2n×2n` logit matrix over the stacked views
    /// `[Z; Z']`: anchor `a` has positive `a ± n`, and its denominator covers
    /// every other row of the stack.
    pub fn canonical_ntxent(&mut self, s: Var) -> Result<Var> {
        let sv = self.value(s);
        let m = sv.rows();
        if sv.cols() != m || m < 4 || !m.is_multiple_of(2) {
            return Err(shape_err(
                "canonical_ntxent",
                format!("needs a 2n×2n matrix with n >= 2, got {:?}", sv.shape()),
            ));
        }
        let n = m / 2;
        let mut total = 0.0;
        for a in 0..m {
            let p = (a + n) % m;
            let lse = log_sum_exp((0..m).filter(|&k| k != a).map(|k| sv.get(a, k)));
            total += lse - sv.get(a, p);
        }
        let out = Tensor::scalar(total / m as f64);
        let rg = self.rg(&[s]);
        Ok(self.push(out, Op::CanonicalNtXent(s), rg))
    }

    /// `Σ w_k · x_k` over scalar inputs.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, w) in terms {
            let t = self.value(v);
            if t.shape() != (1, 1) {
                return Err(shape_err("weighted_sum", format!("non-scalar input {:?}", t.shape())));
            }
            total += w * t.item();
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.rg(&vars);
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec()), rg))
    }

    /// Reverse pass from a scalar.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::InvalidArgument(format!(
                "backward from a non-scalar of shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let want = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if want(*a) {
                    self.accumulate(grads, *a, matmul_nt(g, val(*b)).expect("shapes checked"));
                }
                if want(*b) {
                    self.accumulate(grads, *b, matmul_tn(val(*a), g).expect("shapes checked"));
                }
            }
            Op::MatMulNt(a, b) => {
                if want(*a) {
                    self.accumulate(grads, *a, matmul(g, val(*b)).expect("shapes checked"));
                }
                if want(*b) {
                    self.accumulate(grads, *b, matmul_tn(g, val(*a)).expect("shapes checked"));
                }
            }
            Op::SpMM(a, x) => {
                self.accumulate(grads, *x, a.transpose_matmul_dense(g).expect("shapes checked"));
            }
            Op::EdgeScores { pattern, src, dst } => {
                let mut gs = Tensor::zeros(pattern.rows(), 1);
                let mut gd = Tensor::zeros(pattern.cols(), 1);
                for r in 0..pattern.rows() {
                    for e in pattern.row_range(r) {
                        gs.data_mut()[r] += g.data()[e];
                        gd.data_mut()[pattern.indices()[e]] += g.data()[e];
                    }
                }
                self.accumulate(grads, *src, gs);
                self.accumulate(grads, *dst, gd);
            }
            Op::EdgeSoftmax { pattern, logits } => {
                let y = &node.value;
                let mut gx = Tensor::zeros(pattern.nnz(), 1);
                for r in 0..pattern.rows() {
                    let range = pattern.row_range(r);
                    let dot: f64 = range.clone().map(|e| y.data()[e] * g.data()[e]).sum();
                    for e in range {
                        gx.data_mut()[e] = y.data()[e] * (g.data()[e] - dot);
                    }
                }
                self.accumulate(grads, *logits, gx);
            }
            Op::EdgeAggregate { pattern, weights, x } => {
                let (w, xv) = (val(*weights), val(*x));
                if want(*weights) {
                    let mut gw = Tensor::zeros(pattern.nnz(), 1);
                    for r in 0..pattern.rows() {
                        let grow = g.row(r);
                        for e in pattern.row_range(r) {
                            gw.data_mut()[e] = grow.iter().zip(xv.row(pattern.indices()[e])).map(|(a, b)| a * b).sum();
                        }
                    }
                    self.accumulate(grads, *weights, gw);
                }
                if want(*x) {
                    let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                    for r in 0..pattern.rows() {
                        for e in pattern.row_range(r) {
                            let we = w.data()[e];
                            let c = pattern.indices()[e];
                            for (o, &gv) in gx.row_mut(c).iter_mut().zip(g.row(r)) {
                                *o += we * gv;
                            }
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRowBias(x, b) => {
                self.accumulate(grads, *x, g.clone());
                if want(*b) {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, g.map(|v| v * s)),
            Op::Mul(a, b) => {
                if want(*a) {
                    self.accumulate(grads, *a, zip_map(g, val(*b), |gv, bv| gv * bv));
                }
                if want(*b) {
                    self.accumulate(grads, *b, zip_map(g, val(*a), |gv, av| gv * av));
                }
            }
            Op::Relu(x) => self.accumulate(grads, *x, zip_map(g, val(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 })),
            Op::LeakyRelu(x, slope) => self.accumulate(
                grads,
                *x,
                zip_map(g, val(*x), |gv, xv| {
                    if xv > 0.0 {
                        gv
                    } else if xv < 0.0 {
                        slope * gv
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Elu(x) => self.accumulate(
                grads,
                *x,
                zip_map(g, &node.value, |gv, yv| if yv > 0.0 { gv } else { gv * (yv + 1.0) }),
            ),
            Op::Sigmoid(x) => self.accumulate(grads, *x, zip_map(g, &node.value, |gv, yv| gv * yv * (1.0 - yv))),
            Op::RowSoftmax(x) => {
                let y = &node.value;
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in gx.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                        *o = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::RowLogSoftmax(x) => {
                let y = &node.value;
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let gsum: f64 = g.row(r).iter().sum();
                    for ((o, &lp), &gv) in gx.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                        *o = gv - lp.exp() * gsum;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Dropout(x, mask) => {
                let data = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.rows(), g.cols(), data).expect("shape"));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let c = val(p).cols();
                    if want(p) {
                        let mut gp = Tensor::zeros(g.rows(), c);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + c]);
                        }
                        self.accumulate(grads, p, gp);
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = val(p).shape();
                    if want(p) {
                        let data = g.data()[offset * c..(offset + r) * c].to_vec();
                        self.accumulate(grads, p, Tensor::from_vec(r, c, data).expect("shape"));
                    }
                    offset += r;
                }
            }
            Op::MeanCols(x) => {
                let (r, c) = val(*x).shape();
                let mut gx = Tensor::zeros(r, c);
                for i in 0..r {
                    let v = g.data()[i] / c as f64;
                    gx.row_mut(i).fill(v);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::RowL2Normalize(x) => {
                let (xv, y) = (val(*x), &node.value);
                let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    let norm = xv.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        continue;
                    }
                    let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in gx.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                        *o = (gv - yv * dot) / norm;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::FillRows { base, fill, rows } => {
                if want(*base) {
                    let mut gb = g.clone();
                    for &r in rows {
                        gb.row_mut(r).fill(0.0);
                    }
                    self.accumulate(grads, *base, gb);
                }
                if want(*fill) {
                    let mut gf = Tensor::zeros(1, g.cols());
                    for &r in rows {
                        for (o, &v) in gf.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *fill, gf);
                }
            }
            Op::Sum(x) => {
                let (r, c) = val(*x).shape();
                self.accumulate(grads, *x, Tensor::filled(r, c, g.item()));
            }
            Op::CrossEntropy { probs, targets } => {
                let p = val(*probs);
                let scale = g.item() / targets.len() as f64;
                let mut gp = Tensor::zeros(p.rows(), p.cols());
                for &(i, y) in targets {
                    let pv = p.get(i, y);
                    if pv > PROB_FLOOR {
                        gp.set(i, y, gp.get(i, y) - scale / pv);
                    }
                }
                self.accumulate(grads, *probs, gp);
            }
            Op::MaskedBce { logits, target, rows } => {
                let x = val(*logits);
                let scale = g.item() / rows.len() as f64;
                let mut gx = Tensor::zeros(x.rows(), x.cols());
                for &r in rows {
                    for ((o, &z), &t) in gx.row_mut(r).iter_mut().zip(x.row(r)).zip(target.row(r)) {
                        if z.abs() < LOGIT_CLAMP {
                            *o = scale * (sigmoid(z) - t);
                        }
                    }
                }
                self.accumulate(grads, *logits, gx);
            }
            Op::MaskedMse { pred, target, rows } => {
                let x = val(*pred);
                let scale = 2.0 * g.item() / rows.len() as f64;
                let mut gx = Tensor::zeros(x.rows(), x.cols());
                for &r in rows {
                    for ((o, &a), &b) in gx.row_mut(r).iter_mut().zip(x.row(r)).zip(target.row(r)) {
                        *o = scale * (a - b);
                    }
                }
                self.accumulate(grads, *pred, gx);
            }
            Op::CrossViewNtXent(s) => {
                let sv = val(*s);
                let n = sv.rows();
                let w = g.item() / (2.0 * n as f64);
                let mut gs = Tensor::zeros(n, n);
                for i in 0..n {
                    gs.set(i, i, gs.get(i, i) - 2.0 * w);
                    let row_lse = log_sum_exp((0..n).filter(|&k| k != i).map(|k| sv.get(i, k)));
                    let col_lse = log_sum_exp((0..n).filter(|&k| k != i).map(|k| sv.get(k, i)));
                    for k in (0..n).filter(|&k| k != i) {
                        gs.set(i, k, gs.get(i, k) + w * (sv.get(i, k) - row_lse).exp());
                        gs.set(k, i, gs.get(k, i) + w * (sv.get(k, i) - col_lse).exp());
                    }
                }
                self.accumulate(grads, *s, gs);
            }
            Op::CanonicalNtXent(s) => {
                let sv = val(*s);
                let m = sv.rows();
                let n = m / 2;
                let w = g.item() / m as f64;
                let mut gs = Tensor::zeros(m, m);
                for a in 0..m {
                    let p = (a + n) % m;
                    let lse = log_sum_exp((0..m).filter(|&k| k != a).map(|k| sv.get(a, k)));
                    for k in (0..m).filter(|&k| k != a) {
                        gs.set(a, k, gs.get(a, k) + w * (sv.get(a, k) - lse).exp());
                    }
                    gs.set(a, p, gs.get(a, p) - w);
                }
                self.accumulate(grads, *s, gs);
            }
            Op::WeightedSum(terms) => {
                for &(v, wt) in terms {
                    self.accumulate(grads, v, Tensor::scalar(g.item() * wt));
                }
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Row-wise softmax on a plain tensor.
pub fn row_softmax(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(1, 2));
        let y = t.row_softmax(x);
        assert_eq!(t.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let w = t.param(Tensor::from_rows(&[vec![1.0, 2.0], vec![-3.0, 4.0]]));
        let l = t.sum(w);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(&t, w), Tensor::filled(2, 2, 1.0));
    }

    #[test]
    fn relu_dead_region_has_zero_gradient() {
        let mut t = Tape::new();
        let w = t.param(Tensor::from_rows(&[vec![-1.0, -0.5], vec![-3.0, -2.0]]));
        let r = t.relu(w);
        let l = t.sum(r);
        let g = t.backward(l).unwrap();
        assert!(g.get(&t, w).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_and_leaky_relu_subgradient_at_zero_is_zero() {
        let mut t = Tape::new();
        let w = t.param(Tensor::zeros(1, 3));
        let a = t.relu(w);
        let b = t.leaky_relu(w, 0.2);
        let s = t.add(a, b).unwrap();
        let l = t.sum(s);
        let g = t.backward(l).unwrap();
        assert!(g.get(&t, w).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn untouched_params_get_zero_gradient() {
        let mut t = Tape::new();
        let used = t.param(Tensor::filled(1, 2, 1.0));
        let unused = t.param(Tensor::filled(3, 3, 1.0));
        let l = t.sum(used);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(&t, unused), Tensor::zeros(3, 3));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let w = t.param(Tensor::zeros(2, 2));
        assert!(t.backward(w).is_err());
    }

    #[test]
    fn cosine_of_orthogonal_rows() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::identity(2));
        let s = t.cosine_similarity(x, x).unwrap();
        assert_eq!(t.value(s), &Tensor::identity(2));
    }

    #[test]
    fn cosine_with_zero_row_is_zero() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]));
        let s = t.cosine_similarity(x, x).unwrap();
        assert_eq!(t.value(s).row(0), &[0.0, 0.0]);
    }

    #[test]
    fn dropout_off_is_identity() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::filled(3, 3, 2.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(t.dropout(x, 0.5, &mut rng, false).unwrap(), x);
    }

    #[test]
    fn dropout_scales_kept_entries() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::filled(20, 20, 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = t.dropout(x, 0.25, &mut rng, true).unwrap();
        for &v in t.value(y).data() {
            assert!(v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15);
        }
    }

    #[test]
    fn edge_softmax_rows_sum_to_one() {
        let p = Arc::new(SparseMatrix::from_adjacency_with_self_loops(&[
            vec![1, 2],
            vec![0],
            vec![0],
        ]));
        let mut t = Tape::new();
        let e = t.constant(Tensor::from_vec(p.nnz(), 1, (0..p.nnz()).map(|k| k as f64 * 0.7 - 1.0).collect()).unwrap());
        let a = t.edge_softmax(p.clone(), e).unwrap();
        for r in 0..3 {
            let s: f64 = p.row_range(r).map(|k| t.value(a).data()[k]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_on_large_logits() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[vec![800.0, -800.0, 0.0], vec![1e-3, 2e-3, 3e-3]]));
        let y = t.row_softmax(x);
        for r in 0..2 {
            let row = t.value(y).row(r);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| v.is_finite()));
        }
    }
}
