//! Finite-difference checks of every differentiable tape primitive at 100
//! random points each.

use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;

use mdsgnn::numerics::{grad_check, SparseMatrix, Tape, Tensor, Var};
use mdsgnn::rng;
use mdsgnn::Result;

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-5;

struct Gen(rng::Rng);

impl Gen {
    fn new(seed: u64) -> Self {
        Gen(rng::stream(seed, "primitive-gradients"))
    }

    fn dim(&mut self) -> usize {
        self.0.gen_range(1..=4)
    }

    fn tensor(&mut self, rows: usize, cols: usize) -> Tensor {
        Tensor::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| self.0.gen_range(-2.0..2.0)).collect(),
        )
        .unwrap()
    }

    /// Entries at least 0.05 away from zero, so a finite-difference step
    /// never straddles a kink.
    fn off_kink(&mut self, rows: usize, cols: usize) -> Tensor {
        self.tensor(rows, cols)
            .map(|v| if v < 0.0 { v - 0.05 } else { v + 0.05 })
    }

    fn positive(&mut self, rows: usize, cols: usize) -> Tensor {
        Tensor::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| self.0.gen_range(0.1..1.0)).collect(),
        )
        .unwrap()
    }

    /// Random pattern on `n` nodes where every row has at least one entry.
    fn pattern(&mut self, n: usize) -> Arc<SparseMatrix> {
        let lists: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let mut l: Vec<usize> = (0..n).filter(|&j| j == i || self.0.gen_bool(0.4)).collect();
                l.dedup();
                l
            })
            .collect();
        let triplets: Vec<(usize, usize, f64)> = lists
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.iter().map(move |&j| (i, j, 1.0)))
            .collect();
        Arc::new(SparseMatrix::from_triplets(n, n, triplets).unwrap())
    }
}

/// `sum(y ⊙ w)` for a fixed random `w`, so every output entry matters.
fn weigh(tape: &mut Tape, y: Var, w: &Tensor) -> Result<Var> {
    let wv = tape.constant(w.clone());
    let y = tape.mul(y, wv)?;
    Ok(tape.sum(y))
}

fn check<F>(f: F, params: &[Tensor]) -> std::result::Result<(), TestCaseError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let err = grad_check(f, params, EPS).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!(err < TOL, "relative error {err:.3e}");
    Ok(())
}

/// An elementwise op checked through `weigh`.
fn unary(seed: u64, kink: bool, op: fn(&mut Tape, Var) -> Var) -> std::result::Result<(), TestCaseError> {
    let mut g = Gen::new(seed);
    let (r, c) = (g.dim(), g.dim());
    let x = if kink { g.off_kink(r, c) } else { g.tensor(r, c) };
    let w = g.tensor(r, c);
    check(
        |t, v| {
            let y = op(t, v[0]);
            weigh(t, y, &w)
        },
        &[x],
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matmul(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let (m, k, n) = (g.dim(), g.dim(), g.dim());
        let (a, b, w) = (g.tensor(m, k), g.tensor(k, n), g.tensor(m, n));
        check(|t, v| { let y = t.matmul(v[0], v[1])?; weigh(t, y, &w) }, &[a, b])?;
    }

    #[test]
    fn matmul_nt(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let (m, k, n) = (g.dim(), g.dim(), g.dim());
        let (a, b, w) = (g.tensor(m, k), g.tensor(n, k), g.tensor(m, n));
        check(|t, v| { let y = t.matmul_nt(v[0], v[1])?; weigh(t, y, &w) }, &[a, b])?;
    }

    #[test]
    fn spmm(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let (n, c) = (g.dim() + 1, g.dim());
        let p = g.pattern(n);
        let (x, w) = (g.tensor(n, c), g.tensor(n, c));
        check(|t, v| { let y = t.spmm(p.clone(), v[0])?; weigh(t, y, &w) }, &[x])?;
    }

    #[test]
    fn edge_attention(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let (n, c) = (g.dim() + 1, g.dim());
        let p = g.pattern(n);
        let (src, dst, x, w) = (g.tensor(n, 1), g.tensor(n, 1), g.tensor(n, c), g.tensor(n, c));
        check(
            |t, v| {
                let s = t.edge_scores(p.clone(), v[0], v[1])?;
                let a = t.edge_softmax(p.clone(), s)?;
                let y = t.edge_aggregate(p.clone(), a, v[2])?;
                weigh(t, y, &w)
            },
            &[src, dst, x],
        )?;
    }

    #[test]
    fn add_scale_mul(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let (r, c) = (g.dim(), g.dim());
        let (a, b, bias, w) = (g.tensor(r, c), g.tensor(r, c), g.tensor(1, c), g.tensor(r, c));
        check(
            |t, v| {
                let s = t.add(v[0], v[1])?;
                let s = t.scale(s, -1.7);
                let s = t.mul(s, v[0])?;
                let y = t.add_row_bias(s, v[2])?;
                weigh(t, y, &w)
            },
            &[a, b, bias],
        )?;
    }

    #[test]
    fn relu(seed in any::<u64>()) {
        unary(seed, true, |t, x| t.relu(x))?;
    }

    #[test]
    fn leaky_relu(seed in any::<u64>()) {
        unary(seed, true, |t, x| t.leaky_relu(x, 0.2))?;
    }

    #[test]
    fn elu(seed in any::<u64>()) {
        unary(seed, true, |t, x| t.elu(x))?;
    }

    #[test]
    fn sigmoid(seed in any::<u64>()) {
        unary(seed, false, |t, x| t.sigmoid(x))?;
    }

    #[test]
    fn row_softmax(seed in any::<u64>()) {
        unary(seed, false, |t, x| t.row_softmax(x))?;
    }

    #[test]
    fn row_log_softmax(seed in any::<u64>()) {
        unary(seed, false, |t, x| t.row_log_softmax(x))?;
    }

    #[test]
    fn row_l2_normalize(seed in any::<u64>()) {
        unary(seed, true, |t, x| t.row_l2_normalize(x))?;
    }

    #[test]
    fn mean_cols(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let (r, c) = (g.dim(), g.dim());
        let (x, w) = (g.tensor(r, c), g.tensor(r, 1));
        check(|t, v| { let y = t.mean_cols(v[0]); weigh(t, y, &w) }, &[x])?;
    }

    #[test]
    fn dropout(seed in any::<u64>(), train in any::<bool>()) {
        let mut g = Gen::new(seed);
        let (r, c) = (g.dim(), g.dim());
        let (x, w) = (g.tensor(r, c), g.tensor(r, c));
        check(
            |t, v| {
                // Same mask on every evaluation, so the op is linear in x.
                let mut mask_rng = rng::stream(seed, "mask");
                let y = t.dropout(v[0], 0.4, &mut mask_rng, train)?;
                weigh(t, y, &w)
            },
            &[x],
        )?;
    }

    #[test]
    fn concat(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let (r, c1, c2) = (g.dim(), g.dim(), g.dim());
        let (a, b) = (g.tensor(r, c1), g.tensor(r, c2));
        let (wc, wr) = (g.tensor(r, c1 + c2), g.tensor(2 * r, c1));
        check(
            |t, v| {
                let y = t.concat_cols(&[v[0], v[1]])?;
                let l1 = weigh(t, y, &wc)?;
                let y = t.concat_rows(&[v[0], v[0]])?;
                let l2 = weigh(t, y, &wr)?;
                t.weighted_sum(&[(l1, 1.0), (l2, 0.5)])
            },
            &[a, b],
        )?;
    }

    #[test]
    fn cosine_similarity(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let (m, n, k) = (g.dim(), g.dim(), g.dim() + 1);
        let (a, b, w) = (g.off_kink(m, k), g.off_kink(n, k), g.tensor(m, n));
        check(|t, v| { let y = t.cosine_similarity(v[0], v[1])?; weigh(t, y, &w) }, &[a, b])?;
    }

    #[test]
    fn fill_rows(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let (r, c) = (g.dim() + 1, g.dim());
        let rows: Vec<usize> = (0..r).filter(|_| g.0.gen_bool(0.5)).collect();
        let (base, fill, w) = (g.tensor(r, c), g.tensor(1, c), g.tensor(r, c));
        check(|t, v| { let y = t.fill_rows(v[0], v[1], rows.clone())?; weigh(t, y, &w) }, &[base, fill])?;
    }

    #[test]
    fn cross_entropy(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let (r, c) = (g.dim(), g.dim());
        let p = g.positive(r, c);
        let targets: Vec<(usize, usize)> = (0..r).map(|i| (i, g.0.gen_range(0..c))).collect();
        check(|t, v| t.cross_entropy(v[0], targets.clone()), &[p])?;
    }

    #[test]
    fn masked_reconstruction_losses(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let (r, c) = (g.dim() + 1, g.dim());
        let rows: Vec<usize> = (0..r).filter(|&i| i == 0 || g.0.gen_bool(0.5)).collect();
        let x = g.tensor(r, c);
        let target = g.positive(r, c);
        check(|t, v| t.masked_bce_with_logits(v[0], target.clone(), rows.clone()), std::slice::from_ref(&x))?;
        check(|t, v| t.masked_mse(v[0], target.clone(), rows.clone()), &[x])?;
    }

    #[test]
    fn ntxent_losses(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let n = g.dim() + 1;
        let s = g.tensor(n, n);
        check(|t, v| t.cross_view_ntxent(v[0]), &[s])?;
        let s2 = g.tensor(2 * n, 2 * n);
        check(|t, v| t.canonical_ntxent(v[0]), &[s2])?;
    }
}
