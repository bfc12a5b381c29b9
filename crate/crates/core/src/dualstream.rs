//! Shared classifier over the two feature streams, projection head,
//! cross-view contrastive loss, and the combined objective.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{glorot_uniform, Parameters, Tape, Tensor, Var};

/// Which denominator the contrastive loss uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContrastVariant {
    /// Cross-view negatives only, positive excluded from the denominator.
    CrossView,
    /// SimCLR-style: every other embedding of both views in the denominator.
    Canonical,
}

/// `W⁽⁰⁾` (`f × d₁`), `W⁽¹⁾` (`d₁ × c`), `W⁽²⁾` (`d₁ × d₂`), used by both
/// streams. Biases are optional and off by default.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    pub w_hidden: Tensor,
    pub w_out: Tensor,
    pub w_proj: Tensor,
    pub b_hidden: Option<Tensor>,
    pub b_out: Option<Tensor>,
}

impl ClassifierParams {
    pub fn glorot<R: Rng + ?Sized>(
        features: usize,
        hidden: usize,
        classes: usize,
        proj: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        Self {
            w_hidden: glorot_uniform(features, hidden, rng),
            w_out: glorot_uniform(hidden, classes, rng),
            w_proj: glorot_uniform(hidden, proj, rng),
            b_hidden: bias.then(|| Tensor::zeros(1, hidden)),
            b_out: bias.then(|| Tensor::zeros(1, classes)),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> ClassifierVars {
        ClassifierVars {
            w_hidden: tape.param(self.w_hidden.clone()),
            w_out: tape.param(self.w_out.clone()),
            w_proj: tape.param(self.w_proj.clone()),
            b_hidden: self.b_hidden.as_ref().map(|b| tape.param(b.clone())),
            b_out: self.b_out.as_ref().map(|b| tape.param(b.clone())),
        }
    }
}

impl Parameters for ClassifierParams {
    fn entries(&self) -> Vec<(String, &Tensor, bool)> {
        let mut out = vec![
            ("clf.w_hidden".to_string(), &self.w_hidden, true),
            ("clf.w_out".to_string(), &self.w_out, true),
            ("clf.w_proj".to_string(), &self.w_proj, true),
        ];
        if let Some(b) = &self.b_hidden {
            out.push(("clf.b_hidden".into(), b, false));
        }
        if let Some(b) = &self.b_out {
            out.push(("clf.b_out".into(), b, false));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.w_hidden, &mut self.w_out, &mut self.w_proj];
        out.extend(self.b_hidden.as_mut());
        out.extend(self.b_out.as_mut());
        out
    }
}

#[derive(Clone, Debug)]
pub struct ClassifierVars {
    pub w_hidden: Var,
    pub w_out: Var,
    pub w_proj: Var,
    pub b_hidden: Option<Var>,
    pub b_out: Option<Var>,
}

impl ClassifierVars {
    /// Vars in the order of [`ClassifierParams::entries`].
    pub fn flat(&self) -> Vec<Var> {
        let mut out = vec![self.w_hidden, self.w_out, self.w_proj];
        out.extend(self.b_hidden);
        out.extend(self.b_out);
        out
    }

    /// Inverse of [`ClassifierVars::flat`] for the layout of `p`.
    pub fn from_flat(p: &ClassifierParams, vars: &[Var]) -> Result<Self> {
        let expected = p.entries().len();
        if vars.len() != expected {
            return Err(Error::Shape(format!(
                "{} vars for {expected} classifier tensors",
                vars.len()
            )));
        }
        let mut it = vars[3..].iter().copied();
        Ok(Self {
            w_hidden: vars[0],
            w_out: vars[1],
            w_proj: vars[2],
            b_hidden: p.b_hidden.as_ref().and_then(|_| it.next()),
            b_out: p.b_out.as_ref().and_then(|_| it.next()),
        })
    }
}

/// Hidden representation and class probabilities of one stream.
#[derive(Clone, Copy, Debug)]
pub struct Classified {
    pub hidden: Var,
    pub probs: Var,
}

/// `H = relu(X W⁽⁰⁾)`, `Y = softmax(H W⁽¹⁾)`.
pub fn classify(tape: &mut Tape, x: Var, p: &ClassifierVars) -> Result<Classified> {
    let (xw, ww) = (tape.value(x).cols(), tape.value(p.w_hidden).rows());
    if xw != ww {
        return Err(Error::Shape(format!("classifier expects width {ww}, got {xw}")));
    }
    let mut h = tape.matmul(x, p.w_hidden)?;
    if let Some(b) = p.b_hidden {
        h = tape.add_row_bias(h, b)?;
    }
    let hidden = tape.relu(h);
    let mut logits = tape.matmul(hidden, p.w_out)?;
    if let Some(b) = p.b_out {
        logits = tape.add_row_bias(logits, b)?;
    }
    let probs = tape.row_softmax(logits);
    Ok(Classified { hidden, probs })
}

/// Mean negative log-probability of the true class over `idx`.
pub fn cross_entropy(tape: &mut Tape, probs: Var, labels: &[usize], idx: &[usize]) -> Result<Var> {
    if idx.is_empty() {
        return Err(Error::InvalidArgument("cross-entropy over an empty index list".into()));
    }
    tape.cross_entropy(probs, idx.iter().map(|&i| (i, labels[i])).collect())
}

/// `Z = H W⁽²⁾`.
pub fn project(tape: &mut Tape, hidden: Var, p: &ClassifierVars) -> Result<Var> {
    tape.matmul(hidden, p.w_proj)
}

/// Contrastive loss between the two streams' projections with
/// `φ(a, b) = exp(cos(a, b) / τ)`.
pub fn ntxent(tape: &mut Tape, z: Var, z_prime: Var, tau: f64, variant: ContrastVariant) -> Result<Var> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("temperature {tau} must be positive")));
    }
    let (sz, sp) = (tape.value(z).shape(), tape.value(z_prime).shape());
    if sz != sp {
        return Err(Error::Shape(format!("views differ in shape: {sz:?} vs {sp:?}")));
    }
    if sz.0 < 2 {
        return Err(Error::InvalidArgument(format!(
            "contrastive loss needs n >= 2, got {}",
            sz.0
        )));
    }
    match variant {
        ContrastVariant::CrossView => {
            let sim = tape.cosine_similarity(z, z_prime)?;
            let logits = tape.scale(sim, 1.0 / tau);
            tape.cross_view_ntxent(logits)
        }
        ContrastVariant::Canonical => {
            let both = tape.concat_rows(&[z, z_prime])?;
            let sim = tape.cosine_similarity(both, both)?;
            let logits = tape.scale(sim, 1.0 / tau);
            tape.canonical_ntxent(logits)
        }
    }
}

/// Loss weights `λ` (second-stream CE), `μ` (reconstruction), `γ` (contrastive).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub mu: f64,
    pub gamma: f64,
}

/// `L_ce + λ L'_ce + μ L_rec + γ L_cl`, rejecting non-finite components.
pub fn total_loss(l_ce: f64, l_ce_prime: f64, l_rec: f64, l_cl: f64, w: LossWeights) -> Result<f64> {
    for (name, v) in [
        ("l_ce", l_ce),
        ("l_ce_prime", l_ce_prime),
        ("l_rec", l_rec),
        ("l_cl", l_cl),
    ] {
        if !v.is_finite() {
            return Err(Error::Numerical(format!("{name} = {v}")));
        }
    }
    Ok(l_ce + w.lambda * l_ce_prime + w.mu * l_rec + w.gamma * l_cl)
}

/// Tape version of [`total_loss`]; zero-weighted terms are left out of the
/// graph so they cost nothing in the backward pass.
pub fn total_loss_var(
    tape: &mut Tape,
    l_ce: Var,
    l_ce_prime: Var,
    l_rec: Var,
    l_cl: Var,
    w: LossWeights,
) -> Result<Var> {
    let terms: Vec<(Var, f64)> = [(l_ce, 1.0), (l_ce_prime, w.lambda), (l_rec, w.mu), (l_cl, w.gamma)]
        .into_iter()
        .filter(|&(_, wt)| wt != 0.0)
        .collect();
    tape.weighted_sum(&terms)
}
