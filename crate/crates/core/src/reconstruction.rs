//! Feature reconstruction: fill missing rows, encode with stacked graph
//! attention layers, decode with an MLP back to feature space.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graphdata::{Graph, IncompleteGraph, MaskMatrix};
use crate::numerics::{glorot_uniform, Parameters, SparseMatrix, Tape, Tensor, Var};

/// Negative slope of the LeakyReLU applied to attention logits.
pub const ATTENTION_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    /// Per-head ELU, then concatenate heads.
    Concat,
    /// Average heads, no activation.
    Average,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReconLoss {
    Bce,
    Mse,
}

/// What missing rows hold when the model runs in inference mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InferenceFill {
    Zero,
    Learned,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconConfig {
    pub replace_prob: f64,
    pub input_dropout: f64,
    pub attn_dropout: f64,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub loss: ReconLoss,
    pub inference_fill: InferenceFill,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            replace_prob: 0.05,
            input_dropout: 0.3,
            attn_dropout: 0.3,
            hidden: 64,
            layers: 2,
            heads: 4,
            loss: ReconLoss::Bce,
            inference_fill: InferenceFill::Zero,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.replace_prob) {
            return bad(format!("replacement rate {} outside [0, 1]", self.replace_prob));
        }
        for (name, v) in [
            ("input dropout", self.input_dropout),
            ("attention dropout", self.attn_dropout),
        ] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1)"));
            }
        }
        if self.hidden == 0 || self.layers == 0 || self.heads == 0 {
            return bad("hidden width, layer count and head count must be >= 1".into());
        }
        if self.layers > 1 && !self.hidden.is_multiple_of(self.heads) {
            return bad(format!(
                "hidden width {} not divisible by {} heads",
                self.hidden, self.heads
            ));
        }
        Ok(())
    }
}

/// One multi-head attention layer. Weights are stored input-major
/// (`d_in × d_out`, i.e. the transpose of `W_t`), and each head's attention
/// vector `a_t = [a_src ∥ a_dst]` is kept as its two `d_out × 1` halves.
#[derive(Clone, Debug, PartialEq)]
pub struct GatLayerParams {
    pub weights: Vec<Tensor>,
    pub attn_src: Vec<Tensor>,
    pub attn_dst: Vec<Tensor>,
    pub aggregation: Aggregation,
}

impl GatLayerParams {
    pub fn glorot<R: Rng + ?Sized>(
        d_in: usize,
        d_out: usize,
        heads: usize,
        aggregation: Aggregation,
        rng: &mut R,
    ) -> Self {
        let mut weights = Vec::with_capacity(heads);
        let mut attn_src = Vec::with_capacity(heads);
        let mut attn_dst = Vec::with_capacity(heads);
        for _ in 0..heads {
            weights.push(glorot_uniform(d_in, d_out, rng));
            let a = glorot_uniform(2 * d_out, 1, rng);
            attn_src.push(Tensor::from_vec(d_out, 1, a.data()[..d_out].to_vec()).unwrap());
            attn_dst.push(Tensor::from_vec(d_out, 1, a.data()[d_out..].to_vec()).unwrap());
        }
        Self {
            weights,
            attn_src,
            attn_dst,
            aggregation,
        }
    }

    pub fn heads(&self) -> usize {
        self.weights.len()
    }

    pub fn head_width(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn output_width(&self) -> usize {
        match self.aggregation {
            Aggregation::Concat => self.heads() * self.head_width(),
            Aggregation::Average => self.head_width(),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> GatLayerVars {
        GatLayerVars {
            weights: self.weights.iter().map(|t| tape.param(t.clone())).collect(),
            attn_src: self.attn_src.iter().map(|t| tape.param(t.clone())).collect(),
            attn_dst: self.attn_dst.iter().map(|t| tape.param(t.clone())).collect(),
            aggregation: self.aggregation,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GatLayerVars {
    pub weights: Vec<Var>,
    pub attn_src: Vec<Var>,
    pub attn_dst: Vec<Var>,
    pub aggregation: Aggregation,
}

impl GatLayerVars {
    fn flat(&self, out: &mut Vec<Var>) {
        for h in 0..self.weights.len() {
            out.extend([self.weights[h], self.attn_src[h], self.attn_dst[h]]);
        }
    }
}

/// Autoencoder parameters: GAT encoder, two-layer MLP decoder, fill vector.
#[derive(Clone, Debug, PartialEq)]
pub struct GaeParams {
    pub layers: Vec<GatLayerParams>,
    pub dec_hidden_w: Tensor,
    pub dec_hidden_b: Tensor,
    pub dec_out_w: Tensor,
    pub dec_out_b: Tensor,
    /// The learnable `1×f` vector written into missing rows at train time.
    pub fill: Tensor,
}

impl GaeParams {
    /// Glorot-initialized weights, zero biases, zero fill vector. Hidden GAT
    /// layers concatenate `heads` heads of width `hidden / heads`; the last
    /// layer averages `heads` heads of width `hidden`.
    pub fn glorot<R: Rng + ?Sized>(features: usize, cfg: &ReconConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut d_in = features;
        for l in 0..cfg.layers {
            let layer = if l + 1 < cfg.layers {
                GatLayerParams::glorot(d_in, cfg.hidden / cfg.heads, cfg.heads, Aggregation::Concat, rng)
            } else {
                GatLayerParams::glorot(d_in, cfg.hidden, cfg.heads, Aggregation::Average, rng)
            };
            d_in = layer.output_width();
            layers.push(layer);
        }
        Ok(Self {
            layers,
            dec_hidden_w: glorot_uniform(cfg.hidden, cfg.hidden, rng),
            dec_hidden_b: Tensor::zeros(1, cfg.hidden),
            dec_out_w: glorot_uniform(cfg.hidden, features, rng),
            dec_out_b: Tensor::zeros(1, features),
            fill: Tensor::zeros(1, features),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.fill.cols()
    }

    pub fn bind(&self, tape: &mut Tape) -> GaeVars {
        GaeVars {
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
            dec_hidden_w: tape.param(self.dec_hidden_w.clone()),
            dec_hidden_b: tape.param(self.dec_hidden_b.clone()),
            dec_out_w: tape.param(self.dec_out_w.clone()),
            dec_out_b: tape.param(self.dec_out_b.clone()),
            fill: tape.param(self.fill.clone()),
        }
    }
}

impl Parameters for GaeParams {
    fn entries(&self) -> Vec<(String, &Tensor, bool)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for h in 0..layer.heads() {
                out.push((format!("gae.gat{l}.head{h}.w"), &layer.weights[h], true));
                out.push((format!("gae.gat{l}.head{h}.a_src"), &layer.attn_src[h], true));
                out.push((format!("gae.gat{l}.head{h}.a_dst"), &layer.attn_dst[h], true));
            }
        }
        out.push(("gae.dec.hidden.w".into(), &self.dec_hidden_w, true));
        out.push(("gae.dec.hidden.b".into(), &self.dec_hidden_b, false));
        out.push(("gae.dec.out.w".into(), &self.dec_out_w, true));
        out.push(("gae.dec.out.b".into(), &self.dec_out_b, false));
        out.push(("gae.fill".into(), &self.fill, false));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            for ((w, a), b) in layer
                .weights
                .iter_mut()
                .zip(layer.attn_src.iter_mut())
                .zip(layer.attn_dst.iter_mut())
            {
                out.extend([w, a, b]);
            }
        }
        out.extend([
            &mut self.dec_hidden_w,
            &mut self.dec_hidden_b,
            &mut self.dec_out_w,
            &mut self.dec_out_b,
            &mut self.fill,
        ]);
        out
    }
}

#[derive(Clone, Debug)]
pub struct GaeVars {
    pub layers: Vec<GatLayerVars>,
    pub dec_hidden_w: Var,
    pub dec_hidden_b: Var,
    pub dec_out_w: Var,
    pub dec_out_b: Var,
    pub fill: Var,
}

impl GaeVars {
    /// Vars in the order of [`GaeParams::entries`].
    pub fn flat(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.layers {
            l.flat(&mut out);
        }
        out.extend([
            self.dec_hidden_w,
            self.dec_hidden_b,
            self.dec_out_w,
            self.dec_out_b,
            self.fill,
        ]);
        out
    }

    /// Inverse of [`GaeVars::flat`] for the layout of `p`.
    pub fn from_flat(p: &GaeParams, vars: &[Var]) -> Result<Self> {
        let expected = p.entries().len();
        if vars.len() != expected {
            return Err(Error::Shape(format!(
                "{} vars for {expected} autoencoder tensors",
                vars.len()
            )));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("length checked");
        let mut layers = Vec::with_capacity(p.layers.len());
        for layer in &p.layers {
            let mut lv = GatLayerVars {
                weights: Vec::new(),
                attn_src: Vec::new(),
                attn_dst: Vec::new(),
                aggregation: layer.aggregation,
            };
            for _ in 0..layer.heads() {
                lv.weights.push(next());
                lv.attn_src.push(next());
                lv.attn_dst.push(next());
            }
            layers.push(lv);
        }
        Ok(Self {
            layers,
            dec_hidden_w: next(),
            dec_hidden_b: next(),
            dec_out_w: next(),
            dec_out_b: next(),
            fill: next(),
        })
    }
}

/// Adjacency of `g` with every self-loop added: the neighborhood each
/// attention softmax runs over.
pub fn attention_pattern(g: &Graph) -> Arc<SparseMatrix> {
    Arc::new(SparseMatrix::from_adjacency_with_self_loops(g.neighbor_lists()))
}

/// Writes a training-time or inference-time fill into the missing rows of
/// `x_masked`.
///
/// Training: each missing row independently becomes, with probability
/// `replace_prob`, a copy of a uniformly chosen known row (a constant), and
/// otherwise the fill vector (which receives gradient). Inference: missing
/// rows stay zero, or take the fill vector under [`InferenceFill::Learned`].
#[allow(clippy::too_many_arguments)]
pub fn fill_missing<R: Rng + ?Sized>(
    tape: &mut Tape,
    x_masked: &Tensor,
    mask: &MaskMatrix,
    fill: Var,
    replace_prob: f64,
    inference_fill: InferenceFill,
    rng: &mut R,
    train: bool,
) -> Result<Var> {
    let missing = mask.missing_indices();
    if missing.is_empty() {
        return Ok(tape.constant(x_masked.clone()));
    }
    if !train {
        let base = tape.constant(x_masked.clone());
        return match inference_fill {
            InferenceFill::Zero => Ok(base),
            InferenceFill::Learned => tape.fill_rows(base, fill, missing),
        };
    }
    let known = mask.known_indices();
    if replace_prob > 0.0 && known.is_empty() {
        return Err(Error::InvalidArgument(
            "replacement requested but no node has known features".into(),
        ));
    }
    let mut base = x_masked.clone();
    let mut filled_rows = Vec::with_capacity(missing.len());
    for i in missing {
        if replace_prob > 0.0 && rng.gen::<f64>() < replace_prob {
            let donor = known[rng.gen_range(0..known.len())];
            let row = x_masked.row(donor).to_vec();
            base.row_mut(i).copy_from_slice(&row);
        } else {
            filled_rows.push(i);
        }
    }
    let base = tape.constant(base);
    if filled_rows.is_empty() {
        return Ok(base);
    }
    tape.fill_rows(base, fill, filled_rows)
}

/// One multi-head graph attention layer over `pattern` (which must already
/// contain self-loops; see [`attention_pattern`]).
pub fn gat_layer<R: Rng + ?Sized>(
    tape: &mut Tape,
    h: Var,
    pattern: &Arc<SparseMatrix>,
    p: &GatLayerVars,
    cfg: &ReconConfig,
    rng: &mut R,
    train: bool,
) -> Result<Var> {
    let h_rows = tape.value(h).rows();
    if h_rows != pattern.rows() {
        return Err(Error::Shape(format!(
            "{h_rows} feature rows for a {}-node graph",
            pattern.rows()
        )));
    }
    let h = tape.dropout(h, cfg.input_dropout, rng, train)?;
    let mut heads = Vec::with_capacity(p.weights.len());
    for t in 0..p.weights.len() {
        let (d_in, d_w) = (tape.value(h).cols(), tape.value(p.weights[t]).rows());
        if d_in != d_w {
            return Err(Error::Shape(format!(
                "layer input width {d_in} but head {t} expects {d_w}"
            )));
        }
        let wh = tape.matmul(h, p.weights[t])?;
        let src = tape.matmul(wh, p.attn_src[t])?;
        let dst = tape.matmul(wh, p.attn_dst[t])?;
        let logits = tape.edge_scores(pattern.clone(), src, dst)?;
        let logits = tape.leaky_relu(logits, ATTENTION_SLOPE);
        let alpha = tape.edge_softmax(pattern.clone(), logits)?;
        let alpha = tape.dropout(alpha, cfg.attn_dropout, rng, train)?;
        let agg = tape.edge_aggregate(pattern.clone(), alpha, wh)?;
        heads.push(match p.aggregation {
            Aggregation::Concat => tape.elu(agg),
            Aggregation::Average => agg,
        });
    }
    match p.aggregation {
        Aggregation::Concat => tape.concat_cols(&heads),
        Aggregation::Average => {
            let mut acc = heads[0];
            for &hd in &heads[1..] {
                acc = tape.add(acc, hd)?;
            }
            Ok(tape.scale(acc, 1.0 / heads.len() as f64))
        }
    }
}

/// Two-layer MLP decoder: `relu(z W₁ + b₁) W₂ + b₂`.
pub fn decode(tape: &mut Tape, latent: Var, p: &GaeVars) -> Result<Var> {
    let hidden = tape.matmul(latent, p.dec_hidden_w)?;
    let hidden = tape.add_row_bias(hidden, p.dec_hidden_b)?;
    let hidden = tape.relu(hidden);
    let out = tape.matmul(hidden, p.dec_out_w)?;
    tape.add_row_bias(out, p.dec_out_b)
}

/// Encoder latent code and decoder output for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Reconstruction {
    pub filled: Var,
    pub latent: Var,
    /// Reconstructed features as logits, `n × f`.
    pub output: Var,
}

/// Fill → stacked GAT encoder → MLP decoder.
pub fn reconstruct<R: Rng + ?Sized>(
    tape: &mut Tape,
    g: &IncompleteGraph,
    pattern: &Arc<SparseMatrix>,
    p: &GaeVars,
    cfg: &ReconConfig,
    rng: &mut R,
    train: bool,
) -> Result<Reconstruction> {
    let x = g.graph().features();
    let filled = fill_missing(
        tape,
        x,
        g.mask(),
        p.fill,
        cfg.replace_prob,
        cfg.inference_fill,
        rng,
        train,
    )?;
    let mut h = filled;
    for layer in &p.layers {
        h = gat_layer(tape, h, pattern, layer, cfg, rng, train)?;
    }
    let output = decode(tape, h, p)?;
    Ok(Reconstruction {
        filled,
        latent: h,
        output,
    })
}

/// Reconstruction error averaged over the nodes with known features.
pub fn reconstruction_loss(
    tape: &mut Tape,
    x_tilde: Var,
    x_prime: &Tensor,
    mask: &MaskMatrix,
    kind: ReconLoss,
) -> Result<Var> {
    let known = mask.known_indices();
    if known.is_empty() {
        return Err(Error::InvalidArgument(
            "reconstruction loss needs at least one known node".into(),
        ));
    }
    match kind {
        ReconLoss::Bce => tape.masked_bce_with_logits(x_tilde, x_prime.clone(), known),
        ReconLoss::Mse => tape.masked_mse(x_tilde, x_prime.clone(), known),
    }
}
