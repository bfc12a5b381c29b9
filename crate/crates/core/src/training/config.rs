use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::dualstream::{ContrastVariant, LossWeights};
use crate::error::{Error, Result};
use crate::reconstruction::{InferenceFill, ReconConfig, ReconLoss};

/// Which stream's class probabilities produce predictions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictionStream {
    Original,
    Augmented,
    Mean,
}

/// Every knob of a training run. Rendered and parsed as flat `key = value`
/// text; see [`TrainConfig::render`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Classifier hidden width `d₁`.
    pub hidden: usize,
    /// Projection width `d₂`.
    pub proj: usize,
    /// Autoencoder latent width.
    pub gae_hidden: usize,
    pub replace_prob: f64,
    /// GAT input dropout; also the GCN baseline's dropout.
    pub dropout: f64,
    pub attn_dropout: f64,
    pub heads: usize,
    pub gat_layers: usize,
    pub knn_k: usize,
    pub ppr_steps: usize,
    pub alpha: f64,
    pub tau: f64,
    pub lambda: f64,
    pub mu: f64,
    pub gamma: f64,
    pub recon_loss: ReconLoss,
    pub knn_period: usize,
    pub stream: PredictionStream,
    pub contrast: ContrastVariant,
    pub inference_fill: InferenceFill,
    pub classifier_bias: bool,
    /// With `mu = 0`, feed the zero-filled input to stream 1 directly
    /// instead of the autoencoder output.
    pub bypass_gae_without_rec: bool,
    /// Extra per-seed corruption applied by the experiment drivers.
    pub feature_missing: f64,
    pub edge_missing: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            weight_decay: 5e-4,
            epochs: 500,
            hidden: 64,
            proj: 64,
            gae_hidden: 64,
            replace_prob: 0.05,
            dropout: 0.3,
            attn_dropout: 0.3,
            heads: 4,
            gat_layers: 2,
            knn_k: 10,
            ppr_steps: 10,
            alpha: 0.01,
            tau: 0.2,
            lambda: 0.5,
            mu: 0.5,
            gamma: 1.0,
            recon_loss: ReconLoss::Bce,
            knn_period: 5,
            stream: PredictionStream::Original,
            contrast: ContrastVariant::CrossView,
            inference_fill: InferenceFill::Zero,
            classifier_bias: false,
            bypass_gae_without_rec: false,
            feature_missing: 0.0,
            edge_missing: 0.0,
            seed: 0,
        }
    }
}

const KEYS: &[&str] = &[
    "lr",
    "weight_decay",
    "epochs",
    "hidden",
    "proj",
    "gae_hidden",
    "replace_prob",
    "dropout",
    "attn_dropout",
    "heads",
    "gat_layers",
    "knn_k",
    "ppr_steps",
    "alpha",
    "tau",
    "lambda",
    "mu",
    "gamma",
    "recon_loss",
    "knn_period",
    "stream",
    "contrast",
    "inference_fill",
    "classifier_bias",
    "bypass_gae_without_rec",
    "feature_missing",
    "edge_missing",
    "seed",
];

fn enum_name<T: Copy + PartialEq>(table: &[(&'static str, T)], v: T) -> &'static str {
    table
        .iter()
        .find(|(_, t)| *t == v)
        .map(|(n, _)| *n)
        .expect("every variant is named")
}

fn enum_parse<T: Copy>(table: &[(&'static str, T)], key: &str, s: &str) -> Result<T> {
    table.iter().find(|(n, _)| *n == s).map(|(_, t)| *t).ok_or_else(|| {
        let names: Vec<_> = table.iter().map(|(n, _)| *n).collect();
        Error::Config(format!("{key}: '{s}' is not one of {}", names.join(", ")))
    })
}

const RECON_LOSSES: &[(&str, ReconLoss)] = &[("bce", ReconLoss::Bce), ("mse", ReconLoss::Mse)];
const STREAMS: &[(&str, PredictionStream)] = &[
    ("original", PredictionStream::Original),
    ("augmented", PredictionStream::Augmented),
    ("mean", PredictionStream::Mean),
];
const CONTRASTS: &[(&str, ContrastVariant)] = &[
    ("cross_view", ContrastVariant::CrossView),
    ("canonical", ContrastVariant::Canonical),
];
const FILLS: &[(&str, InferenceFill)] = &[("zero", InferenceFill::Zero), ("learned", InferenceFill::Learned)];

fn num<T: FromStr>(key: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{s}'")))
}

impl TrainConfig {
    pub fn recon(&self) -> ReconConfig {
        ReconConfig {
            replace_prob: self.replace_prob,
            input_dropout: self.dropout,
            attn_dropout: self.attn_dropout,
            hidden: self.gae_hidden,
            layers: self.gat_layers,
            heads: self.heads,
            loss: self.recon_loss,
            inference_fill: self.inference_fill,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            mu: self.mu,
            gamma: self.gamma,
        }
    }

    /// Whether stream 1 runs through the autoencoder.
    pub fn uses_gae(&self) -> bool {
        !(self.bypass_gae_without_rec && self.mu == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bad.push("lr");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            bad.push("weight_decay");
        }
        for (k, v) in [
            ("hidden", self.hidden),
            ("proj", self.proj),
            ("gae_hidden", self.gae_hidden),
        ] {
            if v == 0 {
                bad.push(k);
            }
        }
        if !unit(self.replace_prob) {
            bad.push("replace_prob");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bad.push("dropout");
        }
        if !(0.0..1.0).contains(&self.attn_dropout) {
            bad.push("attn_dropout");
        }
        if self.heads == 0 {
            bad.push("heads");
        }
        if self.gat_layers == 0 {
            bad.push("gat_layers");
        }
        if self.knn_k == 0 {
            bad.push("knn_k");
        }
        if self.ppr_steps == 0 {
            bad.push("ppr_steps");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            bad.push("alpha");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            bad.push("tau");
        }
        for (k, v) in [("lambda", self.lambda), ("mu", self.mu), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                bad.push(k);
            }
        }
        if self.knn_period == 0 {
            bad.push("knn_period");
        }
        if !unit(self.feature_missing) {
            bad.push("feature_missing");
        }
        if !unit(self.edge_missing) {
            bad.push("edge_missing");
        }
        if !bad.is_empty() {
            return Err(Error::Config(format!("invalid value for: {}", bad.join(", "))));
        }
        self.recon().validate().map_err(|e| Error::Config(e.to_string()))
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "lr" => self.lr.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "epochs" => self.epochs.to_string(),
            "hidden" => self.hidden.to_string(),
            "proj" => self.proj.to_string(),
            "gae_hidden" => self.gae_hidden.to_string(),
            "replace_prob" => self.replace_prob.to_string(),
            "dropout" => self.dropout.to_string(),
            "attn_dropout" => self.attn_dropout.to_string(),
            "heads" => self.heads.to_string(),
            "gat_layers" => self.gat_layers.to_string(),
            "knn_k" => self.knn_k.to_string(),
            "ppr_steps" => self.ppr_steps.to_string(),
            "alpha" => self.alpha.to_string(),
            "tau" => self.tau.to_string(),
            "lambda" => self.lambda.to_string(),
            "mu" => self.mu.to_string(),
            "gamma" => self.gamma.to_string(),
            "recon_loss" => enum_name(RECON_LOSSES, self.recon_loss).into(),
            "knn_period" => self.knn_period.to_string(),
            "stream" => enum_name(STREAMS, self.stream).into(),
            "contrast" => enum_name(CONTRASTS, self.contrast).into(),
            "inference_fill" => enum_name(FILLS, self.inference_fill).into(),
            "classifier_bias" => self.classifier_bias.to_string(),
            "bypass_gae_without_rec" => self.bypass_gae_without_rec.to_string(),
            "feature_missing" => self.feature_missing.to_string(),
            "edge_missing" => self.edge_missing.to_string(),
            "seed" => self.seed.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "lr" => self.lr = num(key, v)?,
            "weight_decay" => self.weight_decay = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "hidden" => self.hidden = num(key, v)?,
            "proj" => self.proj = num(key, v)?,
            "gae_hidden" => self.gae_hidden = num(key, v)?,
            "replace_prob" => self.replace_prob = num(key, v)?,
            "dropout" => self.dropout = num(key, v)?,
            "attn_dropout" => self.attn_dropout = num(key, v)?,
            "heads" => self.heads = num(key, v)?,
            "gat_layers" => self.gat_layers = num(key, v)?,
            "knn_k" => self.knn_k = num(key, v)?,
            "ppr_steps" => self.ppr_steps = num(key, v)?,
            "alpha" => self.alpha = num(key, v)?,
            "tau" => self.tau = num(key, v)?,
            "lambda" => self.lambda = num(key, v)?,
            "mu" => self.mu = num(key, v)?,
            "gamma" => self.gamma = num(key, v)?,
            "recon_loss" => self.recon_loss = enum_parse(RECON_LOSSES, key, v)?,
            "knn_period" => self.knn_period = num(key, v)?,
            "stream" => self.stream = enum_parse(STREAMS, key, v)?,
            "contrast" => self.contrast = enum_parse(CONTRASTS, key, v)?,
            "inference_fill" => self.inference_fill = enum_parse(FILLS, key, v)?,
            "classifier_bias" => self.classifier_bias = num(key, v)?,
            "bypass_gae_without_rec" => self.bypass_gae_without_rec = num(key, v)?,
            "feature_missing" => self.feature_missing = num(key, v)?,
            "edge_missing" => self.edge_missing = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key: {key}"))),
        }
        Ok(())
    }

    pub fn keys() -> &'static [&'static str] {
        KEYS
    }

    /// One `key = value` line per field, in a fixed order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            writeln!(out, "{k} = {}", self.value_of(k)).expect("writing to a String");
        }
        out
    }

    /// `(key, value)` pairs in render order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        KEYS.iter().map(|k| (*k, self.value_of(k))).collect()
    }

    /// Parses `key = value` lines over the defaults. Blank lines and `#`
    /// comments are skipped. All offending keys are reported together.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        let mut problems = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                problems.push(format!("line {}: expected key = value", n + 1));
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                problems.push(format!("line {}: duplicate key {k}", n + 1));
                continue;
            }
            if let Err(e) = cfg.set(k, v) {
                problems.push(format!(
                    "line {}: {}",
                    n + 1,
                    e.to_string().trim_start_matches("config: ")
                ));
            }
        }
        // Range problems among the keys that did parse are reported too.
        if let Err(e) = cfg.validate() {
            problems.push(e.to_string().trim_start_matches("config: ").to_string());
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems.join("; ")));
        }
        Ok(cfg)
    }
}
