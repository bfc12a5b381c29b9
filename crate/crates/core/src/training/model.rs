use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use crate::dualstream::{classify, cross_entropy, ntxent, project, total_loss_var, ClassifierParams, ClassifierVars};
use crate::error::{Error, Result};
use crate::graphdata::IncompleteGraph;
use crate::numerics::{grad_check, persist, Parameters, SparseMatrix, Tape, Tensor, Var};
use crate::propagation::{knn_graph, ppr_propagate, AugmentedGraph};
use crate::reconstruction::{attention_pattern, reconstruct, reconstruction_loss, GaeParams, GaeVars, ReconLoss};
use crate::rng::{self, Rng};
use crate::training::config::{PredictionStream, TrainConfig};
use crate::training::metrics::{EpochRecord, RunMetrics};
use crate::training::optim::Adam;

/// Autoencoder and shared classifier, trained jointly.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub gae: GaeParams,
    pub clf: ClassifierParams,
}

impl Parameters for Model {
    fn entries(&self) -> Vec<(String, &Tensor, bool)> {
        let mut out = self.gae.entries();
        out.extend(self.clf.entries());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.gae.tensors_mut();
        out.extend(self.clf.tensors_mut());
        out
    }
}

struct ModelVars {
    gae: GaeVars,
    clf: ClassifierVars,
}

impl ModelVars {
    fn bind(m: &Model, tape: &mut Tape) -> Self {
        Self {
            gae: m.gae.bind(tape),
            clf: m.clf.bind(tape),
        }
    }

    fn from_flat(m: &Model, vars: &[Var]) -> Result<Self> {
        let split = m.gae.entries().len();
        if vars.len() < split {
            return Err(Error::Shape(format!(
                "{} vars for a {split}-tensor autoencoder",
                vars.len()
            )));
        }
        Ok(Self {
            gae: GaeVars::from_flat(&m.gae, &vars[..split])?,
            clf: ClassifierVars::from_flat(&m.clf, &vars[split..])?,
        })
    }

    fn flat(&self) -> Vec<Var> {
        let mut out = self.gae.flat();
        out.extend(self.clf.flat());
        out
    }
}

/// Glorot-initialized model for `features` inputs and `classes` outputs.
pub fn init_params<R: rand::Rng + ?Sized>(
    cfg: &TrainConfig,
    features: usize,
    classes: usize,
    rng: &mut R,
) -> Result<Model> {
    cfg.validate()?;
    let gae = GaeParams::glorot(features, &cfg.recon(), rng)?;
    let clf = ClassifierParams::glorot(features, cfg.hidden, classes, cfg.proj, cfg.classifier_bias, rng);
    Ok(Model { gae, clf })
}

/// Everything that evolves across epochs of one run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub opt: Adam,
    pub epoch: usize,
    /// kNN graph and propagated features from the last rebuild.
    pub augmented: Option<(AugmentedGraph, Tensor)>,
    pub rng: Rng,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig, g: &IncompleteGraph) -> Result<Self> {
        let mut init = rng::stream(cfg.seed, rng::INIT);
        let model = init_params(cfg, g.graph().feature_dim(), g.graph().num_classes(), &mut init)?;
        Ok(Self {
            model,
            opt: Adam::new(cfg.lr, cfg.weight_decay),
            epoch: 0,
            augmented: None,
            rng: rng::stream(cfg.seed, rng::TRAIN),
        })
    }
}

/// Loss components of one epoch, before the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLosses {
    pub l_ce: f64,
    pub l_ce_prime: f64,
    pub l_rec: f64,
    pub l_cl: f64,
    pub total: f64,
}

struct LossVars {
    ce: Var,
    ce_prime: Var,
    rec: Var,
    cl: Var,
    total: Var,
}

/// Stream-1 input: the reconstruction (probabilities under BCE), or the
/// zero-filled input when the autoencoder is bypassed. Also returns the
/// decoder logits the reconstruction loss is computed on.
#[allow(clippy::too_many_arguments)]
fn stream_one(
    tape: &mut Tape,
    vars: &ModelVars,
    g: &IncompleteGraph,
    pattern: &Arc<SparseMatrix>,
    cfg: &TrainConfig,
    rng: &mut Rng,
    train: bool,
) -> Result<(Var, Option<Var>)> {
    if !cfg.uses_gae() {
        return Ok((tape.constant(g.graph().features().clone()), None));
    }
    let rec = reconstruct(tape, g, pattern, &vars.gae, &cfg.recon(), rng, train)?;
    let x_tilde = match cfg.recon_loss {
        ReconLoss::Bce => tape.sigmoid(rec.output),
        ReconLoss::Mse => rec.output,
    };
    Ok((x_tilde, Some(rec.output)))
}

fn augment(x_tilde: &Tensor, g: &IncompleteGraph, cfg: &TrainConfig) -> Result<(AugmentedGraph, Tensor)> {
    let aug = knn_graph(x_tilde, cfg.knn_k)?;
    let x_aug = ppr_propagate(&aug, g.graph().features(), cfg.alpha, cfg.ppr_steps)?;
    Ok((aug, x_aug))
}

fn objective(
    tape: &mut Tape,
    vars: &ModelVars,
    x_tilde: Var,
    rec_logits: Option<Var>,
    x_aug: &Tensor,
    g: &IncompleteGraph,
    cfg: &TrainConfig,
) -> Result<LossVars> {
    let labels = g.graph().labels();
    let train = &g.graph().splits().train;
    let s1 = classify(tape, x_tilde, &vars.clf)?;
    let xa = tape.constant(x_aug.clone());
    let s2 = classify(tape, xa, &vars.clf)?;
    let ce = cross_entropy(tape, s1.probs, labels, train)?;
    let ce_prime = cross_entropy(tape, s2.probs, labels, train)?;
    let z = project(tape, s1.hidden, &vars.clf)?;
    let zp = project(tape, s2.hidden, &vars.clf)?;
    let cl = ntxent(tape, z, zp, cfg.tau, cfg.contrast)?;
    let rec = match rec_logits {
        Some(out) => reconstruction_loss(tape, out, g.graph().features(), g.mask(), cfg.recon_loss)?,
        None => tape.constant(Tensor::scalar(0.0)),
    };
    let total = total_loss_var(tape, ce, ce_prime, rec, cl, cfg.weights())?;
    Ok(LossVars {
        ce,
        ce_prime,
        rec,
        cl,
        total,
    })
}

/// One epoch: forward both streams, rebuild the kNN graph every
/// `knn_period` epochs, then one Adam update on the combined loss.
pub fn train_step(state: &mut TrainState, g: &IncompleteGraph, cfg: &TrainConfig) -> Result<EpochLosses> {
    let pattern = attention_pattern(g.graph());
    let mut tape = Tape::new();
    let vars = ModelVars::bind(&state.model, &mut tape);
    let (x_tilde, rec_logits) = stream_one(&mut tape, &vars, g, &pattern, cfg, &mut state.rng, true)?;
    if state.epoch.is_multiple_of(cfg.knn_period) || state.augmented.is_none() {
        state.augmented = Some(augment(tape.value(x_tilde), g, cfg)?);
    }
    let x_aug = &state.augmented.as_ref().expect("built above").1;
    let l = objective(&mut tape, &vars, x_tilde, rec_logits, x_aug, g, cfg)?;
    let epoch = state.epoch + 1;
    let value = |v: Var, name: &str| -> Result<f64> {
        let x = tape.value(v).item();
        if x.is_finite() {
            Ok(x)
        } else {
            Err(Error::NonFinite {
                component: name.into(),
                epoch,
            })
        }
    };
    let losses = EpochLosses {
        l_ce: value(l.ce, "l_ce")?,
        l_ce_prime: value(l.ce_prime, "l_ce_prime")?,
        l_rec: value(l.rec, "l_rec")?,
        l_cl: value(l.cl, "l_cl")?,
        total: value(l.total, "total")?,
    };
    let mut grads = tape.backward(l.total)?;
    let grads: Vec<Tensor> = vars.flat().into_iter().map(|v| grads.take(&tape, v)).collect();
    if let Some(i) = grads.iter().position(|t| !t.is_finite()) {
        let name = state.model.entries()[i].0.clone();
        return Err(Error::NonFinite {
            component: format!("gradient of {name}"),
            epoch,
        });
    }
    state.opt.step(&mut state.model, &grads)?;
    state.epoch = epoch;
    Ok(losses)
}

/// Class probabilities of the configured stream in inference mode: no
/// dropout, no replacement, missing rows zero-filled.
pub fn predict_probs(model: &Model, g: &IncompleteGraph, cfg: &TrainConfig) -> Result<Tensor> {
    let pattern = attention_pattern(g.graph());
    let mut tape = Tape::new();
    let vars = ModelVars::bind(model, &mut tape);
    // inference consumes no randomness; the stream only satisfies the signature
    let mut idle = rng::stream(cfg.seed, "predict");
    let (x_tilde, _) = stream_one(&mut tape, &vars, g, &pattern, cfg, &mut idle, false)?;
    let original = classify(&mut tape, x_tilde, &vars.clf)?.probs;
    if cfg.stream == PredictionStream::Original {
        return Ok(tape.value(original).clone());
    }
    let (_, x_aug) = augment(tape.value(x_tilde), g, cfg)?;
    let xa = tape.constant(x_aug);
    let augmented = classify(&mut tape, xa, &vars.clf)?.probs;
    Ok(match cfg.stream {
        PredictionStream::Augmented => tape.value(augmented).clone(),
        _ => {
            let mut mean = tape.value(original).clone();
            mean.add_assign(tape.value(augmented));
            mean.map(|v| v * 0.5)
        }
    })
}

/// Row-wise argmax of [`predict_probs`], ties to the smallest class.
pub fn predict(model: &Model, g: &IncompleteGraph, cfg: &TrainConfig) -> Result<Vec<usize>> {
    Ok(predict_probs(model, g, cfg)?.argmax_rows())
}

/// Fraction of `idx` whose prediction matches the label; 0 for an empty set.
pub fn accuracy(pred: &[usize], labels: &[usize], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    idx.iter().filter(|&&i| pred[i] == labels[i]).count() as f64 / idx.len() as f64
}

/// Tracks the best validation accuracy; ties keep the earliest epoch.
pub(crate) struct BestTracker<M> {
    pub best_epoch: usize,
    pub best_val: f64,
    pub test_at_best: f64,
    pub model: M,
}

impl<M: Clone> BestTracker<M> {
    pub fn new(model: &M) -> Self {
        Self {
            best_epoch: 0,
            best_val: f64::NEG_INFINITY,
            test_at_best: 0.0,
            model: model.clone(),
        }
    }

    pub fn offer(&mut self, epoch: usize, val: f64, test: f64, model: &M) {
        if val > self.best_val {
            self.best_epoch = epoch;
            self.best_val = val;
            self.test_at_best = test;
            self.model = model.clone();
        }
    }
}

/// Runs `cfg.epochs` epochs on `g`, evaluating after each. Returns the
/// state with the model restored to the best-validation epoch.
pub fn fit(g: &IncompleteGraph, cfg: &TrainConfig) -> Result<(TrainState, RunMetrics)> {
    let start = Instant::now();
    let mut state = TrainState::new(cfg, g)?;
    let labels = g.graph().labels();
    let splits = g.graph().splits().clone();
    let eval = |m: &Model| -> Result<(f64, f64)> {
        let pred = predict(m, g, cfg)?;
        Ok((
            accuracy(&pred, labels, &splits.val),
            accuracy(&pred, labels, &splits.test),
        ))
    };
    let mut best = BestTracker::new(&state.model);
    let mut records = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        let (val, test) = eval(&state.model)?;
        best.offer(0, val, test, &state.model);
    }
    for _ in 0..cfg.epochs {
        let losses = train_step(&mut state, g, cfg)?;
        let (val, test) = eval(&state.model)?;
        best.offer(state.epoch, val, test, &state.model);
        records.push(EpochRecord::new(state.epoch, losses, val, test));
    }
    state.model = best.model;
    let metrics = RunMetrics {
        seed: cfg.seed,
        epochs: records,
        best_epoch: best.best_epoch,
        val_acc: best.best_val,
        test_acc: best.test_at_best,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((state, metrics))
}

/// Max relative gradient error of the combined loss on `g`, with dropout
/// and replacement turned off and the augmented features held fixed.
///
/// Checked after one update: at initialization the fill vector is zero, so
/// missing rows are exactly zero and sit on the ReLU/LeakyReLU kinks, where
/// central differences see the mean of the two one-sided slopes.
pub fn combined_loss_grad_check(g: &IncompleteGraph, cfg: &TrainConfig) -> Result<f64> {
    let cfg = TrainConfig {
        dropout: 0.0,
        attn_dropout: 0.0,
        replace_prob: 0.0,
        ..cfg.clone()
    };
    let mut state = TrainState::new(&cfg, g)?;
    train_step(&mut state, g, &cfg)?;
    let pattern = attention_pattern(g.graph());
    let x_aug = &state.augmented.as_ref().expect("set by train_step").1;
    let model = &state.model;
    let tensors: Vec<Tensor> = model.entries().into_iter().map(|(_, t, _)| t.clone()).collect();
    grad_check(
        |tape, params| {
            let vars = ModelVars::from_flat(model, params)?;
            let mut r = rng::stream(0, "unused");
            let (x_tilde, rec) = stream_one(tape, &vars, g, &pattern, &cfg, &mut r, true)?;
            Ok(objective(tape, &vars, x_tilde, rec, x_aug, g, &cfg)?.total)
        },
        &tensors,
        1e-5,
    )
}

/// Writes every model tensor under its parameter name.
pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    let arrays: Vec<(String, &Tensor)> = model.entries().into_iter().map(|(n, t, _)| (n, t)).collect();
    persist::save_arrays(path, &arrays)
}

/// Reads a checkpoint written by [`save_checkpoint`] for a model of the
/// layout `cfg` implies.
pub fn load_checkpoint(path: &Path, cfg: &TrainConfig, features: usize, classes: usize) -> Result<Model> {
    let mut model = init_params(cfg, features, classes, &mut rng::stream(0, rng::INIT))?;
    let stored = persist::load_arrays(path)?;
    let names: Vec<String> = model.entries().into_iter().map(|(n, _, _)| n).collect();
    if stored.len() != names.len() {
        return Err(Error::data(
            path,
            0,
            format!("{} arrays, model has {}", stored.len(), names.len()),
        ));
    }
    for ((name, slot), (sname, t)) in names.iter().zip(model.tensors_mut()).zip(stored) {
        if *name != sname || slot.shape() != t.shape() {
            return Err(Error::data(
                path,
                0,
                format!("array {sname} {:?} does not match {name} {:?}", t.shape(), slot.shape()),
            ));
        }
        *slot = t;
    }
    Ok(model)
}
