//! Multi-seed evaluation, the GCN baseline, ablations and sweeps.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::graphdata::{corrupt, IncompleteGraph};
use crate::numerics::{glorot_uniform, grad_check, sym_normalize, Parameters, SparseMatrix, Tape, Tensor, Var};
use crate::rng;
use crate::training::config::TrainConfig;
use crate::training::metrics::{EpochRecord, RunMetrics};
use crate::training::model::{accuracy, fit, BestTracker, EpochLosses};
use crate::training::optim::Adam;

/// Mean and sample standard deviation; a single value has std 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Applies the configured per-seed corruption. Every method sees the same
/// corrupted graph for the same seed.
pub fn prepare(g: &IncompleteGraph, cfg: &TrainConfig, seed: u64) -> Result<IncompleteGraph> {
    if cfg.feature_missing == 0.0 && cfg.edge_missing == 0.0 {
        return Ok(g.clone());
    }
    corrupt(g, cfg.feature_missing, cfg.edge_missing, seed)
}

/// Maps `f` over `items` on up to `threads` workers. Results come back in
/// input order whatever the thread count; the first error (by index) wins.
pub fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<R>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("no panics while holding the slot") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("worker finished").expect("every slot filled"))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    MdsGnn,
    Gcn,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::MdsGnn => "mdsgnn",
            Method::Gcn => "gcn",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedSummary {
    pub method: Method,
    pub tag: String,
    pub runs: Vec<RunMetrics>,
    pub mean: f64,
    pub std: f64,
}

impl SeedSummary {
    fn new(method: Method, tag: String, runs: Vec<RunMetrics>) -> Self {
        let accs: Vec<f64> = runs.iter().map(|r| r.test_acc).collect();
        let (mean, std) = mean_std(&accs);
        Self {
            method,
            tag,
            runs,
            mean,
            std,
        }
    }

    pub fn test_accs(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.test_acc).collect()
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.runs.iter().map(|r| r.seed).collect()
    }
}

fn run_one(method: Method, g: &IncompleteGraph, cfg: &TrainConfig, seed: u64) -> Result<RunMetrics> {
    let cfg = TrainConfig { seed, ..cfg.clone() };
    let data = prepare(g, &cfg, seed)?;
    match method {
        Method::MdsGnn => fit(&data, &cfg).map(|(_, m)| m),
        Method::Gcn => gcn_baseline(&data, &cfg),
    }
}

/// One run per seed (each with its own corruption), then mean ± std of
/// test accuracy.
pub fn run_seeds_with(
    method: Method,
    g: &IncompleteGraph,
    cfg: &TrainConfig,
    seeds: &[u64],
    threads: usize,
    tag: &str,
) -> Result<SeedSummary> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    cfg.validate()?;
    let runs = par_map(seeds, threads, |&s| run_one(method, g, cfg, s))?;
    Ok(SeedSummary::new(method, tag.to_string(), runs))
}

pub fn run_seeds(g: &IncompleteGraph, cfg: &TrainConfig, seeds: &[u64], threads: usize) -> Result<SeedSummary> {
    run_seeds_with(Method::MdsGnn, g, cfg, seeds, threads, "full")
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnParams {
    pub u0: Tensor,
    pub u1: Tensor,
}

impl Parameters for GcnParams {
    fn entries(&self) -> Vec<(String, &Tensor, bool)> {
        vec![("gcn.u0".into(), &self.u0, true), ("gcn.u1".into(), &self.u1, true)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.u0, &mut self.u1]
    }
}

/// `Ā = D^{-1/2}(A' + I)D^{-1/2}` of the observed graph.
pub fn gcn_propagator(g: &IncompleteGraph) -> Arc<SparseMatrix> {
    Arc::new(sym_normalize(&SparseMatrix::from_adjacency_with_self_loops(
        g.graph().neighbor_lists(),
    )))
}

/// `softmax(Ā · relu(Ā X' U⁽⁰⁾) · U⁽¹⁾)` with dropout before each product.
#[allow(clippy::too_many_arguments)]
pub fn gcn_forward(
    tape: &mut Tape,
    a_bar: &Arc<SparseMatrix>,
    x: &Tensor,
    u0: Var,
    u1: Var,
    dropout: f64,
    rng: &mut rng::Rng,
    train: bool,
) -> Result<Var> {
    let x = tape.constant(x.clone());
    let x = tape.dropout(x, dropout, rng, train)?;
    let h = tape.matmul(x, u0)?;
    let h = tape.spmm(a_bar.clone(), h)?;
    let h = tape.relu(h);
    let h = tape.dropout(h, dropout, rng, train)?;
    let out = tape.matmul(h, u1)?;
    let out = tape.spmm(a_bar.clone(), out)?;
    Ok(tape.row_softmax(out))
}

pub fn gcn_init(cfg: &TrainConfig, features: usize, classes: usize) -> GcnParams {
    let mut r = rng::stream(cfg.seed, rng::INIT);
    GcnParams {
        u0: glorot_uniform(features, cfg.hidden, &mut r),
        u1: glorot_uniform(cfg.hidden, classes, &mut r),
    }
}

/// Two-layer GCN trained with cross-entropy only, same optimizer, splits,
/// epochs and checkpointing rule as the main model.
pub fn gcn_baseline(g: &IncompleteGraph, cfg: &TrainConfig) -> Result<RunMetrics> {
    cfg.validate()?;
    let start = Instant::now();
    let graph = g.graph();
    let (labels, splits) = (graph.labels(), graph.splits());
    if splits.train.is_empty() {
        return Err(Error::InvalidArgument(
            "cross-entropy over an empty training split".into(),
        ));
    }
    let a_bar = gcn_propagator(g);
    let mut params = gcn_init(cfg, graph.feature_dim(), graph.num_classes());
    let mut opt = Adam::new(cfg.lr, cfg.weight_decay);
    let mut r = rng::stream(cfg.seed, rng::TRAIN);
    let targets: Vec<(usize, usize)> = splits.train.iter().map(|&i| (i, labels[i])).collect();

    let eval = |p: &GcnParams| -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let (u0, u1) = (tape.constant(p.u0.clone()), tape.constant(p.u1.clone()));
        let mut idle = rng::stream(cfg.seed, "predict");
        let probs = gcn_forward(&mut tape, &a_bar, graph.features(), u0, u1, 0.0, &mut idle, false)?;
        let pred = tape.value(probs).argmax_rows();
        Ok((
            accuracy(&pred, labels, &splits.val),
            accuracy(&pred, labels, &splits.test),
        ))
    };

    let mut best = BestTracker::new(&params);
    if cfg.epochs == 0 {
        let (val, test) = eval(&params)?;
        best.offer(0, val, test, &params);
    }
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut tape = Tape::new();
        let (u0, u1) = (tape.param(params.u0.clone()), tape.param(params.u1.clone()));
        let probs = gcn_forward(&mut tape, &a_bar, graph.features(), u0, u1, cfg.dropout, &mut r, true)?;
        let loss = tape.cross_entropy(probs, targets.clone())?;
        let l = tape.value(loss).item();
        if !l.is_finite() {
            return Err(Error::NonFinite {
                component: "l_ce".into(),
                epoch,
            });
        }
        let mut grads = tape.backward(loss)?;
        let g = [grads.take(&tape, u0), grads.take(&tape, u1)];
        opt.step(&mut params, &g)?;
        let (val, test) = eval(&params)?;
        best.offer(epoch, val, test, &params);
        let losses = EpochLosses {
            l_ce: l,
            l_ce_prime: 0.0,
            l_rec: 0.0,
            l_cl: 0.0,
            total: l,
        };
        records.push(EpochRecord::new(epoch, losses, val, test));
    }
    Ok(RunMetrics {
        seed: cfg.seed,
        epochs: records,
        best_epoch: best.best_epoch,
        val_acc: best.best_val,
        test_acc: best.test_at_best,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Finite-difference check of the GCN loss with dropout off.
pub fn gcn_grad_check(g: &IncompleteGraph, cfg: &TrainConfig) -> Result<f64> {
    let graph = g.graph();
    let a_bar = gcn_propagator(g);
    let p = gcn_init(cfg, graph.feature_dim(), graph.num_classes());
    let targets: Vec<(usize, usize)> = graph.splits().train.iter().map(|&i| (i, graph.labels()[i])).collect();
    grad_check(
        |tape, v| {
            let mut idle = rng::stream(0, "unused");
            let probs = gcn_forward(tape, &a_bar, graph.features(), v[0], v[1], 0.0, &mut idle, true)?;
            tape.cross_entropy(probs, targets.clone())
        },
        &[p.u0.clone(), p.u1.clone()],
        1e-5,
    )
}

/// Which auxiliary losses an ablation removes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Drop {
    Rec,
    Cl,
    Both,
}

impl Drop {
    pub fn tag(self) -> &'static str {
        match self {
            Drop::Rec => "w/o rec",
            Drop::Cl => "w/o cl",
            Drop::Both => "w/o rec+cl",
        }
    }

    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        let mut c = cfg.clone();
        if matches!(self, Drop::Rec | Drop::Both) {
            c.mu = 0.0;
        }
        if matches!(self, Drop::Cl | Drop::Both) {
            c.gamma = 0.0;
        }
        c
    }
}

impl std::str::FromStr for Drop {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rec" => Ok(Drop::Rec),
            "cl" => Ok(Drop::Cl),
            "both" => Ok(Drop::Both),
            _ => Err(Error::InvalidArgument(format!(
                "unknown ablation '{s}' (rec, cl, both)"
            ))),
        }
    }
}

pub fn ablate(
    g: &IncompleteGraph,
    cfg: &TrainConfig,
    drop: Drop,
    seeds: &[u64],
    threads: usize,
) -> Result<SeedSummary> {
    run_seeds_with(Method::MdsGnn, g, &drop.apply(cfg), seeds, threads, drop.tag())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    FeatureMissing,
    EdgeMissing,
    K,
    L,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::FeatureMissing => "feature_missing",
            SweepAxis::EdgeMissing => "edge_missing",
            SweepAxis::K => "k",
            SweepAxis::L => "L",
        }
    }

    /// `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &TrainConfig, value: f64) -> Result<TrainConfig> {
        let mut c = cfg.clone();
        let count = || {
            if value >= 1.0 && value.fract() == 0.0 && value.is_finite() {
                Ok(value as usize)
            } else {
                Err(Error::InvalidArgument(format!(
                    "{} needs a positive integer, got {value}",
                    self.name()
                )))
            }
        };
        match self {
            SweepAxis::FeatureMissing => c.feature_missing = value,
            SweepAxis::EdgeMissing => c.edge_missing = value,
            SweepAxis::K => c.knn_k = count()?,
            SweepAxis::L => c.ppr_steps = count()?,
        }
        c.validate()
            .map_err(|e| Error::InvalidArgument(format!("{} = {value}: {e}", self.name())))?;
        Ok(c)
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature_missing" => Ok(SweepAxis::FeatureMissing),
            "edge_missing" => Ok(SweepAxis::EdgeMissing),
            "k" => Ok(SweepAxis::K),
            "L" | "l" => Ok(SweepAxis::L),
            _ => Err(Error::InvalidArgument(format!(
                "unknown sweep axis '{s}' (feature_missing, edge_missing, k, L)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<(f64, SeedSummary)>,
}

impl SweepTable {
    /// Tab-separated `value mean std` with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("{}\tmean\tstd\n", self.axis.name());
        for (v, s) in &self.rows {
            out.push_str(&format!("{v}\t{}\t{}\n", s.mean, s.std));
        }
        out
    }
}

pub fn sweep(
    g: &IncompleteGraph,
    cfg: &TrainConfig,
    axis: SweepAxis,
    values: &[f64],
    seeds: &[u64],
    threads: usize,
) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one value".into()));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    let cfgs = values.iter().map(|&v| axis.apply(cfg, v)).collect::<Result<Vec<_>>>()?;
    // flatten (value, seed) so all runs share the worker pool
    let jobs: Vec<(usize, u64)> = (0..values.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let runs = par_map(&jobs, threads, |&(i, s)| run_one(Method::MdsGnn, g, &cfgs[i], s))?;
    let mut runs = runs.into_iter();
    let rows = values
        .iter()
        .map(|&v| {
            let chunk: Vec<RunMetrics> = runs.by_ref().take(seeds.len()).collect();
            (
                v,
                SeedSummary::new(Method::MdsGnn, format!("{}={v}", axis.name()), chunk),
            )
        })
        .collect();
    Ok(SweepTable { axis, rows })
}
