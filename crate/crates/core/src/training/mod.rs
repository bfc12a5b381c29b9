//! End-to-end training, evaluation and the experiment drivers built on it.

mod config;
mod experiments;
mod metrics;
mod model;
mod optim;
mod suite;

pub use config::{PredictionStream, TrainConfig};
pub use experiments::{
    ablate, gcn_baseline, gcn_forward, gcn_grad_check, gcn_init, gcn_propagator, mean_std, par_map, prepare, run_seeds,
    run_seeds_with, sweep, Drop, GcnParams, Method, SeedSummary, SweepAxis, SweepTable,
};
pub use metrics::{
    read_records, write_records, EpochRecord, Record, RunMetrics, RunRecord, SummaryRecord, SweepRecord,
};
pub use model::{
    accuracy, combined_loss_grad_check, fit, init_params, load_checkpoint, predict, predict_probs, save_checkpoint,
    train_step, EpochLosses, Model, TrainState,
};
pub use optim::Adam;
pub use suite::{gradient_suite, tiny_incomplete_graph, GRAD_TOLERANCE};
