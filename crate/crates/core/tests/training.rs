use mdsgnn::graphdata::{sbm_benchmark, Graph, IncompleteGraph, MaskMatrix, SbmParams, Splits};
use mdsgnn::numerics::{glorot_bound, Parameters, Tensor};
use mdsgnn::rng;
use mdsgnn::training::*;
use mdsgnn::Error;

/// Three cliques of 20 nodes whose features are exactly their class block,
/// so a linear classifier reaches 100%.
fn separable() -> IncompleteGraph {
    let p = SbmParams {
        classes: 3,
        nodes_per_class: 20,
        p_intra: 0.3,
        p_inter: 0.0,
        feature_dim: 12,
        p_feature_on: 1.0,
        p_feature_noise: 0.0,
        train_per_class: 5,
        val_per_class: 5,
    };
    IncompleteGraph::complete(sbm_benchmark(&p, 3).unwrap())
}

fn timeless(runs: &[RunMetrics]) -> Vec<RunMetrics> {
    runs.iter()
        .map(|r| RunMetrics {
            wall_seconds: 0.0,
            ..r.clone()
        })
        .collect()
}

fn small(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        hidden: 16,
        proj: 16,
        gae_hidden: 16,
        heads: 2,
        knn_k: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn init_is_deterministic_and_within_glorot_bounds() {
    let cfg = small(0);
    let a = init_params(&cfg, 12, 3, &mut rng::stream(7, rng::INIT)).unwrap();
    let b = init_params(&cfg, 12, 3, &mut rng::stream(7, rng::INIT)).unwrap();
    assert_eq!(a, b);
    let bound = glorot_bound(12, 16);
    assert!(a.clf.w_hidden.data().iter().all(|v| v.abs() <= bound));
    assert!(a.gae.fill.data().iter().all(|&v| v == 0.0));
    let c = init_params(&cfg, 12, 3, &mut rng::stream(8, rng::INIT)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn identical_seeds_give_identical_traces() {
    let g = separable();
    let cfg = TrainConfig {
        replace_prob: 0.5,
        ..small(8)
    };
    let g = prepare(
        &g,
        &TrainConfig {
            feature_missing: 0.3,
            ..cfg.clone()
        },
        1,
    )
    .unwrap();
    let (_, a) = fit(&g, &cfg).unwrap();
    let (_, b) = fit(&g, &cfg).unwrap();
    assert_eq!(a.epochs, b.epochs);
    let (_, c) = fit(&g, &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.epochs, c.epochs);
}

#[test]
fn loss_decreases_on_separable_data() {
    let (_, m) = fit(&separable(), &small(20)).unwrap();
    assert_eq!(m.epochs.len(), 20);
    assert!(
        m.epochs[19].total < m.epochs[0].total,
        "{} -> {}",
        m.epochs[0].total,
        m.epochs[19].total
    );
}

#[test]
fn supervised_only_loss_decreases() {
    let cfg = TrainConfig {
        lambda: 0.0,
        mu: 0.0,
        gamma: 0.0,
        ..small(50)
    };
    let (_, m) = fit(&separable(), &cfg).unwrap();
    assert!(m.epochs[49].total < m.epochs[0].total);
    for e in &m.epochs {
        assert_eq!(e.total, e.l_ce);
    }
}

#[test]
fn separable_accuracy() {
    let g = separable();
    let (_, m) = fit(&g, &small(100)).unwrap();
    assert!(m.test_acc >= 0.95, "mdsgnn {}", m.test_acc);
    let gcn = gcn_baseline(&g, &small(100)).unwrap();
    assert!(gcn.test_acc >= 0.9, "gcn {}", gcn.test_acc);
}

#[test]
fn zero_epochs_reports_the_untrained_model() {
    let (state, m) = fit(&separable(), &small(0)).unwrap();
    assert!(m.epochs.is_empty());
    assert_eq!(m.best_epoch, 0);
    assert_eq!(state.epoch, 0);
    assert!((0.0..=1.0).contains(&m.test_acc));
}

#[test]
fn test_accuracy_is_read_at_the_best_validation_epoch() {
    let g = prepare(
        &separable(),
        &TrainConfig {
            feature_missing: 0.5,
            edge_missing: 0.5,
            ..small(0)
        },
        2,
    )
    .unwrap();
    let (_, m) = fit(&g, &small(40)).unwrap();
    let best_val = m.epochs.iter().map(|e| e.val_acc).fold(f64::NEG_INFINITY, f64::max);
    let first = m.epochs.iter().find(|e| e.val_acc == best_val).unwrap();
    assert_eq!(m.best_epoch, first.epoch);
    assert_eq!(m.val_acc, best_val);
    assert_eq!(m.test_acc, first.test_acc);
}

#[test]
fn returned_model_is_the_best_validation_checkpoint() {
    let g = separable();
    let cfg = small(15);
    let (state, m) = fit(&g, &cfg).unwrap();
    let pred = predict(&state.model, &g, &cfg).unwrap();
    let s = g.graph().splits();
    assert_eq!(accuracy(&pred, g.graph().labels(), &s.val), m.val_acc);
    assert_eq!(accuracy(&pred, g.graph().labels(), &s.test), m.test_acc);
}

#[test]
fn checkpoint_round_trip_predicts_identically() {
    let g = prepare(
        &separable(),
        &TrainConfig {
            feature_missing: 0.4,
            ..small(0)
        },
        5,
    )
    .unwrap();
    for stream in [
        PredictionStream::Original,
        PredictionStream::Augmented,
        PredictionStream::Mean,
    ] {
        let cfg = TrainConfig { stream, ..small(5) };
        let (state, _) = fit(&g, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_checkpoint(&path, &state.model).unwrap();
        let loaded = load_checkpoint(&path, &cfg, 12, 3).unwrap();
        assert_eq!(loaded, state.model);
        assert_eq!(
            predict_probs(&loaded, &g, &cfg).unwrap(),
            predict_probs(&state.model, &g, &cfg).unwrap()
        );
    }
}

#[test]
fn checkpoint_layout_mismatch_is_rejected() {
    let g = separable();
    let (state, _) = fit(&g, &small(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    save_checkpoint(&path, &state.model).unwrap();
    assert!(load_checkpoint(&path, &TrainConfig { hidden: 8, ..small(1) }, 12, 3).is_err());
    assert!(load_checkpoint(
        &path,
        &TrainConfig {
            gat_layers: 3,
            ..small(1)
        },
        12,
        3
    )
    .is_err());
}

#[test]
fn predictions_are_the_row_argmax() {
    let g = separable();
    let cfg = small(3);
    let (state, _) = fit(&g, &cfg).unwrap();
    let probs = predict_probs(&state.model, &g, &cfg).unwrap();
    let pred = predict(&state.model, &g, &cfg).unwrap();
    for (i, &p) in pred.iter().enumerate() {
        let row = probs.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let brute = row.iter().position(|&v| v == max).unwrap();
        assert_eq!(p, brute);
    }
}

#[test]
fn uniform_predictions_pick_class_zero() {
    let g = separable();
    let cfg = small(0);
    let (mut state, _) = fit(&g, &cfg).unwrap();
    state.model.clf.w_out = Tensor::zeros(16, 3);
    assert!(predict(&state.model, &g, &cfg).unwrap().iter().all(|&c| c == 0));
}

#[test]
fn mean_stream_of_identical_streams() {
    // bypassing the autoencoder and teleporting fully makes both streams
    // see X' exactly
    let g = separable();
    let base = TrainConfig {
        mu: 0.0,
        bypass_gae_without_rec: true,
        alpha: 1.0,
        ..small(4)
    };
    let (state, _) = fit(&g, &base).unwrap();
    let orig = predict(&state.model, &g, &base).unwrap();
    for stream in [PredictionStream::Augmented, PredictionStream::Mean] {
        assert_eq!(
            predict(&state.model, &g, &TrainConfig { stream, ..base.clone() }).unwrap(),
            orig
        );
    }
}

#[test]
fn combined_loss_gradient_matches_finite_differences() {
    // 12 nodes, 4 missing
    let p = SbmParams {
        classes: 3,
        nodes_per_class: 4,
        p_intra: 0.7,
        p_inter: 0.1,
        feature_dim: 6,
        p_feature_on: 0.7,
        p_feature_noise: 0.2,
        train_per_class: 2,
        val_per_class: 1,
    };
    let g = IncompleteGraph::complete(sbm_benchmark(&p, 1).unwrap());
    let g = prepare(
        &g,
        &TrainConfig {
            feature_missing: 0.34,
            edge_missing: 0.2,
            ..small(0)
        },
        9,
    )
    .unwrap();
    assert_eq!(g.mask().missing_count(), 4);
    for (recon_loss, contrast, bias) in [("bce", "cross_view", false), ("mse", "canonical", true)] {
        let mut cfg = TrainConfig {
            hidden: 5,
            proj: 3,
            gae_hidden: 4,
            heads: 2,
            knn_k: 3,
            ..small(0)
        };
        cfg.set("recon_loss", recon_loss).unwrap();
        cfg.set("contrast", contrast).unwrap();
        cfg.classifier_bias = bias;
        let err = combined_loss_grad_check(&g, &cfg).unwrap();
        assert!(err < 1e-4, "{recon_loss}/{contrast}: {err}");
    }
}

#[test]
fn gcn_gradient_matches_finite_differences() {
    let g = separable();
    let err = gcn_grad_check(&g, &TrainConfig { hidden: 6, ..small(0) }).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn gcn_without_edges_is_an_mlp() {
    let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
    let splits = Splits {
        train: vec![0, 1],
        val: vec![2],
        test: vec![],
    };
    let g = IncompleteGraph::complete(Graph::from_edges(x, &[], vec![0, 1, 0], 2, splits).unwrap());
    let a = gcn_propagator(&g);
    assert_eq!(a.to_dense(), Tensor::identity(3));
}

#[test]
fn exploding_lr_aborts_with_the_epoch() {
    let cfg = TrainConfig { lr: 1e200, ..small(5) };
    match fit(&separable(), &cfg) {
        Err(Error::NonFinite { component, epoch }) => {
            assert!(epoch >= 2, "{component} at {epoch}");
        }
        other => panic!("expected a non-finite abort, got {:?}", other.map(|(_, m)| m.test_acc)),
    }
}

#[test]
fn pure_supervised_ablation() {
    let cfg = TrainConfig {
        lambda: 0.0,
        ..TrainConfig::default()
    };
    let c = Drop::Both.apply(&cfg);
    assert_eq!((c.lambda, c.mu, c.gamma), (0.0, 0.0, 0.0));
    let r = Drop::Rec.apply(&cfg);
    assert_eq!((r.mu, r.gamma), (0.0, cfg.gamma));
    assert_eq!(Drop::Cl.tag(), "w/o cl");
}

#[test]
fn seed_statistics() {
    let (m, s) = mean_std(&[0.6, 0.7]);
    assert!((m - 0.65).abs() < 1e-15);
    assert!((s - 0.070_710_678_118_654_75).abs() < 1e-12);
    assert_eq!(mean_std(&[0.8]), (0.8, 0.0));

    let g = separable();
    let one = run_seeds(&g, &small(5), &[4], 1).unwrap();
    assert_eq!(one.std, 0.0);
    assert_eq!(one.mean, one.runs[0].test_acc);

    let five = run_seeds(&g, &small(5), &[1, 2, 3, 4, 5], 3).unwrap();
    let accs = five.test_accs();
    let lo = accs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(lo <= five.mean && five.mean <= hi);
    assert_eq!(five.seeds(), vec![1, 2, 3, 4, 5]);

    let sequential = run_seeds(&g, &small(5), &[1, 2, 3, 4, 5], 1).unwrap();
    assert_eq!(timeless(&sequential.runs), timeless(&five.runs));
    assert_eq!((sequential.mean, sequential.std), (five.mean, five.std));
    assert!(run_seeds(&g, &small(5), &[], 1).is_err());
}

#[test]
fn corruption_is_shared_across_methods_and_fixed_per_seed() {
    let g = separable();
    let cfg = TrainConfig {
        feature_missing: 0.5,
        edge_missing: 0.5,
        ..small(0)
    };
    let a = prepare(&g, &cfg, 3).unwrap();
    assert_eq!(a, prepare(&g, &cfg, 3).unwrap());
    assert_ne!(a, prepare(&g, &cfg, 4).unwrap());
    assert_eq!(a.mask().missing_count(), 30);
}

#[test]
fn sweep_bookkeeping() {
    let g = separable();
    let cfg = small(3);
    let t = sweep(&g, &cfg, SweepAxis::FeatureMissing, &[0.0, 0.5], &[1, 2], 2).unwrap();
    assert_eq!(t.rows.len(), 2);
    let plain = run_seeds(&g, &cfg, &[1, 2], 1).unwrap();
    assert_eq!(timeless(&t.rows[0].1.runs), timeless(&plain.runs));
    let tsv = t.to_tsv();
    assert_eq!(tsv.lines().count(), 3);
    assert!(tsv.starts_with("feature_missing\tmean\tstd\n"));

    let k = sweep(&g, &cfg, SweepAxis::K, &[2.0, 4.0, 6.0], &[1], 1).unwrap();
    assert_eq!(k.rows.len(), 3);
    assert!(sweep(&g, &cfg, SweepAxis::K, &[2.5], &[1], 1).is_err());
    assert!(sweep(&g, &cfg, SweepAxis::FeatureMissing, &[1.5], &[1], 1).is_err());
    assert!(sweep(&g, &cfg, SweepAxis::L, &[], &[1], 1).is_err());
}

#[test]
fn learned_inference_fill_changes_only_missing_rows_input() {
    let g = prepare(
        &separable(),
        &TrainConfig {
            feature_missing: 0.5,
            ..small(0)
        },
        1,
    )
    .unwrap();
    let cfg = small(10);
    let (state, _) = fit(&g, &cfg).unwrap();
    assert!(
        state.model.gae.fill.data().iter().any(|&v| v != 0.0),
        "fill vector never trained"
    );
    let learned = TrainConfig {
        inference_fill: mdsgnn::reconstruction::InferenceFill::Learned,
        ..cfg.clone()
    };
    assert_ne!(
        predict_probs(&state.model, &g, &cfg).unwrap(),
        predict_probs(&state.model, &g, &learned).unwrap()
    );
    let complete = IncompleteGraph::new(g.graph().clone(), MaskMatrix::all_known(60)).unwrap();
    assert_eq!(
        predict_probs(&state.model, &complete, &cfg).unwrap(),
        predict_probs(&state.model, &complete, &learned).unwrap()
    );
    assert!(state.model.num_scalars() > 0);
}
