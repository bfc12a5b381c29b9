//! Finite-difference checks of every differentiable component on small
//! random instances.

use rand::Rng as _;

use crate::dualstream::{classify, cross_entropy, ntxent, project, ClassifierParams, ClassifierVars, ContrastVariant};
use crate::error::Result;
use crate::graphdata::{corrupt, sbm_benchmark, IncompleteGraph, SbmParams};
use crate::numerics::{grad_check, Tensor};
use crate::reconstruction::{
    attention_pattern, decode, gat_layer, Aggregation, GaeParams, GaeVars, GatLayerParams, GatLayerVars, ReconConfig,
};
use crate::rng;
use crate::training::config::TrainConfig;
use crate::training::experiments::gcn_grad_check;
use crate::training::model::combined_loss_grad_check;

/// Relative-error threshold every component must stay under.
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// 12 nodes, 3 classes, 6 features, a third of the rows masked.
pub fn tiny_incomplete_graph(seed: u64) -> Result<IncompleteGraph> {
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
    let g = IncompleteGraph::complete(sbm_benchmark(&p, seed)?);
    corrupt(&g, 0.34, 0.2, seed)
}

fn random(rows: usize, cols: usize, r: &mut rng::Rng) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect()).expect("sized")
}

/// `(component, max relative error)` for each differentiable component.
pub fn gradient_suite() -> Result<Vec<(&'static str, f64)>> {
    let g = tiny_incomplete_graph(11)?;
    let n = g.graph().num_nodes();
    let f = g.graph().feature_dim();
    let mut r = rng::stream(11, "gradcheck");
    let pattern = attention_pattern(g.graph());
    let recon = ReconConfig {
        replace_prob: 0.0,
        input_dropout: 0.0,
        attn_dropout: 0.0,
        hidden: 4,
        layers: 2,
        heads: 2,
        ..ReconConfig::default()
    };
    let mut out = Vec::new();

    let h = random(n, f, &mut r);
    let mut gat = 0.0f64;
    for agg in [Aggregation::Concat, Aggregation::Average] {
        let layer = GatLayerParams::glorot(f, 3, 2, agg, &mut r);
        let weight = random(n, layer.output_width(), &mut r);
        let mut params = Vec::new();
        for t in 0..layer.heads() {
            params.extend([
                layer.weights[t].clone(),
                layer.attn_src[t].clone(),
                layer.attn_dst[t].clone(),
            ]);
        }
        params.push(h.clone());
        let err = grad_check(
            |tape, v| {
                let heads = layer.heads();
                let vars = GatLayerVars {
                    weights: (0..heads).map(|t| v[3 * t]).collect(),
                    attn_src: (0..heads).map(|t| v[3 * t + 1]).collect(),
                    attn_dst: (0..heads).map(|t| v[3 * t + 2]).collect(),
                    aggregation: agg,
                };
                let mut idle = rng::stream(0, "unused");
                let y = gat_layer(tape, v[3 * heads], &pattern, &vars, &recon, &mut idle, false)?;
                let w = tape.constant(weight.clone());
                let y = tape.mul(y, w)?;
                Ok(tape.sum(y))
            },
            &params,
            1e-5,
        )?;
        gat = gat.max(err);
    }
    out.push(("gat_layer", gat));

    let gae = GaeParams::glorot(f, &recon, &mut r)?;
    let latent = random(n, recon.hidden, &mut r);
    let target = random(n, f, &mut r);
    let dec_params = vec![
        gae.dec_hidden_w.clone(),
        gae.dec_hidden_b.map(|_| 0.1),
        gae.dec_out_w.clone(),
        gae.dec_out_b.clone(),
        latent,
    ];
    let err = grad_check(
        |tape, v| {
            let mut vars = gae.bind(tape);
            vars = GaeVars {
                dec_hidden_w: v[0],
                dec_hidden_b: v[1],
                dec_out_w: v[2],
                dec_out_b: v[3],
                ..vars
            };
            let y = decode(tape, v[4], &vars)?;
            let known = g.mask().known_indices();
            tape.masked_bce_with_logits(y, target.map(|t| (t + 1.0) / 2.0), known)
        },
        &dec_params,
        1e-5,
    )?;
    out.push(("gae_decoder", err));

    let clf = ClassifierParams::glorot(f, 5, 3, 4, true, &mut r);
    let x = random(n, f, &mut r);
    let x2 = random(n, f, &mut r);
    let labels = g.graph().labels();
    let train = g.graph().splits().train.clone();
    let clf_params = |p: &ClassifierParams| {
        vec![
            p.w_hidden.clone(),
            p.w_out.clone(),
            p.w_proj.clone(),
            p.b_hidden.clone().expect("bias on").map(|_| 0.05),
            p.b_out.clone().expect("bias on"),
        ]
    };
    let err = grad_check(
        |tape, v| {
            let vars = ClassifierVars::from_flat(&clf, v)?;
            let xv = tape.constant(x.clone());
            let s = classify(tape, xv, &vars)?;
            cross_entropy(tape, s.probs, labels, &train)
        },
        &clf_params(&clf),
        1e-5,
    )?;
    out.push(("classifier", err));

    let proj_weight = random(n, 4, &mut r);
    let err = grad_check(
        |tape, v| {
            let vars = ClassifierVars::from_flat(&clf, v)?;
            let xv = tape.constant(x.clone());
            let s = classify(tape, xv, &vars)?;
            let z = project(tape, s.hidden, &vars)?;
            let w = tape.constant(proj_weight.clone());
            let y = tape.mul(z, w)?;
            Ok(tape.sum(y))
        },
        &clf_params(&clf),
        1e-5,
    )?;
    out.push(("projection", err));

    let mut nt = 0.0f64;
    for variant in [ContrastVariant::CrossView, ContrastVariant::Canonical] {
        let err = grad_check(
            |tape, v| ntxent(tape, v[0], v[1], 0.2, variant),
            &[x.clone(), x2.clone()],
            1e-5,
        )?;
        nt = nt.max(err);
    }
    out.push(("ntxent", nt));

    let cfg = TrainConfig {
        hidden: 5,
        proj: 3,
        gae_hidden: 4,
        heads: 2,
        knn_k: 3,
        epochs: 0,
        ..TrainConfig::default()
    };
    let mut combined = combined_loss_grad_check(&g, &cfg)?;
    let mse = TrainConfig {
        recon_loss: crate::reconstruction::ReconLoss::Mse,
        contrast: ContrastVariant::Canonical,
        classifier_bias: true,
        ..cfg.clone()
    };
    combined = combined.max(combined_loss_grad_check(&g, &mse)?);
    out.push(("combined_loss", combined));

    out.push(("gcn", gcn_grad_check(&g, &TrainConfig { hidden: 6, ..cfg })?));
    Ok(out)
}
