//! Stochastic block model graphs with class-correlated binary features.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graphdata::{Graph, Splits};
use crate::numerics::Tensor;
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct SbmParams {
    pub classes: usize,
    pub nodes_per_class: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    pub feature_dim: usize,
    /// Probability that a feature in the node's own class block is on.
    pub p_feature_on: f64,
    /// Probability that a feature outside the node's class block is on.
    pub p_feature_noise: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
}

impl Default for SbmParams {
    /// The 3-class, 300-node, 50-feature benchmark.
    fn default() -> Self {
        Self {
            classes: 3,
            nodes_per_class: 100,
            p_intra: 0.1,
            p_inter: 0.01,
            feature_dim: 50,
            p_feature_on: 0.2,
            p_feature_noise: 0.05,
            train_per_class: 20,
            val_per_class: 30,
        }
    }
}

/// Samples an SBM benchmark graph. Feature dimensions are split into
/// `classes` contiguous blocks; block `b` is the signal block of class `b`.
/// Splits are drawn per class; nodes not in train or val go to test.
pub fn sbm_benchmark(p: &SbmParams, seed: u64) -> Result<Graph> {
    if p.classes == 0 || p.nodes_per_class == 0 || p.feature_dim < p.classes {
        return Err(Error::InvalidArgument(format!("degenerate SBM parameters {p:?}")));
    }
    if p.train_per_class + p.val_per_class > p.nodes_per_class {
        return Err(Error::InvalidArgument("train + val exceed nodes per class".into()));
    }
    let n = p.classes * p.nodes_per_class;
    let labels: Vec<usize> = (0..n).map(|i| i / p.nodes_per_class).collect();

    let mut edge_rng = rng::stream(seed, "sbm-edges");
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let prob = if labels[u] == labels[v] { p.p_intra } else { p.p_inter };
            if edge_rng.gen::<f64>() < prob {
                edges.push((u, v));
            }
        }
    }

    let mut feat_rng = rng::stream(seed, "sbm-features");
    let mut x = Tensor::zeros(n, p.feature_dim);
    for (i, &label) in labels.iter().enumerate() {
        for j in 0..p.feature_dim {
            let block = j * p.classes / p.feature_dim;
            let prob = if block == label {
                p.p_feature_on
            } else {
                p.p_feature_noise
            };
            if feat_rng.gen::<f64>() < prob {
                x.set(i, j, 1.0);
            }
        }
    }

    let mut split_rng = rng::stream(seed, "sbm-splits");
    let mut splits = Splits::default();
    for c in 0..p.classes {
        let mut members: Vec<usize> = (c * p.nodes_per_class..(c + 1) * p.nodes_per_class).collect();
        members.shuffle(&mut split_rng);
        let (train, rest) = members.split_at(p.train_per_class);
        let (val, test) = rest.split_at(p.val_per_class);
        splits.train.extend_from_slice(train);
        splits.val.extend_from_slice(val);
        splits.test.extend_from_slice(test);
    }
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();

    Graph::from_edges(x, &edges, labels, p.classes, splits)
}
