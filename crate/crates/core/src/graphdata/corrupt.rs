use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::graphdata::{Graph, IncompleteGraph, MaskMatrix};
use crate::rng;

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("rate {rate} outside [0, 1]")));
    }
    Ok(())
}

fn count_for(rate: f64, total: usize) -> usize {
    ((rate * total as f64).floor() as usize).min(total)
}

/// Hides the feature rows of `⌊rate·n⌋` uniformly chosen nodes.
pub fn apply_feature_mask(g: &Graph, rate: f64, seed: u64) -> Result<IncompleteGraph> {
    mask_more_features(&IncompleteGraph::complete(g.clone()), rate, seed)
}

/// Like [`apply_feature_mask`] on a graph that may already have hidden rows;
/// the new selection is drawn over all nodes and combined with the old mask.
pub fn mask_more_features(g: &IncompleteGraph, rate: f64, seed: u64) -> Result<IncompleteGraph> {
    check_rate(rate)?;
    let n = g.graph().num_nodes();
    let mut known = g.mask().known().to_vec();
    let mut rng = rng::stream(seed, rng::FEATURE_MASK);
    for i in sample(&mut rng, n, count_for(rate, n)) {
        known[i] = false;
    }
    IncompleteGraph::new(g.graph().clone(), MaskMatrix::from_known(known))
}

/// Removes `⌊rate·|E|⌋` uniformly chosen undirected edges.
pub fn drop_edges(g: &Graph, rate: f64, seed: u64) -> Result<Graph> {
    check_rate(rate)?;
    let edges = g.edges();
    let mut rng = rng::stream(seed, rng::EDGE_DROP);
    let mut removed = vec![false; edges.len()];
    for k in sample(&mut rng, edges.len(), count_for(rate, edges.len())) {
        removed[k] = true;
    }
    let mut neighbors = vec![Vec::new(); g.num_nodes()];
    for (&(u, v), _) in edges.iter().zip(&removed).filter(|(_, &r)| !r) {
        neighbors[u].push(v);
        neighbors[v].push(u);
    }
    for list in &mut neighbors {
        list.sort_unstable();
    }
    Ok(g.with_neighbors(neighbors))
}

/// Feature masking followed by edge dropping, each on its own RNG stream.
pub fn corrupt(g: &IncompleteGraph, feature_rate: f64, edge_rate: f64, seed: u64) -> Result<IncompleteGraph> {
    let masked = mask_more_features(g, feature_rate, seed)?;
    let (graph, mask) = masked.into_parts();
    let dropped = drop_edges(&graph, edge_rate, seed)?;
    IncompleteGraph::new(dropped, mask)
}
