//! Dual-stream graph neural network for node classification on
//! graphs whose node features and edges are both partially missing.
//!
//! The pipeline reconstructs missing features with a GAT autoencoder,
//! builds a cosine kNN graph over the reconstruction, propagates the raw
//! incomplete features over that graph with personalized PageRank, and
//! trains one shared classifier on both streams with a contrastive term
//! tying the streams together.

pub mod dualstream;
pub mod error;
pub mod graphdata;
pub mod numerics;
pub mod propagation;
pub mod reconstruction;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
