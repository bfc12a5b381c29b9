//! Attributed graphs, missing-feature masks, dataset files, and the
//! corruption simulators that turn a complete graph into an incomplete one.

mod corrupt;
mod io;
mod synth;

pub use corrupt::{apply_feature_mask, corrupt, drop_edges, mask_more_features};
pub use io::{load_dataset, load_incomplete, save_dataset, save_incomplete};
pub use synth::{sbm_benchmark, SbmParams};

use crate::error::{Error, Result};
use crate::numerics::{SparseMatrix, Tensor};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Undirected attributed graph with node labels and a fixed split.
///
/// Adjacency is stored as sorted neighbor lists without self-loops; every
/// edge appears in both endpoint lists.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    neighbors: Vec<Vec<usize>>,
    features: Tensor,
    labels: Vec<usize>,
    classes: usize,
    splits: Splits,
}

impl Graph {
    /// Builds a graph from an undirected edge list. Each unordered pair may
    /// appear at most once, in either orientation.
    pub fn from_edges(
        features: Tensor,
        edges: &[(usize, usize)],
        labels: Vec<usize>,
        classes: usize,
        splits: Splits,
    ) -> Result<Self> {
        let n = features.rows();
        let mut neighbors = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u}, {v}) index out of range for n={n}"
                )));
            }
            if u == v {
                return Err(Error::InvalidArgument(format!("self-loop on node {u}")));
            }
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for (i, list) in neighbors.iter_mut().enumerate() {
            list.sort_unstable();
            if list.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidArgument(format!("duplicate edge at node {i}")));
            }
        }
        Self::from_neighbors(features, neighbors, labels, classes, splits)
    }

    pub(crate) fn from_neighbors(
        features: Tensor,
        neighbors: Vec<Vec<usize>>,
        labels: Vec<usize>,
        classes: usize,
        splits: Splits,
    ) -> Result<Self> {
        let g = Self {
            neighbors,
            features,
            labels,
            classes,
            splits,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        let n = self.features.rows();
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.neighbors.len() != n || self.labels.len() != n {
            return bad(format!(
                "{} feature rows, {} adjacency lists, {} labels",
                n,
                self.neighbors.len(),
                self.labels.len()
            ));
        }
        for (i, list) in self.neighbors.iter().enumerate() {
            if !list.windows(2).all(|w| w[0] < w[1]) {
                return bad(format!("neighbor list of {i} is not strictly sorted"));
            }
            for &j in list {
                if j >= n {
                    return bad(format!("neighbor {j} of {i} index out of range"));
                }
                if j == i {
                    return bad(format!("self-loop on node {i}"));
                }
                if self.neighbors[j].binary_search(&i).is_err() {
                    return bad(format!("asymmetric adjacency: {j} in N({i}) but not {i} in N({j})"));
                }
            }
        }
        if let Some((i, &y)) = self.labels.iter().enumerate().find(|(_, &y)| y >= self.classes) {
            return bad(format!("label {y} of node {i} out of range for c={}", self.classes));
        }
        let mut seen = vec![false; n];
        for (name, idx) in [
            ("train", &self.splits.train),
            ("val", &self.splits.val),
            ("test", &self.splits.test),
        ] {
            for &i in idx {
                if i >= n {
                    return bad(format!("{name} index {i} out of range"));
                }
                if seen[i] {
                    return bad(format!("node {i} appears in more than one split slot ({name})"));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn neighbor_lists(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.directed_entry_count() / 2
    }

    /// Number of stored directed entries (twice the undirected count).
    pub fn directed_entry_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    /// Undirected edges as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (u, list) in self.neighbors.iter().enumerate() {
            out.extend(list.iter().filter(|&&v| v > u).map(|&v| (u, v)));
        }
        out
    }

    pub fn adjacency(&self) -> SparseMatrix {
        SparseMatrix::from_adjacency(&self.neighbors)
    }

    pub fn with_features(&self, features: Tensor) -> Result<Self> {
        if features.rows() != self.num_nodes() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} nodes",
                features.rows(),
                self.num_nodes()
            )));
        }
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    pub(crate) fn with_neighbors(&self, neighbors: Vec<Vec<usize>>) -> Self {
        Self {
            neighbors,
            ..self.clone()
        }
    }
}

/// Per-node indicator of whether the feature row is observed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskMatrix {
    known: Vec<bool>,
}

impl MaskMatrix {
    pub fn all_known(n: usize) -> Self {
        Self { known: vec![true; n] }
    }

    pub fn from_known(known: Vec<bool>) -> Self {
        Self { known }
    }

    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }

    pub fn is_known(&self, i: usize) -> bool {
        self.known[i]
    }

    pub fn known(&self) -> &[bool] {
        &self.known
    }

    pub fn known_indices(&self) -> Vec<usize> {
        (0..self.known.len()).filter(|&i| self.known[i]).collect()
    }

    pub fn missing_indices(&self) -> Vec<usize> {
        (0..self.known.len()).filter(|&i| !self.known[i]).collect()
    }

    pub fn known_count(&self) -> usize {
        self.known.iter().filter(|&&k| k).count()
    }

    pub fn missing_count(&self) -> usize {
        self.len() - self.known_count()
    }
}

/// A graph whose feature matrix has every unknown row zeroed.
#[derive(Clone, Debug, PartialEq)]
pub struct IncompleteGraph {
    graph: Graph,
    mask: MaskMatrix,
}

impl IncompleteGraph {
    /// Pairs `graph` with `mask`, zeroing the rows the mask marks unknown.
    pub fn new(graph: Graph, mask: MaskMatrix) -> Result<Self> {
        if mask.len() != graph.num_nodes() {
            return Err(Error::Shape(format!(
                "mask of length {} for {} nodes",
                mask.len(),
                graph.num_nodes()
            )));
        }
        let mut x = graph.features.clone();
        for i in mask.missing_indices() {
            x.row_mut(i).fill(0.0);
        }
        let graph = Graph { features: x, ..graph };
        Ok(Self { graph, mask })
    }

    pub fn complete(graph: Graph) -> Self {
        let mask = MaskMatrix::all_known(graph.num_nodes());
        Self { graph, mask }
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn mask(&self) -> &MaskMatrix {
        &self.mask
    }

    pub fn into_parts(self) -> (Graph, MaskMatrix) {
        (self.graph, self.mask)
    }
}
