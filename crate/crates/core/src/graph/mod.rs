//! Graph storage and the operations that produce or reshape graphs.

mod adjacency;
mod io;
mod partition;
mod synthetic;

use std::collections::BTreeSet;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adjacency::{normalize_adjacency, SparseMatrix};
pub use io::{load_graph, save_graph};
pub use partition::{label_propagation, partition_graph, Partition};
pub use synthetic::{generate_synthetic, SyntheticSpec};

/// An undirected, unweighted, labelled graph with node features.
///
/// Edges are stored once as `(a, b)` with `a < b`, sorted, without
/// self-loops or duplicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    features: Array2<f64>,
    edges: Vec<(usize, usize)>,
    labels: Vec<usize>,
    num_classes: usize,
    train_mask: Vec<bool>,
}

impl Graph {
    /// Builds a graph, canonicalising the edge list (orientation, duplicates,
    /// self-loops) and validating every other invariant.
    pub fn new(
        features: Array2<f64>,
        edges: impl IntoIterator<Item = (usize, usize)>,
        labels: Vec<usize>,
        num_classes: usize,
        train_mask: Vec<bool>,
    ) -> Result<Self> {
        let n = labels.len();
        if num_classes < 2 {
            return Err(Error::InvalidGraph(format!(
                "num_classes must be at least 2, got {num_classes}"
            )));
        }
        if features.nrows() != n {
            return Err(Error::InvalidGraph(format!(
                "feature matrix has {} rows for {n} nodes",
                features.nrows()
            )));
        }
        if train_mask.len() != n {
            return Err(Error::InvalidGraph(format!(
                "train mask has length {} for {n} nodes",
                train_mask.len()
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::InvalidGraph(format!(
                "node {i} has label {y} outside [0, {num_classes})"
            )));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) references a node outside [0, {n})"
                )));
            }
            if a != b {
                set.insert((a.min(b), a.max(b)));
            }
        }
        Ok(Self {
            features,
            edges: set.into_iter().collect(),
            labels,
            num_classes,
            train_mask,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn train_mask(&self) -> &[bool] {
        &self.train_mask
    }

    pub fn num_train(&self) -> usize {
        self.train_mask.iter().filter(|&&m| m).count()
    }

    /// Mask selecting nodes outside the training set.
    pub fn test_mask(&self) -> Vec<bool> {
        self.train_mask.iter().map(|m| !m).collect()
    }

    /// Sorted neighbour lists.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes()];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    /// Label histogram over the nodes selected by `mask`.
    pub fn label_counts(&self, mask: &[bool]) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for (&y, _) in self.labels.iter().zip(mask).filter(|(_, &m)| m) {
            counts[y] += 1;
        }
        counts
    }

    /// Label histogram of the training nodes.
    pub fn train_label_counts(&self) -> Vec<usize> {
        self.label_counts(&self.train_mask)
    }

    /// Induced subgraph over `nodes`, in the given order.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Graph> {
        let mut index = vec![usize::MAX; self.num_nodes()];
        for (new, &old) in nodes.iter().enumerate() {
            if old >= self.num_nodes() {
                return Err(Error::InvalidArgument(format!("node {old} out of range")));
            }
            index[old] = new;
        }
        let edges = self.edges.iter().filter_map(|&(a, b)| {
            let (ia, ib) = (index[a], index[b]);
            (ia != usize::MAX && ib != usize::MAX).then_some((ia, ib))
        });
        Graph::new(
            self.features.select(Axis(0), nodes),
            edges,
            nodes.iter().map(|&i| self.labels[i]).collect(),
            self.num_classes,
            nodes.iter().map(|&i| self.train_mask[i]).collect(),
        )
    }

    /// Same graph with its training labels replaced.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Graph> {
        Graph::new(
            self.features.clone(),
            self.edges.iter().copied(),
            labels,
            self.num_classes,
            self.train_mask.clone(),
        )
    }

    /// Same nodes with a different edge set.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Graph> {
        Graph::new(
            self.features.clone(),
            edges,
            self.labels.clone(),
            self.num_classes,
            self.train_mask.clone(),
        )
    }

    /// Same graph with a different training mask.
    pub fn with_train_mask(&self, train_mask: Vec<bool>) -> Result<Graph> {
        Graph::new(
            self.features.clone(),
            self.edges.iter().copied(),
            self.labels.clone(),
            self.num_classes,
            train_mask,
        )
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.binary_search(&(a.min(b), a.max(b))).is_ok()
    }
}
