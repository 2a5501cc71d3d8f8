//! Client subgraphs, Laplacian propagation, synthetic data and partitioning.

mod io;
mod laplacian;
mod partition;
mod split;
mod synth;

pub use io::{load_dataset, load_graph, save_dataset, save_graph, DatasetFile, GraphFile};
pub use laplacian::{laplacian_powers, normalized_laplacian};
pub use partition::{partition_nonoverlap, partition_overlap, OVERLAP_SAMPLES};
pub use split::{stratified_split, SplitFractions};
pub use synth::{planted_class_means, synth_dataset, SynthSpec};

use crate::numcore::{DenseMatrix, NumError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("infeasible partition: {0}")]
    Infeasible(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed graph document: {0}")]
    Format(#[from] serde_json::Error),
}

/// Train/validation/test node indices. Pairwise disjoint.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Masks {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Which of the three splits a metric refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl Masks {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// One client's undirected node-classification graph.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    features: DenseMatrix,
    labels: Vec<usize>,
    num_classes: usize,
    masks: Masks,
}

impl LocalGraph {
    /// Validates and canonicalizes a graph.
    ///
    /// Edges are stored as sorted `(u, v)` pairs with `u < v`; duplicates in
    /// either orientation collapse to one edge. Self-loops are rejected.
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: DenseMatrix,
        labels: Vec<usize>,
        num_classes: usize,
        masks: Masks,
    ) -> Result<Self, GraphError> {
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(GraphError::Invalid(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u == v {
                return Err(GraphError::Invalid(format!("self-loop at node {u}")));
            }
            set.insert((u.min(v), u.max(v)));
        }
        if features.rows() != n {
            return Err(GraphError::Invalid(format!(
                "features have {} rows, expected {n}",
                features.rows()
            )));
        }
        if labels.len() != n {
            return Err(GraphError::Invalid(format!(
                "{} labels for {n} nodes",
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(GraphError::Invalid("class count must be positive".into()));
        }
        if let Some(&c) = labels.iter().find(|&&c| c >= num_classes) {
            return Err(GraphError::Invalid(format!(
                "label {c} outside [0, {num_classes})"
            )));
        }
        let mut seen = vec![false; n];
        for split in Split::ALL {
            for &i in masks.get(split) {
                if i >= n {
                    return Err(GraphError::Invalid(format!("mask index {i} out of range")));
                }
                if seen[i] {
                    return Err(GraphError::Invalid(format!(
                        "node {i} appears in more than one mask entry"
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(Self {
            n,
            edges: set.into_iter().collect(),
            features,
            labels,
            num_classes,
            masks,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn masks(&self) -> &Masks {
        &self.masks
    }

    pub fn with_masks(mut self, masks: Masks) -> Result<Self, GraphError> {
        let edges = std::mem::take(&mut self.edges);
        Self::new(self.n, edges, self.features, self.labels, self.num_classes, masks)
    }

    /// Sorted neighbor lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj.iter_mut().for_each(|a| a.sort_unstable());
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Fraction of edges joining same-label endpoints; `None` without edges.
    pub fn homophily_ratio(&self) -> Option<f64> {
        if self.edges.is_empty() {
            return None;
        }
        let same = self
            .edges
            .iter()
            .filter(|(u, v)| self.labels[*u] == self.labels[*v])
            .count();
        Some(same as f64 / self.edges.len() as f64)
    }

    /// Subgraph induced by `nodes` (in the given order), masks cleared.
    pub fn induced(&self, nodes: &[usize]) -> Result<LocalGraph, GraphError> {
        let mut local = vec![usize::MAX; self.n];
        for (i, &g) in nodes.iter().enumerate() {
            if g >= self.n {
                return Err(GraphError::Invalid(format!("node {g} out of range")));
            }
            if local[g] != usize::MAX {
                return Err(GraphError::Invalid(format!("node {g} listed twice")));
            }
            local[g] = i;
        }
        let edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .filter(|(u, v)| local[*u] != usize::MAX && local[*v] != usize::MAX)
            .map(|(u, v)| (local[*u], local[*v]))
            .collect();
        let features = self.features.select_rows(nodes);
        let labels = nodes.iter().map(|&g| self.labels[g]).collect();
        LocalGraph::new(
            nodes.len(),
            edges,
            features,
            labels,
            self.num_classes,
            Masks::default(),
        )
    }
}

/// Evaluation regime of a federation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Multiclass,
    BinaryAuc,
}

/// The clients of one federation, sharing feature dimension and class count.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationDataset {
    clients: Vec<LocalGraph>,
    num_classes: usize,
    feature_dim: usize,
    task: TaskKind,
    /// Global node ids of each client's nodes, when derived from one graph.
    node_maps: Option<Vec<Vec<usize>>>,
    /// Global edges present in no client.
    dropped_edges: usize,
}

impl FederationDataset {
    pub fn new(clients: Vec<LocalGraph>, task: TaskKind) -> Result<Self, GraphError> {
        let first = clients
            .first()
            .ok_or_else(|| GraphError::Invalid("federation needs at least one client".into()))?;
        let (c, d) = (first.num_classes(), first.feature_dim());
        for (i, g) in clients.iter().enumerate() {
            if g.num_classes() != c || g.feature_dim() != d {
                return Err(GraphError::Invalid(format!(
                    "client {i} has C={}, d={}; expected C={c}, d={d}",
                    g.num_classes(),
                    g.feature_dim()
                )));
            }
        }
        if task == TaskKind::BinaryAuc && c != 2 {
            return Err(GraphError::Invalid(format!(
                "binary-auc task requires 2 classes, got {c}"
            )));
        }
        Ok(Self {
            clients,
            num_classes: c,
            feature_dim: d,
            task,
            node_maps: None,
            dropped_edges: 0,
        })
    }

    pub(crate) fn with_provenance(mut self, node_maps: Vec<Vec<usize>>, dropped_edges: usize) -> Self {
        self.node_maps = Some(node_maps);
        self.dropped_edges = dropped_edges;
        self
    }

    /// Relabels the evaluation task, keeping clients and provenance.
    pub fn with_task(mut self, task: TaskKind) -> Result<Self, GraphError> {
        if task == TaskKind::BinaryAuc && self.num_classes != 2 {
            return Err(GraphError::Invalid(format!(
                "binary-auc task requires 2 classes, got {}",
                self.num_classes
            )));
        }
        self.task = task;
        Ok(self)
    }

    pub fn clients(&self) -> &[LocalGraph] {
        &self.clients
    }

    pub fn client_count(&self) -> usize {
        self.clients.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn node_maps(&self) -> Option<&[Vec<usize>]> {
        self.node_maps.as_deref()
    }

    pub fn dropped_edges(&self) -> usize {
        self.dropped_edges
    }
}
