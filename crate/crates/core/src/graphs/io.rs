//! JSON documents for single graphs and partitioned federations.

use super::{FederationDataset, GraphError, LocalGraph, Masks, TaskKind};
use crate::numcore::DenseMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// On-disk form of a [`LocalGraph`]. Unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub n: usize,
    /// Must be `false`; only undirected graphs are supported.
    pub directed: bool,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Row-major `n × feature_dim` values.
    pub features: Vec<f64>,
    pub edges: Vec<[usize; 2]>,
    pub labels: Vec<usize>,
    pub masks: Masks,
}

impl From<&LocalGraph> for GraphFile {
    fn from(g: &LocalGraph) -> Self {
        Self {
            n: g.node_count(),
            directed: false,
            num_classes: g.num_classes(),
            feature_dim: g.feature_dim(),
            features: g.features().as_slice().to_vec(),
            edges: g.edges().iter().map(|&(u, v)| [u, v]).collect(),
            labels: g.labels().to_vec(),
            masks: g.masks().clone(),
        }
    }
}

impl TryFrom<GraphFile> for LocalGraph {
    type Error = GraphError;

    fn try_from(f: GraphFile) -> Result<Self, GraphError> {
        if f.directed {
            return Err(GraphError::Invalid("directed graphs are not supported".into()));
        }
        let features = DenseMatrix::from_vec(f.n, f.feature_dim, f.features)?;
        LocalGraph::new(
            f.n,
            f.edges.into_iter().map(|[u, v]| (u, v)),
            features,
            f.labels,
            f.num_classes,
            f.masks,
        )
    }
}

/// On-disk form of a [`FederationDataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub task: TaskKind,
    pub clients: Vec<GraphFile>,
    #[serde(default)]
    pub node_maps: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub dropped_edges: usize,
}

impl From<&FederationDataset> for DatasetFile {
    fn from(ds: &FederationDataset) -> Self {
        Self {
            task: ds.task(),
            clients: ds.clients().iter().map(GraphFile::from).collect(),
            node_maps: ds.node_maps().map(<[_]>::to_vec),
            dropped_edges: ds.dropped_edges(),
        }
    }
}

impl TryFrom<DatasetFile> for FederationDataset {
    type Error = GraphError;

    fn try_from(f: DatasetFile) -> Result<Self, GraphError> {
        let clients = f
            .clients
            .into_iter()
            .map(LocalGraph::try_from)
            .collect::<Result<Vec<_>, _>>()?;
        let ds = FederationDataset::new(clients, f.task)?;
        Ok(match f.node_maps {
            Some(maps) => ds.with_provenance(maps, f.dropped_edges),
            None => ds,
        })
    }
}

pub fn save_graph(g: &LocalGraph, path: &Path) -> Result<(), GraphError> {
    std::fs::write(path, serde_json::to_vec_pretty(&GraphFile::from(g))?)?;
    Ok(())
}

pub fn load_graph(path: &Path) -> Result<LocalGraph, GraphError> {
    let file: GraphFile = serde_json::from_slice(&std::fs::read(path)?)?;
    LocalGraph::try_from(file)
}

pub fn save_dataset(ds: &FederationDataset, path: &Path) -> Result<(), GraphError> {
    std::fs::write(path, serde_json::to_vec_pretty(&DatasetFile::from(ds))?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<FederationDataset, GraphError> {
    let file: DatasetFile = serde_json::from_slice(&std::fs::read(path)?)?;
    FederationDataset::try_from(file)
}
