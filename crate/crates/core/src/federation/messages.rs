use crate::models::{ClassGaussian, SpectralEnergy};
use crate::numcore::DenseMatrix;
use serde::{Deserialize, Serialize};

/// Size of a message on the simulated wire: 8 bytes per number or index.
pub trait WireSize {
    fn wire_bytes(&self) -> usize;
}

const WORD: usize = 8;

impl WireSize for DenseMatrix {
    fn wire_bytes(&self) -> usize {
        WORD * (2 + self.rows() * self.cols())
    }
}

impl WireSize for ClassGaussian {
    fn wire_bytes(&self) -> usize {
        // class, count, mean, and the full or diagonal covariance.
        let cov = if self.is_diagonal() {
            self.dim()
        } else {
            self.dim() * self.dim()
        };
        WORD * (2 + self.mean.len() + cov)
    }
}

/// What a client reveals to the server in one round.
///
/// Only model-derived statistics: filter coefficients, class Gaussians,
/// the spectral energy and per-class training counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientUpload {
    pub client: usize,
    pub coeffs: Vec<f64>,
    /// One Gaussian per class with training labels; empty when the
    /// semantic branch is disabled.
    pub class_gaussians: Vec<ClassGaussian>,
    pub energy: SpectralEnergy,
    /// Training-labeled nodes per class.
    pub sample_counts: Vec<usize>,
}

impl WireSize for ClientUpload {
    fn wire_bytes(&self) -> usize {
        WORD * (1 + self.coeffs.len() + self.sample_counts.len())
            + self.class_gaussians.iter().map(WireSize::wire_bytes).sum::<usize>()
            + self.energy.s.wire_bytes()
            + self.energy.q.wire_bytes()
    }
}

/// Cluster artifacts routed to one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerBroadcast {
    pub client: usize,
    /// Representative of the client's cluster for each class it uploaded.
    pub representatives: Vec<ClassGaussian>,
    /// Mean coefficients of the client's structural cluster.
    pub coeff_mean: Vec<f64>,
}

impl ServerBroadcast {
    pub fn representative(&self, class: usize) -> Option<&ClassGaussian> {
        self.representatives.iter().find(|g| g.class == class)
    }
}

impl WireSize for ServerBroadcast {
    fn wire_bytes(&self) -> usize {
        WORD * (1 + self.coeff_mean.len())
            + self.representatives.iter().map(WireSize::wire_bytes).sum::<usize>()
    }
}

/// Full parameter list, exchanged only by the averaging baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamMessage {
    pub client: usize,
    pub tensors: Vec<DenseMatrix>,
}

impl WireSize for ParamMessage {
    fn wire_bytes(&self) -> usize {
        WORD + self.tensors.iter().map(WireSize::wire_bytes).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Upload {
    Summary(ClientUpload),
    Params(ParamMessage),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Download {
    Broadcast(ServerBroadcast),
    Params(ParamMessage),
}

impl Upload {
    pub fn client(&self) -> usize {
        match self {
            Upload::Summary(u) => u.client,
            Upload::Params(p) => p.client,
        }
    }
}

impl WireSize for Upload {
    fn wire_bytes(&self) -> usize {
        match self {
            Upload::Summary(u) => u.wire_bytes(),
            Upload::Params(p) => p.wire_bytes(),
        }
    }
}

impl WireSize for Download {
    fn wire_bytes(&self) -> usize {
        match self {
            Download::Broadcast(b) => b.wire_bytes(),
            Download::Params(p) => p.wire_bytes(),
        }
    }
}
