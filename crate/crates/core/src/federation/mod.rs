//! Synchronous client/server rounds over an in-memory transport.
//!
//! Three methods share the client code. `fedssa` exchanges class
//! Gaussians, filter coefficients and spectral energies and routes cluster
//! artifacts back; `fedavg` averages every parameter; `local` never talks to
//! the server. Clients only see what arrives through the transport, so the
//! order in which they run within a round does not change any result.

mod client;
mod messages;
mod report;
mod server;
mod transport;

pub use client::{ClientEval, ClientState, LocalObjective, LossBreakdown};
pub use messages::{ClientUpload, Download, ParamMessage, ServerBroadcast, Upload, WireSize};
pub use report::{
    write_diagnostics_csv, write_distances_csv, write_metrics_csv, DIAGNOSTICS_HEADER, DISTANCES_HEADER, METRICS_HEADER,
};
pub use server::{average_params, server_round, ServerConfig, ServerOutput};
pub use transport::{InMemoryTransport, Traffic};

use crate::graphs::{FederationDataset, GraphError};
use crate::metrics::MetricError;
use crate::models::{AdamConfig, ClientModel, ModelDims, ModelError, PairSampling, SpectralEnergy};
use crate::numcore::NumError;
use crate::rng::SeedStream;
use crate::semantic::{ClientClasses, ClusterFeature, SemanticError};
use crate::structural::{chordal_distance, StructuralError};
use crate::theory::{
    error_floor, measure_heterogeneity, measure_unclustered, ErrorFloorReport, FloorConstants,
    HeterogeneityReport, TheoryError,
};
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FederationError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("protocol error at client {client}: {detail}")]
    Protocol { client: usize, detail: String },
    #[error("training diverged at client {client} in round {round}: {detail}")]
    Divergence {
        client: usize,
        round: usize,
        detail: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error(transparent)]
    Structural(#[from] StructuralError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("graph error: {0}")]
    Graph(String),
}

impl From<GraphError> for FederationError {
    fn from(e: GraphError) -> Self {
        FederationError::Graph(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    FedSsa,
    FedAvg,
    Local,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::FedSsa => "fedssa",
            Method::FedAvg => "fedavg",
            Method::Local => "local",
        })
    }
}

/// Which alignment branches are active in `fedssa`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    pub semantic: bool,
    pub structural: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            semantic: true,
            structural: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedConfig {
    pub rounds: usize,
    pub epochs: usize,
    /// Polynomial order `K`.
    pub order: usize,
    pub k_node: usize,
    pub k_struct: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub hidden: usize,
    pub latent: usize,
    pub w_max: f64,
    pub adam: AdamConfig,
    pub method: Method,
    pub ablation: Ablation,
    pub pair_sampling: PairSampling,
    pub cluster_feature: ClusterFeature,
    pub floor_constants: FloorConstants,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            rounds: 50,
            epochs: 3,
            order: 6,
            k_node: 3,
            k_struct: 2,
            lambda1: 1e-3,
            lambda2: 1e-3,
            hidden: 32,
            latent: 8,
            w_max: 5.0,
            adam: AdamConfig::default(),
            method: Method::FedSsa,
            ablation: Ablation::default(),
            pair_sampling: PairSampling::Balanced,
            cluster_feature: ClusterFeature::Sample,
            floor_constants: FloorConstants::default(),
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<(), FederationError> {
        let err = |m: String| Err(FederationError::Config(m));
        if self.k_node == 0 || self.k_struct == 0 {
            return err("cluster counts must be at least 1".into());
        }
        if self.hidden == 0 || self.latent == 0 {
            return err("hidden and latent sizes must be at least 1".into());
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0 && self.lambda1.is_finite() && self.lambda2.is_finite()) {
            return err(format!("lambda1 = {}, lambda2 = {} must be finite and nonnegative", self.lambda1, self.lambda2));
        }
        if !(self.w_max > 0.0) {
            return err(format!("w_max = {} must be positive", self.w_max));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite()) {
            return err(format!("learning rate {} must be positive", a.lr));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return err("Adam betas must lie in [0, 1) and eps must be positive".into());
        }
        let c = &self.floor_constants;
        if [c.c1, c.c2, c.c3, c.c4].iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return err("error-floor constants must be positive".into());
        }
        Ok(())
    }

    fn objective(&self) -> LocalObjective {
        let active = self.method == Method::FedSsa;
        LocalObjective {
            semantic: active && self.ablation.semantic,
            structural: active && self.ablation.structural,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            pair_sampling: self.pair_sampling,
            w_max: self.w_max,
        }
    }
}

/// One client's row of a round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientMetrics {
    pub client: usize,
    pub eval: ClientEval,
    pub bytes_up: usize,
    pub bytes_down: usize,
}

/// Largest pairwise spreads with all clients in one cluster.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UnclusteredSpread {
    pub delta_mu: f64,
    pub delta_sigma: f64,
    pub eps_u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundDiagnostics {
    pub heterogeneity: HeterogeneityReport,
    pub floor: ErrorFloorReport,
    pub unclustered: UnclusteredSpread,
    /// Chordal distances between every pair of client energies, by id.
    pub chordal: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// Starts at 1.
    pub round: usize,
    /// Sorted by client id.
    pub clients: Vec<ClientMetrics>,
    /// Client means; a split metric averages the clients where it is defined.
    pub mean: ClientEval,
    /// Present for `fedssa` only.
    pub diagnostics: Option<RoundDiagnostics>,
    pub wall_ms: u128,
}

impl RoundMetrics {
    /// Mean test metric over clients, if any client defines one.
    pub fn mean_test(&self) -> Option<f64> {
        self.mean.test
    }
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct FederationOutcome {
    pub rounds: Vec<RoundMetrics>,
    /// Final model of each client, by id.
    pub models: Vec<ClientModel>,
    /// Uploads of the last `fedssa` round.
    pub last_uploads: Vec<ClientUpload>,
    /// Cluster maps of the last `fedssa` round.
    pub last_server: Option<ServerOutput>,
    /// Client uploads constructed over the whole run.
    pub uploads_built: usize,
    /// Messages sent `(up, down)`.
    pub messages: (usize, usize),
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

fn mean_eval(rows: &[ClientMetrics]) -> ClientEval {
    let n = rows.len().max(1) as f64;
    let loss = |f: fn(&LossBreakdown) -> f64| rows.iter().map(|r| f(&r.eval.losses)).sum::<f64>() / n;
    ClientEval {
        losses: LossBreakdown {
            ce: loss(|l| l.ce),
            vgae: loss(|l| l.vgae),
            node: loss(|l| l.node),
            structure: loss(|l| l.structure),
        },
        train: mean_of(rows.iter().map(|r| r.eval.train)),
        val: mean_of(rows.iter().map(|r| r.eval.val)),
        test: mean_of(rows.iter().map(|r| r.eval.test)),
    }
}

fn diagnose(uploads: &[ClientUpload], server: &ServerOutput, cfg: &FedConfig) -> Result<RoundDiagnostics, FederationError> {
    let classes: Vec<ClientClasses<'_>> = uploads
        .iter()
        .map(|u| (u.client, u.class_gaussians.as_slice()))
        .collect();
    let energies: Vec<&SpectralEnergy> = uploads.iter().map(|u| &u.energy).collect();
    let heterogeneity = measure_heterogeneity(&classes, &energies, &server.semantic, &server.structural)?;
    let (delta_mu, delta_sigma, eps_u) = measure_unclustered(&classes, &energies)?;
    let floor = error_floor(
        heterogeneity.delta_mu,
        heterogeneity.delta_sigma,
        heterogeneity.eps_u,
        cfg.floor_constants,
        cfg.lambda1,
        cfg.lambda2,
        cfg.order,
    )?;
    let chordal = energies
        .iter()
        .map(|a| energies.iter().map(|b| chordal_distance(&a.q, &b.q)).collect())
        .collect::<Result<_, _>>()?;
    Ok(RoundDiagnostics {
        heterogeneity,
        floor,
        chordal,
        unclustered: UnclusteredSpread {
            delta_mu,
            delta_sigma,
            eps_u,
        },
    })
}

/// Runs `cfg.rounds` rounds with clients visited in ascending id order.
pub fn run_federation(dataset: &FederationDataset, cfg: &FedConfig, seed: u64) -> Result<FederationOutcome, FederationError> {
    let order: Vec<usize> = (0..dataset.client_count()).collect();
    run_federation_ordered(dataset, cfg, seed, &order)
}

/// As [`run_federation`], visiting clients in `order` within each round.
pub fn run_federation_ordered(
    dataset: &FederationDataset,
    cfg: &FedConfig,
    seed: u64,
    order: &[usize],
) -> Result<FederationOutcome, FederationError> {
    cfg.validate()?;
    let m = dataset.client_count();
    let ids: Vec<usize> = (0..m).collect();
    let mut sorted_order = order.to_vec();
    sorted_order.sort_unstable();
    if sorted_order != ids {
        return Err(FederationError::Config("client order must be a permutation of the client ids".into()));
    }
    if cfg.method == Method::FedSsa && dataset.feature_dim() < cfg.order + 1 {
        return Err(FederationError::Config(format!(
            "feature dimension {} is smaller than the {} filter bands",
            dataset.feature_dim(),
            cfg.order + 1
        )));
    }
    let root = SeedStream::new(seed);
    let dims = ModelDims {
        features: dataset.feature_dim(),
        classes: dataset.num_classes(),
        order: cfg.order,
        hidden: cfg.hidden,
        latent: cfg.latent,
    };
    let init = ClientModel::init(dims, &mut root.named("init").rng());
    let mut clients = dataset
        .clients()
        .iter()
        .enumerate()
        .map(|(id, g)| ClientState::new(id, g.clone(), dataset.task(), init.clone(), cfg.adam))
        .collect::<Result<Vec<_>, _>>()?;
    let obj = cfg.objective();
    let server_cfg = ServerConfig {
        num_classes: dataset.num_classes(),
        k_node: cfg.k_node,
        k_struct: cfg.k_struct,
        cluster_feature: cfg.cluster_feature,
    };
    let mut transport = InMemoryTransport::new();
    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut last_uploads = Vec::new();
    let mut last_server = None;

    for r in 1..=cfg.rounds {
        let start = Instant::now();
        let mut evals = vec![ClientEval::default(); m];
        let stream = |id: usize| root.named("client").child(id as u64).child(r as u64);
        for &id in order {
            let client = &mut clients[id];
            match cfg.method {
                Method::FedSsa => {
                    let broadcast = match transport.recv_down(id) {
                        Some(Download::Broadcast(b)) => Some(b),
                        None if r == 1 => None,
                        _ => {
                            return Err(FederationError::Protocol {
                                client: id,
                                detail: format!("no broadcast available for round {r}"),
                            })
                        }
                    };
                    let (eval, up) = client.client_round(broadcast.as_ref(), cfg.epochs, &obj, r, &stream(id))?;
                    evals[id] = eval;
                    transport.send_up(Upload::Summary(up));
                }
                Method::FedAvg => {
                    client.train(None, cfg.epochs, &obj, r, &stream(id))?;
                    transport.send_up(Upload::Params(ParamMessage {
                        client: id,
                        tensors: client.model().tensors(),
                    }));
                }
                Method::Local => {
                    client.train(None, cfg.epochs, &obj, r, &stream(id))?;
                    evals[id] = client.evaluate(None, &obj, &stream(id))?;
                }
            }
        }

        let mut diagnostics = None;
        match cfg.method {
            Method::FedSsa => {
                let uploads: Vec<ClientUpload> = transport
                    .drain_up()
                    .into_iter()
                    .map(|u| match u {
                        Upload::Summary(s) => Ok(s),
                        Upload::Params(p) => Err(FederationError::Protocol {
                            client: p.client,
                            detail: "parameter upload in a fedssa round".into(),
                        }),
                    })
                    .collect::<Result<_, _>>()?;
                let out = server_round(&uploads, &ids, &server_cfg, &root.named("server").child(r as u64))?;
                diagnostics = Some(diagnose(&uploads, &out, cfg)?);
                for b in &out.broadcasts {
                    transport.send_down(b.client, Download::Broadcast(b.clone()));
                }
                last_uploads = uploads;
                last_server = Some(out);
            }
            Method::FedAvg => {
                let msgs: Vec<ParamMessage> = transport
                    .drain_up()
                    .into_iter()
                    .map(|u| match u {
                        Upload::Params(p) => Ok(p),
                        Upload::Summary(s) => Err(FederationError::Protocol {
                            client: s.client,
                            detail: "summary upload in a fedavg round".into(),
                        }),
                    })
                    .collect::<Result<_, _>>()?;
                let avg = average_params(&msgs, &ids)?;
                for &id in &ids {
                    transport.send_down(
                        id,
                        Download::Params(ParamMessage {
                            client: id,
                            tensors: avg.clone(),
                        }),
                    );
                }
                for &id in order {
                    let Some(Download::Params(p)) = transport.recv_down(id) else {
                        return Err(FederationError::Protocol {
                            client: id,
                            detail: "averaged parameters missing".into(),
                        });
                    };
                    clients[id].set_params(&p.tensors)?;
                    evals[id] = clients[id].evaluate(None, &obj, &stream(id))?;
                }
            }
            Method::Local => {}
        }

        let rows: Vec<ClientMetrics> = ids
            .iter()
            .map(|&id| {
                let t = transport.take_traffic(id);
                ClientMetrics {
                    client: id,
                    eval: evals[id],
                    bytes_up: t.up,
                    bytes_down: t.down,
                }
            })
            .collect();
        rounds.push(RoundMetrics {
            round: r,
            mean: mean_eval(&rows),
            clients: rows,
            diagnostics,
            wall_ms: start.elapsed().as_millis(),
        });
    }

    Ok(FederationOutcome {
        rounds,
        models: clients.iter().map(|c| c.model().clone()).collect(),
        last_uploads,
        last_server,
        uploads_built: clients.iter().map(ClientState::uploads_built).sum(),
        messages: transport.message_counts(),
    })
}
