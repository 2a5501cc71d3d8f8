use super::messages::{ClientUpload, ServerBroadcast};
use super::FederationError;
use crate::graphs::{laplacian_powers, LocalGraph, Split, TaskKind};
use crate::metrics::{accuracy, auc};
use crate::models::{
    ce_loss, class_moments, elbo_loss, gaussian_kl_to_frozen, l_align, l_reg, spectral_energy, Adam,
    AdamConfig, ClassMoment, ClientModel, ModelError, PairSampling,
};
use crate::numcore::{DenseMatrix, DiffTape, NumError, Var};
use crate::rng::{standard_normals, SeedStream};
use serde::{Deserialize, Serialize};

/// Which terms enter a client's local objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalObjective {
    /// Pull class distributions toward the broadcast representatives.
    pub semantic: bool,
    /// Align and regularize the filter coefficients.
    pub structural: bool,
    pub lambda1: f64,
    pub lambda2: f64,
    pub pair_sampling: PairSampling,
    pub w_max: f64,
}

/// Values of the four loss components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub vgae: f64,
    pub node: f64,
    pub structure: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.ce + self.vgae + self.node + self.structure
    }
}

/// Losses and split metrics of a client's current model.
///
/// A split metric is `None` when it is undefined on that client, such as an
/// empty split or an AUC over a single class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientEval {
    pub losses: LossBreakdown,
    pub train: Option<f64>,
    pub val: Option<f64>,
    pub test: Option<f64>,
}

struct Forward {
    logits: Var,
    ce: Var,
    vgae: Var,
    node: Option<Var>,
    structure: Option<Var>,
    total: Var,
    moments: Vec<ClassMoment>,
}

/// Everything a client keeps between rounds. Nothing in here is sent.
#[derive(Debug, Clone)]
pub struct ClientState {
    id: usize,
    graph: LocalGraph,
    task: TaskKind,
    powers: Vec<DenseMatrix>,
    onehot: DenseMatrix,
    train_classes: Vec<usize>,
    model: ClientModel,
    adam: Adam,
    uploads_built: usize,
}

fn divergence(id: usize, round: usize, e: impl std::fmt::Display) -> FederationError {
    FederationError::Divergence {
        client: id,
        round,
        detail: e.to_string(),
    }
}

impl ClientState {
    pub fn new(id: usize, graph: LocalGraph, task: TaskKind, model: ClientModel, adam: AdamConfig) -> Result<Self, FederationError> {
        let dims = model.dims();
        if dims.features != graph.feature_dim() || dims.classes != graph.num_classes() {
            return Err(FederationError::Config(format!(
                "model shape does not fit client {id}'s data"
            )));
        }
        let powers = laplacian_powers(&graph, dims.order)?;
        let n = graph.node_count();
        let mut onehot = DenseMatrix::zeros(n, dims.classes);
        let labels = graph.labels();
        for &i in &graph.masks().train {
            onehot.set(i, labels[i], 1.0);
        }
        let train_classes = graph.masks().train.iter().map(|&i| labels[i]).collect();
        let adam = Adam::new(adam, &model.tensors());
        Ok(ClientState {
            id,
            graph,
            task,
            powers,
            onehot,
            train_classes,
            model,
            adam,
            uploads_built: 0,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn model(&self) -> &ClientModel {
        &self.model
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    /// Number of [`ClientUpload`]s this client has produced.
    pub fn uploads_built(&self) -> usize {
        self.uploads_built
    }

    /// Replaces every parameter; the optimizer state is kept.
    pub fn set_params(&mut self, tensors: &[DenseMatrix]) -> Result<(), FederationError> {
        Ok(self.model.set_tensors(tensors)?)
    }

    fn forward(
        &self,
        tape: &mut DiffTape,
        broadcast: Option<&ServerBroadcast>,
        obj: &LocalObjective,
        stream: &SeedStream,
    ) -> Result<Forward, ModelError> {
        let vars = self.model.register(tape);
        let powers: Vec<Var> = self.powers.iter().map(|h| tape.constant(h.clone())).collect();
        let (p, logits) = vars.gnn_forward(tape, &powers)?;
        let labels = self.graph.labels();
        let train = &self.graph.masks().train;
        let ce = ce_loss(tape, logits, labels, train)?;

        let onehot = tape.constant(self.onehot.clone());
        let (mu, logvar) = vars.encode(tape, p, onehot)?;
        let dims = self.model.dims();
        let n = self.graph.node_count();
        let eps = DenseMatrix::from_vec(n, dims.latent, standard_normals(&mut stream.named("eps").rng(), n * dims.latent))?;
        let elbo = elbo_loss(
            tape,
            mu,
            logvar,
            &eps,
            self.graph.edges(),
            &self.train_classes,
            dims.classes,
            obj.pair_sampling,
            &mut stream.named("pairs").rng(),
        )?;
        let moments = class_moments(tape, mu, logvar, labels, train, dims.classes)?;

        let mut total = tape.add(ce, elbo.loss)?;
        let node = match (obj.semantic, broadcast) {
            (true, Some(b)) => {
                let mut acc = tape.constant(DenseMatrix::scalar(0.0));
                for m in &moments {
                    let rep = b.representative(m.class).ok_or_else(|| {
                        ModelError::Contract(format!("no representative for class {}", m.class))
                    })?;
                    let kl = gaussian_kl_to_frozen(tape, m.mean, m.var, rep)?;
                    acc = tape.add(acc, kl)?;
                }
                total = tape.add(total, acc)?;
                Some(acc)
            }
            _ => None,
        };
        let structure = if obj.structural {
            let mut s = l_reg(tape, &vars.coeffs, obj.lambda1, obj.lambda2)?;
            if let Some(b) = broadcast {
                let a = l_align(tape, &vars.coeffs, &b.coeff_mean)?;
                s = tape.add(s, a)?;
            }
            total = tape.add(total, s)?;
            Some(s)
        } else {
            None
        };
        Ok(Forward {
            logits,
            ce,
            vgae: elbo.loss,
            node,
            structure,
            total,
            moments,
        })
    }

    /// Runs `epochs` full-batch optimizer steps on the local objective.
    ///
    /// On a non-finite loss or gradient the model and optimizer are restored
    /// to their state at entry and a divergence error is returned.
    pub fn train(
        &mut self,
        broadcast: Option<&ServerBroadcast>,
        epochs: usize,
        obj: &LocalObjective,
        round: usize,
        stream: &SeedStream,
    ) -> Result<(), FederationError> {
        let snapshot = (self.model.clone(), self.adam.clone());
        let result = self.train_inner(broadcast, epochs, obj, round, &stream.named("train"));
        if let Err(FederationError::Divergence { .. }) = &result {
            (self.model, self.adam) = snapshot;
        }
        result
    }

    fn train_inner(
        &mut self,
        broadcast: Option<&ServerBroadcast>,
        epochs: usize,
        obj: &LocalObjective,
        round: usize,
        stream: &SeedStream,
    ) -> Result<(), FederationError> {
        let id = self.id;
        for epoch in 0..epochs {
            let mut tape = DiffTape::new();
            let f = match self.forward(&mut tape, broadcast, obj, &stream.child(epoch as u64)) {
                Ok(f) => f,
                Err(ModelError::Num(e @ NumError::NonFinite { .. })) => return Err(divergence(id, round, e)),
                Err(e) => return Err(e.into()),
            };
            let loss = tape.scalar_value(f.total);
            if !loss.is_finite() {
                return Err(divergence(id, round, format!("loss is {loss}")));
            }
            let grads = tape.grad(f.total).map_err(|e| divergence(id, round, e))?;
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(divergence(id, round, "non-finite gradient"));
            }
            let mut params = self.model.tensors();
            self.adam.step(&mut params, &grads)?;
            self.model.set_tensors(&params)?;
            self.model.clamp_coeffs(obj.w_max);
        }
        Ok(())
    }

    fn split_metrics(&self, logits: &DenseMatrix) -> [Option<f64>; 3] {
        let labels = self.graph.labels();
        Split::ALL.map(|split| {
            let mask = self.graph.masks().get(split);
            match self.task {
                TaskKind::Multiclass => accuracy(logits, labels, mask).ok(),
                TaskKind::BinaryAuc => {
                    let scores: Vec<f64> = (0..logits.rows()).map(|i| logits.get(i, 1) - logits.get(i, 0)).collect();
                    auc(&scores, labels, mask).ok()
                }
            }
        })
    }

    fn finish(
        &mut self,
        broadcast: Option<&ServerBroadcast>,
        obj: &LocalObjective,
        stream: &SeedStream,
        upload: bool,
    ) -> Result<(ClientEval, Option<ClientUpload>), FederationError> {
        let mut tape = DiffTape::new();
        let f = self.forward(&mut tape, broadcast, obj, &stream.named("eval"))?;
        let value = |v: Option<Var>| v.map_or(0.0, |v| tape.scalar_value(v));
        let losses = LossBreakdown {
            ce: tape.scalar_value(f.ce),
            vgae: tape.scalar_value(f.vgae),
            node: value(f.node),
            structure: value(f.structure),
        };
        let [train, val, test] = self.split_metrics(tape.value(f.logits));
        let eval = ClientEval {
            losses,
            train,
            val,
            test,
        };
        if !upload {
            return Ok((eval, None));
        }
        let class_gaussians = if obj.semantic {
            f.moments
                .iter()
                .map(|m| m.to_gaussian(&tape))
                .collect::<Result<Vec<_>, _>>()?
        } else {
            Vec::new()
        };
        let energy = spectral_energy(
            self.id,
            &self.model.coeffs,
            &self.powers,
            &mut stream.named("energy").rng(),
        )?;
        let mut sample_counts = vec![0; self.graph.num_classes()];
        self.train_classes.iter().for_each(|&c| sample_counts[c] += 1);
        self.uploads_built += 1;
        let up = ClientUpload {
            client: self.id,
            coeffs: self.model.coeffs.clone(),
            class_gaussians,
            energy,
            sample_counts,
        };
        Ok((eval, Some(up)))
    }

    /// Losses and metrics of the current model; builds no upload.
    pub fn evaluate(
        &mut self,
        broadcast: Option<&ServerBroadcast>,
        obj: &LocalObjective,
        stream: &SeedStream,
    ) -> Result<ClientEval, FederationError> {
        Ok(self.finish(broadcast, obj, stream, false)?.0)
    }

    /// One protocol round: local training, then evaluation and a fresh
    /// upload computed from the trained state.
    ///
    /// Without a broadcast the alignment terms are inactive.
    pub fn client_round(
        &mut self,
        broadcast: Option<&ServerBroadcast>,
        epochs: usize,
        obj: &LocalObjective,
        round: usize,
        stream: &SeedStream,
    ) -> Result<(ClientEval, ClientUpload), FederationError> {
        if let Some(b) = broadcast {
            if b.client != self.id {
                return Err(FederationError::Protocol {
                    client: self.id,
                    detail: format!("received the broadcast addressed to client {}", b.client),
                });
            }
        }
        self.train(broadcast, epochs, obj, round, stream)?;
        let (eval, up) = self.finish(broadcast, obj, stream, true)?;
        Ok((eval, up.expect("upload requested")))
    }
}
