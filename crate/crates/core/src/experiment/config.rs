use super::{two_regime_federation, ExperimentError, TwoRegimeSpec};
use crate::federation::{FedConfig, Method};
use crate::graphs::{
    load_dataset, load_graph, partition_nonoverlap, partition_overlap, planted_class_means, synth_dataset,
    FederationDataset, LocalGraph, SynthSpec, TaskKind,
};
use crate::rng::SeedStream;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// A single stochastic block model graph with one-hot class means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmSpec {
    pub nodes: usize,
    pub classes: usize,
    pub dim: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    #[serde(default = "one")]
    pub noise: f64,
    #[serde(default = "one")]
    pub class_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl SbmSpec {
    pub fn synth_spec(&self) -> Result<SynthSpec, ExperimentError> {
        let class_means = planted_class_means(self.classes, self.dim, 0, self.dim, self.class_scale)?;
        let spec = SynthSpec {
            nodes: self.nodes,
            classes: self.classes,
            dim: self.dim,
            p_intra: self.p_intra,
            p_inter: self.p_inter,
            noise: self.noise,
            class_means,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionScheme {
    Nonoverlap,
    Overlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub clients: usize,
}

/// Where the federation comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Clients drawn directly from two planted regimes.
    TwoRegime {
        #[serde(default)]
        spec: TwoRegimeSpec,
    },
    /// One synthetic graph, partitioned into clients.
    Sbm {
        graph: SbmSpec,
        partition: PartitionSpec,
        #[serde(default = "multiclass")]
        task: TaskKind,
    },
    /// One graph file, partitioned into clients.
    GraphFile {
        path: PathBuf,
        partition: PartitionSpec,
        #[serde(default = "multiclass")]
        task: TaskKind,
    },
    /// An already partitioned federation.
    DatasetFile { path: PathBuf },
}

fn multiclass() -> TaskKind {
    TaskKind::Multiclass
}

/// Constants for the contraction schedule reported by `diagnose`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheorySettings {
    /// Smoothness constant of the global objective.
    pub smoothness: f64,
    /// Strong convexity constant; must not exceed `smoothness`.
    pub strong_convexity: f64,
    /// Initial distance to the optimum.
    pub initial_distance: f64,
    /// Target tolerance above the error floor.
    pub tolerance: f64,
}

impl Default for TheorySettings {
    fn default() -> Self {
        TheorySettings {
            smoothness: 1.0,
            strong_convexity: 0.5,
            initial_distance: 1.0,
            tolerance: 1e-3,
        }
    }
}

/// A complete experiment, read from TOML. Unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory; relative paths resolve against the working directory.
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub train: FedConfig,
    #[serde(default)]
    pub theory: TheorySettings,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

/// Upper limits that keep a desk-scale run desk-scale.
const MAX_ROUNDS: usize = 10_000;
const MAX_EPOCHS: usize = 1_000;
const MAX_ORDER: usize = 32;
const MAX_WIDTH: usize = 4_096;

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            ExperimentError::Config(m) => ExperimentError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let t = &self.train;
        t.validate()?;
        let range = |name: &str, v: usize, lo: usize, hi: usize| {
            if (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(ExperimentError::Config(format!("train.{name} = {v} is outside [{lo}, {hi}]")))
            }
        };
        range("rounds", t.rounds, 1, MAX_ROUNDS)?;
        range("epochs", t.epochs, 0, MAX_EPOCHS)?;
        range("order", t.order, 0, MAX_ORDER)?;
        range("hidden", t.hidden, 1, MAX_WIDTH)?;
        range("latent", t.latent, 1, MAX_WIDTH)?;
        if t.adam.lr > 1.0 {
            return Err(ExperimentError::Config(format!("train.adam.lr = {} exceeds 1", t.adam.lr)));
        }
        let th = &self.theory;
        if !(th.smoothness.is_finite()
            && th.strong_convexity > 0.0
            && th.strong_convexity <= th.smoothness
            && th.initial_distance >= 0.0
            && th.tolerance > 0.0)
        {
            return Err(ExperimentError::Config(
                "theory constants need 0 < strong_convexity <= smoothness, initial_distance >= 0 and tolerance > 0".into(),
            ));
        }
        let dim = match &self.dataset {
            DatasetSpec::TwoRegime { spec } => {
                spec.validate()?;
                Some(spec.dim)
            }
            DatasetSpec::Sbm { graph, partition, .. } => {
                graph.synth_spec()?;
                check_partition(partition)?;
                Some(graph.dim)
            }
            DatasetSpec::GraphFile { partition, .. } => {
                check_partition(partition)?;
                None
            }
            DatasetSpec::DatasetFile { .. } => None,
        };
        match dim {
            Some(d) if t.method == Method::FedSsa && d < t.order + 1 => Err(ExperimentError::Config(format!(
                "feature dimension {d} is smaller than the {} filter bands of order {}",
                t.order + 1,
                t.order
            ))),
            _ => Ok(()),
        }
    }

    /// The single global graph behind a partitioned dataset.
    pub fn global_graph(&self) -> Result<Option<LocalGraph>, ExperimentError> {
        match &self.dataset {
            DatasetSpec::Sbm { graph, .. } => Ok(Some(synth_dataset(
                &graph.synth_spec()?,
                SeedStream::new(self.seed).named("synth").key(),
            )?)),
            DatasetSpec::GraphFile { path, .. } => Ok(Some(load_graph(path)?)),
            _ => Ok(None),
        }
    }

    /// Builds or loads the federation.
    pub fn dataset(&self) -> Result<FederationDataset, ExperimentError> {
        let partitioned = |g: &LocalGraph, p: &PartitionSpec, task: TaskKind| -> Result<_, ExperimentError> {
            let seed = SeedStream::new(self.seed).named("partition").key();
            let ds = match p.scheme {
                PartitionScheme::Nonoverlap => partition_nonoverlap(g, p.clients, seed)?,
                PartitionScheme::Overlap => partition_overlap(g, p.clients, seed)?,
            };
            Ok(ds.with_task(task)?)
        };
        match &self.dataset {
            DatasetSpec::TwoRegime { spec } => Ok(two_regime_federation(spec, self.seed)?),
            DatasetSpec::Sbm { partition, task, .. } | DatasetSpec::GraphFile { partition, task, .. } => {
                let g = self.global_graph()?.expect("partitioned kinds have a global graph");
                partitioned(&g, partition, *task)
            }
            DatasetSpec::DatasetFile { path } => Ok(load_dataset(path)?),
        }
    }
}

fn check_partition(p: &PartitionSpec) -> Result<(), ExperimentError> {
    let ok = match p.scheme {
        PartitionScheme::Nonoverlap => p.clients >= 2,
        PartitionScheme::Overlap => p.clients >= crate::graphs::OVERLAP_SAMPLES,
    };
    if ok {
        Ok(())
    } else {
        Err(ExperimentError::Config(format!(
            "partition.clients = {} is too small for the {:?} scheme",
            p.clients, p.scheme
        )))
    }
}
