use crate::graphs::{synth_dataset, FederationDataset, GraphError, SynthSpec, TaskKind};
use crate::rng::SeedStream;
use serde::{Deserialize, Serialize};

/// Edge probabilities of one block model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockProbs {
    pub p_intra: f64,
    pub p_inter: f64,
}

/// A federation whose first half of clients draw homophilic graphs and
/// whose second half draw heterophilic ones.
///
/// Features have `dim ≥ classes + 2·marker_len` entries. Class `c` has mean
/// `class_scale · e_c` in the homophilic regime and `class_scale ·
/// e_{σ(c)}` in the heterophilic one, where `σ` is the cyclic shift when
/// `shift_heterophilic_classes` is set. Each regime adds a constant
/// `marker` to its own block of `marker_len` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoRegimeSpec {
    pub clients: usize,
    pub nodes: usize,
    pub classes: usize,
    pub dim: usize,
    pub homophilic: BlockProbs,
    pub heterophilic: BlockProbs,
    pub noise: f64,
    pub class_scale: f64,
    pub marker: f64,
    pub marker_len: usize,
    pub shift_heterophilic_classes: bool,
}

impl Default for TwoRegimeSpec {
    fn default() -> Self {
        TwoRegimeSpec {
            clients: 10,
            nodes: 150,
            classes: 4,
            dim: 16,
            homophilic: BlockProbs {
                p_intra: 0.1,
                p_inter: 0.01,
            },
            heterophilic: BlockProbs {
                p_intra: 0.01,
                p_inter: 0.06,
            },
            noise: 1.0,
            class_scale: 1.0,
            marker: 1.0,
            marker_len: 4,
            shift_heterophilic_classes: true,
        }
    }
}

impl TwoRegimeSpec {
    /// `true` for clients in the heterophilic half.
    pub fn is_heterophilic(&self, client: usize) -> bool {
        client >= self.clients / 2
    }

    fn regime_spec(&self, heterophilic: bool) -> Result<SynthSpec, GraphError> {
        let probs = if heterophilic {
            self.heterophilic
        } else {
            self.homophilic
        };
        let c = self.classes;
        let marker_start = self.dim - 2 * self.marker_len + if heterophilic { self.marker_len } else { 0 };
        let class_means = (0..c)
            .map(|class| {
                let mut m = vec![0.0; self.dim];
                let slot = if heterophilic && self.shift_heterophilic_classes {
                    (class + 1) % c
                } else {
                    class
                };
                m[slot] = self.class_scale;
                m[marker_start..marker_start + self.marker_len]
                    .iter_mut()
                    .for_each(|v| *v = self.marker);
                m
            })
            .collect();
        Ok(SynthSpec {
            nodes: self.nodes,
            classes: c,
            dim: self.dim,
            p_intra: probs.p_intra,
            p_inter: probs.p_inter,
            noise: self.noise,
            class_means,
        })
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.clients < 2 {
            return Err(GraphError::Config("two regimes need at least 2 clients".into()));
        }
        if self.classes < 2 || self.dim < self.classes + 2 * self.marker_len {
            return Err(GraphError::Config(format!(
                "dim = {} cannot hold {} class slots and two marker blocks of {}",
                self.dim, self.classes, self.marker_len
            )));
        }
        self.regime_spec(false)?.validate()?;
        self.regime_spec(true)?.validate()
    }
}

/// Samples every client graph independently from its regime's model.
pub fn two_regime_federation(spec: &TwoRegimeSpec, seed: u64) -> Result<FederationDataset, GraphError> {
    spec.validate()?;
    let root = SeedStream::new(seed).named("planted");
    let homo = spec.regime_spec(false)?;
    let hetero = spec.regime_spec(true)?;
    let clients = (0..spec.clients)
        .map(|m| {
            let s = if spec.is_heterophilic(m) { &hetero } else { &homo };
            synth_dataset(s, root.child(m as u64).key())
        })
        .collect::<Result<Vec<_>, _>>()?;
    FederationDataset::new(clients, TaskKind::Multiclass)
}
