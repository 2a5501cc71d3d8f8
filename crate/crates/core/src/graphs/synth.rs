use super::{stratified_split, GraphError, LocalGraph, SplitFractions};
use crate::numcore::DenseMatrix;
use crate::rng::{standard_normals, SeedStream};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Parameters of a stochastic block model with Gaussian class features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub nodes: usize,
    pub classes: usize,
    pub dim: usize,
    /// Edge probability between two nodes of the same class.
    pub p_intra: f64,
    /// Edge probability between two nodes of different classes.
    pub p_inter: f64,
    /// Standard deviation of the isotropic feature noise.
    pub noise: f64,
    /// One mean vector of length `dim` per class.
    pub class_means: Vec<Vec<f64>>,
}

impl SynthSpec {
    /// A small homophilic model with unit-separated one-hot class means.
    pub fn homophilic_default(nodes: usize, classes: usize, dim: usize) -> Self {
        Self {
            nodes,
            classes,
            dim,
            p_intra: 0.3,
            p_inter: 0.05,
            noise: 1.0,
            class_means: planted_class_means(classes, dim, 0, dim, 1.0)
                .expect("block fits the dimension"),
        }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(GraphError::Config(format!("{name} = {p} is not a probability")))
            }
        };
        prob("p_intra", self.p_intra)?;
        prob("p_inter", self.p_inter)?;
        if self.nodes == 0 || self.classes == 0 || self.dim == 0 {
            return Err(GraphError::Config(
                "nodes, classes and dim must be positive".into(),
            ));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(GraphError::Config(format!("noise = {} is invalid", self.noise)));
        }
        if self.class_means.len() != self.classes
            || self.class_means.iter().any(|m| m.len() != self.dim)
        {
            return Err(GraphError::Config(format!(
                "class_means must be {} vectors of length {}",
                self.classes, self.dim
            )));
        }
        if self.class_means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GraphError::Config("class_means must be finite".into()));
        }
        Ok(())
    }
}

/// Class means `scale · e_{start + (c mod len)}`, confined to one block of
/// feature dimensions.
pub fn planted_class_means(
    classes: usize,
    dim: usize,
    block_start: usize,
    block_len: usize,
    scale: f64,
) -> Result<Vec<Vec<f64>>, GraphError> {
    if block_len == 0 || block_start + block_len > dim {
        return Err(GraphError::Config(format!(
            "feature block [{block_start}, {}) does not fit in dimension {dim}",
            block_start + block_len
        )));
    }
    Ok((0..classes)
        .map(|c| {
            let mut m = vec![0.0; dim];
            m[block_start + c % block_len] = scale;
            m
        })
        .collect())
}

/// Samples a graph from `spec`, with a stratified 20/40/40 split.
pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> Result<LocalGraph, GraphError> {
    spec.validate()?;
    let root = SeedStream::new(seed);
    let n = spec.nodes;

    let mut labels: Vec<usize> = (0..n).map(|i| i % spec.classes).collect();
    labels.shuffle(&mut root.named("labels").rng());

    let mut rng = root.named("edges").rng();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] {
                spec.p_intra
            } else {
                spec.p_inter
            };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let noise = standard_normals(&mut root.named("features").rng(), n * spec.dim);
    let features = DenseMatrix::from_fn(n, spec.dim, |i, j| {
        spec.class_means[labels[i]][j] + spec.noise * noise[i * spec.dim + j]
    });

    let masks = stratified_split(
        &labels,
        spec.classes,
        SplitFractions::default(),
        &mut root.named("split").rng(),
    );
    LocalGraph::new(n, edges, features, labels, spec.classes, masks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(p_intra: f64, p_inter: f64) -> SynthSpec {
        SynthSpec {
            p_intra,
            p_inter,
            ..SynthSpec::homophilic_default(200, 4, 4)
        }
    }

    #[test]
    fn degenerate_block_models() {
        let g = synth_dataset(&spec(0.1, 0.0), 3).unwrap();
        assert_eq!(g.homophily_ratio(), Some(1.0));
        let g = synth_dataset(&spec(0.0, 0.05), 3).unwrap();
        assert_eq!(g.homophily_ratio(), Some(0.0));
    }

    #[test]
    fn homophily_matches_expectation() {
        // Expected ratio 0.1 / (0.1 + 3 · 0.01) ≈ 0.77.
        for seed in 0..20 {
            let h = synth_dataset(&spec(0.1, 0.01), seed)
                .unwrap()
                .homophily_ratio()
                .unwrap();
            assert!((0.7..=0.95).contains(&h), "seed {seed}: {h}");
        }
    }

    #[test]
    fn invalid_probability_is_config_error() {
        assert!(matches!(
            synth_dataset(&spec(1.5, 0.0), 0),
            Err(GraphError::Config(_))
        ));
        assert!(planted_class_means(4, 8, 6, 4, 1.0).is_err());
    }

    #[test]
    fn deterministic() {
        let a = synth_dataset(&spec(0.1, 0.01), 9).unwrap();
        let b = synth_dataset(&spec(0.1, 0.01), 9).unwrap();
        assert_eq!(a, b);
    }
}
