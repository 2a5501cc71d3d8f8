//! Server-side clustering of class distributions, cluster-level moment
//! matching, and the closed-form Gaussian KL divergence.

use crate::kmeans::{kmeans, members, KMeansError};
use crate::models::{reparameterize, ClassGaussian, ModelError, VARIANCE_FLOOR};
use crate::numcore::{sym_eig_small, Cholesky, DenseMatrix, NumError};
use crate::rng::{standard_normals, SeedStream};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemanticError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Num(#[from] NumError),
}

impl From<KMeansError> for SemanticError {
    fn from(e: KMeansError) -> Self {
        SemanticError::Config(e.to_string())
    }
}

/// What each client-class contributes as its clustering point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterFeature {
    /// One reparameterized draw from the class Gaussian.
    #[default]
    Sample,
    /// The class mean.
    Mean,
}

/// Clusters of clients for one class, with their representatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassClusters {
    pub class: usize,
    /// `(client id, cluster id)`, sorted by client id.
    pub assignments: Vec<(usize, usize)>,
    /// Cluster-level Gaussian per cluster id.
    pub representatives: Vec<ClassGaussian>,
}

impl ClassClusters {
    pub fn cluster_of(&self, client: usize) -> Option<usize> {
        self.assignments
            .iter()
            .find(|(c, _)| *c == client)
            .map(|(_, k)| *k)
    }

    /// Client ids per cluster.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.representatives.len()];
        for &(client, k) in &self.assignments {
            out[k].push(client);
        }
        out
    }
}

/// Per-class semantic clustering of the federation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemanticClusterMap {
    pub classes: Vec<ClassClusters>,
}

impl SemanticClusterMap {
    pub fn class(&self, class: usize) -> Option<&ClassClusters> {
        self.classes.iter().find(|c| c.class == class)
    }

    /// Representative for `client`'s cluster of `class`.
    pub fn representative(&self, client: usize, class: usize) -> Option<&ClassGaussian> {
        let cc = self.class(class)?;
        cc.cluster_of(client).map(|k| &cc.representatives[k])
    }
}

/// `(client id, its class Gaussians)` as uploaded.
pub type ClientClasses<'a> = (usize, &'a [ClassGaussian]);

/// Per-class k-means over one point per client holding the class.
///
/// Clients are processed in ascending id order; each client-class draws its
/// noise from its own substream, so the result does not depend on upload
/// order. Returns `(class, [(client, cluster)])` for every class present.
pub fn semantic_cluster(
    uploads: &[ClientClasses<'_>],
    num_classes: usize,
    k_node: usize,
    feature: ClusterFeature,
    seed: &SeedStream,
) -> Result<Vec<(usize, Vec<(usize, usize)>)>, SemanticError> {
    if k_node == 0 {
        return Err(SemanticError::Config("k_node must be at least 1".into()));
    }
    let mut sorted: Vec<ClientClasses<'_>> = uploads.to_vec();
    sorted.sort_by_key(|(id, _)| *id);
    let mut out = Vec::new();
    for c in 0..num_classes {
        let holders: Vec<(usize, &ClassGaussian)> = sorted
            .iter()
            .filter_map(|(id, gs)| gs.iter().find(|g| g.class == c).map(|g| (*id, g)))
            .collect();
        if holders.is_empty() {
            continue;
        }
        let draws = seed.named("draw").child(c as u64);
        let points = holders
            .iter()
            .map(|(id, g)| match feature {
                ClusterFeature::Mean => Ok(g.mean.clone()),
                ClusterFeature::Sample => {
                    let eps = standard_normals(&mut draws.child(*id as u64).rng(), g.dim());
                    reparameterize(g, &eps)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let result = kmeans(&points, k_node, &mut seed.named("kmeans").child(c as u64).rng())?;
        out.push((
            c,
            holders
                .iter()
                .zip(&result.assignments)
                .map(|((id, _), &k)| (*id, k))
                .collect(),
        ));
    }
    Ok(out)
}

/// Mixture weights `n_m / Σ n` of a cluster's members.
pub fn gmm_weights(members: &[&ClassGaussian]) -> Result<Vec<f64>, SemanticError> {
    if members.is_empty() {
        return Err(SemanticError::Contract("empty mixture".into()));
    }
    let total: usize = members.iter().map(|g| g.count).sum();
    if total == 0 {
        return Err(SemanticError::Contract("all support counts are zero".into()));
    }
    Ok(members
        .iter()
        .map(|g| g.count as f64 / total as f64)
        .collect())
}

/// Single Gaussian with the mixture's first two moments.
///
/// The covariance is symmetrized and, if needed, its eigenvalues are raised
/// to the variance floor.
pub fn cluster_moments(members: &[&ClassGaussian], weights: &[f64]) -> Result<ClassGaussian, SemanticError> {
    let first = members
        .first()
        .ok_or_else(|| SemanticError::Contract("empty mixture".into()))?;
    if weights.len() != members.len() {
        return Err(SemanticError::Contract("one weight per member required".into()));
    }
    let d = first.dim();
    let mut mean = vec![0.0; d];
    for (g, w) in members.iter().zip(weights) {
        if g.dim() != d || g.class != first.class {
            return Err(SemanticError::Contract("mixture members disagree on class or dimension".into()));
        }
        mean.iter_mut().zip(&g.mean).for_each(|(m, x)| *m += w * x);
    }
    // Σ_i w_i (Σ_i + (μ_i − μ)(μ_i − μ)ᵀ): the centered form of E[zzᵀ] − μμᵀ.
    let mut centered = DenseMatrix::zeros(d, d);
    for (g, w) in members.iter().zip(weights) {
        let dev: Vec<f64> = g.mean.iter().zip(&mean).map(|(a, b)| a - b).collect();
        let term = DenseMatrix::from_fn(d, d, |i, j| g.cov.get(i, j) + dev[i] * dev[j]);
        centered.axpy(*w, &term);
    }
    let cov = eigen_floor(&centered.symmetrized()?, VARIANCE_FLOOR)?;
    let count = members.iter().map(|g| g.count).sum();
    Ok(ClassGaussian::new(first.class, mean, cov, count)?)
}

/// Raises eigenvalues below `floor` to `floor`; leaves the matrix untouched
/// when none are.
pub fn eigen_floor(m: &DenseMatrix, floor: f64) -> Result<DenseMatrix, NumError> {
    let (vals, vecs) = sym_eig_small(m)?;
    if vals.first().is_none_or(|&v| v >= floor) {
        return Ok(m.clone());
    }
    let n = m.rows();
    let clamped: Vec<f64> = vals.iter().map(|v| v.max(floor)).collect();
    DenseMatrix::from_fn(n, n, |i, j| {
        (0..n).map(|k| vecs.get(i, k) * clamped[k] * vecs.get(j, k)).sum()
    })
    .symmetrized()
}

/// Closed-form `KL(p ‖ q)` between multivariate Gaussians.
pub fn gaussian_kl(p: &ClassGaussian, q: &ClassGaussian) -> Result<f64, SemanticError> {
    let d = p.dim();
    if q.dim() != d {
        return Err(NumError::Shape {
            op: "gaussian_kl",
            left: (d, d),
            right: (q.dim(), q.dim()),
        }
        .into());
    }
    let cq = Cholesky::new(&q.cov)?;
    let cp = Cholesky::new(&p.cov)?;
    let trace = cq.solve(&p.cov)?.trace();
    let diff = DenseMatrix::column_vector(
        &q.mean.iter().zip(&p.mean).map(|(a, b)| a - b).collect::<Vec<_>>(),
    );
    let quad = diff.t_matmul(&cq.solve(&diff)?)?.get(0, 0);
    Ok(0.5 * (trace + quad - d as f64 + cq.log_det() - cp.log_det()))
}

/// Builds the full map: clustering, mixture weights and representatives.
pub fn build_semantic_map(
    uploads: &[ClientClasses<'_>],
    num_classes: usize,
    k_node: usize,
    feature: ClusterFeature,
    seed: &SeedStream,
) -> Result<SemanticClusterMap, SemanticError> {
    let clustered = semantic_cluster(uploads, num_classes, k_node, feature, seed)?;
    let mut classes = Vec::with_capacity(clustered.len());
    for (c, assignments) in clustered {
        let labels: Vec<usize> = assignments.iter().map(|(_, k)| *k).collect();
        let mut representatives = Vec::new();
        for group in members(&labels) {
            let gs: Vec<&ClassGaussian> = group
                .iter()
                .map(|&i| {
                    let id = assignments[i].0;
                    let (_, list) = uploads.iter().find(|(u, _)| *u == id).expect("clustered id");
                    list.iter().find(|g| g.class == c).expect("clustered class")
                })
                .collect();
            let w = gmm_weights(&gs)?;
            representatives.push(cluster_moments(&gs, &w)?);
        }
        classes.push(ClassClusters {
            class: c,
            assignments,
            representatives,
        });
    }
    Ok(SemanticClusterMap { classes })
}

/// `Σ KL(local ‖ representative)` over aligned pairs.
pub fn l_node(pairs: &[(&ClassGaussian, &ClassGaussian)]) -> Result<f64, SemanticError> {
    pairs.iter().map(|(p, q)| gaussian_kl(p, q)).sum()
}
