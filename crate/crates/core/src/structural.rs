//! Grassmann clustering of spectral energies, cluster coefficient means,
//! coefficient losses and the filter bounds used by the diagnostics.

use crate::kmeans::{kmeans, members, KMeansError};
use crate::models::SpectralEnergy;
use crate::numcore::{DenseMatrix, NumError};
use crate::rng::SeedStream;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Points on `[0, 2]` used by [`filter_derivative_sup`].
pub const LIPSCHITZ_GRID: usize = 2001;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StructuralError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

impl From<KMeansError> for StructuralError {
    fn from(e: KMeansError) -> Self {
        StructuralError::Config(e.to_string())
    }
}

/// Chordal distance `sqrt(K+1 − ‖Q_aᵀ Q_b‖_F²)` between two orthonormal
/// frames, evaluated as `‖Q_a Q_aᵀ − Q_b Q_bᵀ‖_F / √2`.
///
/// The projector form avoids cancellation for nearby subspaces and is
/// exactly zero on identical frames and exactly symmetric.
pub fn chordal_distance(qa: &DenseMatrix, qb: &DenseMatrix) -> Result<f64, StructuralError> {
    if qa.shape() != qb.shape() {
        return Err(NumError::Shape {
            op: "chordal_distance",
            left: qa.shape(),
            right: qb.shape(),
        }
        .into());
    }
    let diff = qa.matmul_t(qa)?.sub(&qb.matmul_t(qb)?)?;
    Ok(diff.frobenius_norm() / std::f64::consts::SQRT_2)
}

/// Row-major entries of the projector `Q Qᵀ`.
pub fn projection_embedding(q: &DenseMatrix) -> Vec<f64> {
    q.matmul_t(q).expect("Q Qᵀ is always conformable").into_vec()
}

/// Client-to-cluster assignment with per-cluster mean coefficients.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuralClusterMap {
    /// `(client id, cluster id)`, sorted by client id.
    pub assignments: Vec<(usize, usize)>,
    /// Mean coefficients per cluster id.
    pub means: Vec<Vec<f64>>,
}

impl StructuralClusterMap {
    pub fn cluster_of(&self, client: usize) -> Option<usize> {
        self.assignments
            .iter()
            .find(|(c, _)| *c == client)
            .map(|(_, k)| *k)
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.means.len()];
        for &(client, k) in &self.assignments {
            out[k].push(client);
        }
        out
    }
}

/// k-means over projection embeddings, clients in ascending id order.
///
/// Returns `(client id, cluster id)` pairs.
pub fn structural_cluster(
    energies: &[&SpectralEnergy],
    k_struct: usize,
    seed: &SeedStream,
) -> Result<Vec<(usize, usize)>, StructuralError> {
    if k_struct == 0 {
        return Err(StructuralError::Config("k_struct must be at least 1".into()));
    }
    let mut sorted = energies.to_vec();
    sorted.sort_by_key(|e| e.client);
    let points: Vec<Vec<f64>> = sorted.iter().map(|e| projection_embedding(&e.q)).collect();
    let result = kmeans(&points, k_struct, &mut seed.named("kmeans").rng())?;
    Ok(sorted
        .iter()
        .zip(result.assignments)
        .map(|(e, k)| (e.client, k))
        .collect())
}

/// Arithmetic mean of member coefficient vectors.
pub fn cluster_coeff_mean(members: &[&[f64]]) -> Result<Vec<f64>, StructuralError> {
    let first = members
        .first()
        .ok_or_else(|| StructuralError::Contract("empty structural cluster".into()))?;
    if members.iter().any(|w| w.len() != first.len()) {
        return Err(StructuralError::Contract("members disagree on filter order".into()));
    }
    let n = members.len() as f64;
    Ok((0..first.len())
        .map(|k| members.iter().map(|w| w[k]).sum::<f64>() / n)
        .collect())
}

/// Clusters the energies and averages each cluster's coefficients.
///
/// `coeffs` holds `(client id, coefficients)` for every clustered client.
pub fn build_structural_map(
    energies: &[&SpectralEnergy],
    coeffs: &[(usize, &[f64])],
    k_struct: usize,
    seed: &SeedStream,
) -> Result<StructuralClusterMap, StructuralError> {
    let assignments = structural_cluster(energies, k_struct, seed)?;
    let labels: Vec<usize> = assignments.iter().map(|(_, k)| *k).collect();
    let mut means = Vec::new();
    for group in members(&labels) {
        let ws = group
            .iter()
            .map(|&i| {
                let id = assignments[i].0;
                coeffs
                    .iter()
                    .find(|(c, _)| *c == id)
                    .map(|(_, w)| *w)
                    .ok_or_else(|| StructuralError::Contract(format!("no coefficients for client {id}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        means.push(cluster_coeff_mean(&ws)?);
    }
    Ok(StructuralClusterMap { assignments, means })
}

/// `Σ_k |w^k − w̄^k|`.
pub fn l_align(w: &[f64], target: &[f64]) -> f64 {
    w.iter().zip(target).map(|(a, b)| (a - b).abs()).sum()
}

/// `Σ_k (λ1 |w^k| + λ2/2 (w^k)²)`.
pub fn l_reg(w: &[f64], lambda1: f64, lambda2: f64) -> Result<f64, StructuralError> {
    if !(lambda1 >= 0.0 && lambda2 >= 0.0) {
        return Err(StructuralError::Config(format!(
            "regularization weights must be nonnegative, got {lambda1}, {lambda2}"
        )));
    }
    Ok(w.iter()
        .map(|v| lambda1 * v.abs() + 0.5 * lambda2 * v * v)
        .sum())
}

/// `Σ_k k |w^k| 2^{k−1}`, a Lipschitz constant of `h(x) = Σ w^k x^k` on `[0, 2]`.
pub fn filter_lipschitz_bound(w: &[f64]) -> f64 {
    w.iter()
        .enumerate()
        .skip(1)
        .map(|(k, v)| k as f64 * v.abs() * 2f64.powi(k as i32 - 1))
        .sum()
}

/// `max |h'(x)|` over [`LIPSCHITZ_GRID`] evenly spaced points of `[0, 2]`.
pub fn filter_derivative_sup(w: &[f64]) -> f64 {
    (0..LIPSCHITZ_GRID)
        .map(|i| {
            let x = 2.0 * i as f64 / (LIPSCHITZ_GRID - 1) as f64;
            w.iter()
                .enumerate()
                .skip(1)
                .map(|(k, v)| k as f64 * v * x.powi(k as i32 - 1))
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max)
}

/// `(Σ |Δw^k| ‖H^k‖_F, ‖Σ Δw^k H^k‖_F)` for `Δw = w − w̄`.
pub fn coeff_perturb_bound(
    w: &[f64],
    w_bar: &[f64],
    powers: &[DenseMatrix],
) -> Result<(f64, f64), StructuralError> {
    if w.len() != w_bar.len() || w.len() != powers.len() {
        return Err(StructuralError::Contract("coefficient and power counts differ".into()));
    }
    let (r, c) = powers[0].shape();
    let mut diff = DenseMatrix::zeros(r, c);
    let mut bound = 0.0;
    for ((a, b), h) in w.iter().zip(w_bar).zip(powers) {
        let dw = a - b;
        bound += dw.abs() * h.frobenius_norm();
        diff.axpy(dw, h);
    }
    Ok((bound, diff.frobenius_norm()))
}
