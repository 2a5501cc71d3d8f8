use super::ModelError;
use crate::numcore::{sym_eig_small, sym_sqrt, DenseMatrix, NumError};
use serde::{Deserialize, Serialize};

/// Lower bound on every variance (diagonal covariance entry).
pub const VARIANCE_FLOOR: f64 = 1e-6;

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-9;

/// A Gaussian summarizing one class, either on one client (diagonal
/// covariance) or over a cluster of clients (full covariance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassGaussian {
    pub class: usize,
    pub mean: Vec<f64>,
    pub cov: DenseMatrix,
    /// Number of nodes (or member nodes, at cluster level) behind the estimate.
    pub count: usize,
}

impl ClassGaussian {
    /// Validates symmetry, the variance floor and positive semidefiniteness.
    pub fn new(class: usize, mean: Vec<f64>, cov: DenseMatrix, count: usize) -> Result<Self, ModelError> {
        let d = mean.len();
        if cov.shape() != (d, d) {
            return Err(NumError::Shape {
                op: "class_gaussian",
                left: (d, d),
                right: cov.shape(),
            }
            .into());
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(NumError::NonFinite { op: "class_gaussian" }.into());
        }
        let asym = cov.asymmetry().unwrap_or(0.0);
        if asym > SYMMETRY_TOL {
            return Err(NumError::Symmetry { max_asymmetry: asym }.into());
        }
        if let Some((i, v)) = cov
            .diagonal()
            .into_iter()
            .enumerate()
            .find(|(_, v)| *v < VARIANCE_FLOOR)
        {
            return Err(ModelError::Contract(format!(
                "variance {v:e} at index {i} is below the floor {VARIANCE_FLOOR:e}"
            )));
        }
        if !is_diagonal(&cov) {
            let (vals, _) = sym_eig_small(&cov)?;
            if vals[0] < -PSD_TOL {
                return Err(NumError::NotPositiveDefinite {
                    pivot: 0,
                    value: vals[0],
                }
                .into());
            }
        }
        Ok(Self {
            class,
            mean,
            cov,
            count,
        })
    }

    /// Diagonal Gaussian; variances below the floor are raised to it.
    pub fn diagonal(class: usize, mean: Vec<f64>, variances: &[f64], count: usize) -> Result<Self, ModelError> {
        let floored: Vec<f64> = variances.iter().map(|v| v.max(VARIANCE_FLOOR)).collect();
        Self::new(class, mean, DenseMatrix::diag(&floored), count)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_diagonal(&self) -> bool {
        is_diagonal(&self.cov)
    }
}

fn is_diagonal(m: &DenseMatrix) -> bool {
    (0..m.rows()).all(|i| (0..m.cols()).all(|j| i == j || m.get(i, j) == 0.0))
}

/// `μ + Σ^{1/2} ε`, with an elementwise root for diagonal `Σ`.
pub fn reparameterize(g: &ClassGaussian, eps: &[f64]) -> Result<Vec<f64>, ModelError> {
    let d = g.dim();
    if eps.len() != d {
        return Err(NumError::Shape {
            op: "reparameterize",
            left: (d, 1),
            right: (eps.len(), 1),
        }
        .into());
    }
    if g.is_diagonal() {
        return Ok((0..d)
            .map(|i| g.mean[i] + g.cov.get(i, i).sqrt() * eps[i])
            .collect());
    }
    let root = sym_sqrt(&g.cov, PSD_TOL)?;
    Ok((0..d)
        .map(|i| g.mean[i] + (0..d).map(|j| root.get(i, j) * eps[j]).sum::<f64>())
        .collect())
}
