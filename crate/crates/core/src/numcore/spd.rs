//! Helpers for symmetric positive (semi)definite matrices.

use super::{sym_eig_small, DenseMatrix, NumError};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DenseMatrix,
}

impl Cholesky {
    pub fn new(m: &DenseMatrix) -> Result<Self, NumError> {
        let n = m.rows();
        if m.cols() != n {
            return Err(NumError::Shape {
                op: "cholesky",
                left: m.shape(),
                right: m.shape(),
            });
        }
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = m.get(j, j);
            for k in 0..j {
                d -= l.get(j, k).powi(2);
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(NumError::NotPositiveDefinite { pivot: j, value: d });
            }
            let djj = d.sqrt();
            l.set(j, j, djj);
            for i in (j + 1)..n {
                let mut s = m.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / djj);
            }
        }
        Ok(Self { l })
    }

    pub fn factor(&self) -> &DenseMatrix {
        &self.l
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Solves `m x = b` for every column of `b`.
    pub fn solve(&self, b: &DenseMatrix) -> Result<DenseMatrix, NumError> {
        let n = self.l.rows();
        if b.rows() != n {
            return Err(NumError::Shape {
                op: "cholesky_solve",
                left: self.l.shape(),
                right: b.shape(),
            });
        }
        let mut x = b.clone();
        for c in 0..b.cols() {
            // L y = b
            for i in 0..n {
                let mut s = x.get(i, c);
                for k in 0..i {
                    s -= self.l.get(i, k) * x.get(k, c);
                }
                x.set(i, c, s / self.l.get(i, i));
            }
            // Lᵀ x = y
            for i in (0..n).rev() {
                let mut s = x.get(i, c);
                for k in (i + 1)..n {
                    s -= self.l.get(k, i) * x.get(k, c);
                }
                x.set(i, c, s / self.l.get(i, i));
            }
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<DenseMatrix, NumError> {
        let inv = self.solve(&DenseMatrix::identity(self.l.rows()))?;
        inv.symmetrized()
    }
}

/// Symmetric square root of a PSD matrix via its eigendecomposition.
///
/// Eigenvalues in `[-tol, 0)` are treated as zero; anything more negative
/// is rejected.
pub fn sym_sqrt(m: &DenseMatrix, tol: f64) -> Result<DenseMatrix, NumError> {
    let (vals, vecs) = sym_eig_small(m)?;
    if let Some((i, &v)) = vals.iter().enumerate().find(|(_, v)| **v < -tol) {
        return Err(NumError::NotPositiveDefinite { pivot: i, value: v });
    }
    let n = m.rows();
    let roots: Vec<f64> = vals.iter().map(|v| v.max(0.0).sqrt()).collect();
    let out = DenseMatrix::from_fn(n, n, |i, j| {
        (0..n).map(|k| vecs.get(i, k) * roots[k] * vecs.get(j, k)).sum()
    });
    out.symmetrized()
}
