//! Cyclic Jacobi eigensolver for small symmetric matrices.

use super::{DenseMatrix, NumError};

const MAX_DIM: usize = 64;
const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a small symmetric matrix.
///
/// Returns eigenvalues in ascending order and the matching unit eigenvectors
/// as the columns of the second matrix.
pub fn sym_eig_small(m: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix), NumError> {
    let n = m.rows();
    if m.cols() != n {
        return Err(NumError::Shape {
            op: "sym_eig_small",
            left: m.shape(),
            right: m.shape(),
        });
    }
    if n > MAX_DIM {
        return Err(NumError::Contract(format!(
            "sym_eig_small supports dimension <= {MAX_DIM}, got {n}"
        )));
    }
    let asym = m.asymmetry().unwrap_or(0.0);
    if asym > 1e-9 * m.max_abs().max(1.0) {
        return Err(NumError::Symmetry {
            max_asymmetry: asym,
        });
    }

    let mut a = m.symmetrized()?;
    let mut v = DenseMatrix::identity(n);
    let total = a.frobenius_norm().max(f64::MIN_POSITIVE);

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j).powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * total {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag = a.diagonal();
    order.sort_by(|&i, &j| diag[i].total_cmp(&diag[j]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| diag[i]).collect();
    let vectors = DenseMatrix::from_fn(n, n, |i, j| v.get(i, order[j]));
    Ok((values, vectors))
}

/// Applies the Jacobi rotation in the (p, q) plane: `a ← Jᵀ a J`, `v ← v J`.
fn rotate(a: &mut DenseMatrix, v: &mut DenseMatrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.rows();
    for k in 0..n {
        let akp = a.get(k, p);
        let akq = a.get(k, q);
        a.set(k, p, c * akp - s * akq);
        a.set(k, q, s * akp + c * akq);
    }
    for k in 0..n {
        let apk = a.get(p, k);
        let aqk = a.get(q, k);
        a.set(p, k, c * apk - s * aqk);
        a.set(q, k, s * apk + c * aqk);
    }
    for k in 0..n {
        let vkp = v.get(k, p);
        let vkq = v.get(k, q);
        v.set(k, p, c * vkp - s * vkq);
        v.set(k, q, s * vkp + c * vkq);
    }
}
