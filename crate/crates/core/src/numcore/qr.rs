//! Thin QR factorization by Householder reflections.

use super::{DenseMatrix, NumError};

/// Relative pivot size below which a column is treated as dependent.
const RANK_TOL: f64 = 1e-13;

/// Thin QR of a tall matrix: `s = q · r` with `q` (m×n) orthonormal columns
/// and `r` (n×n) upper triangular with a nonnegative diagonal.
///
/// The sign convention makes the factorization unique for full-rank input.
pub fn qr_thin(s: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix), NumError> {
    let (m, n) = s.shape();
    if m < n {
        return Err(NumError::Shape {
            op: "qr_thin",
            left: (m, n),
            right: (n, n),
        });
    }
    let scale = s.frobenius_norm();
    if n > 0 && scale == 0.0 {
        return Err(NumError::Rank { column: 0 });
    }

    // Work on a column-major copy; reflectors are stored per column.
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| s.column(j)).collect();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);

    for k in 0..n {
        let x = &a[k][k..];
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= RANK_TOL * scale {
            return Err(NumError::Rank { column: k });
        }
        // v = x + sign(x0)·‖x‖·e1 avoids cancellation.
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vnorm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        if vnorm > 0.0 {
            v.iter_mut().for_each(|t| *t /= vnorm);
        }
        for col in a.iter_mut().skip(k) {
            apply_reflector(&v, &mut col[k..]);
        }
        reflectors.push(v);
    }

    // R from the upper triangle; Q by applying the reflectors to I[:, :n].
    let mut r = DenseMatrix::from_fn(n, n, |i, j| if i <= j { a[j][i] } else { 0.0 });
    let mut q_cols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            e
        })
        .collect();
    for (k, v) in reflectors.iter().enumerate().rev() {
        for col in q_cols.iter_mut() {
            apply_reflector(v, &mut col[k..]);
        }
    }

    // Flip signs so diag(R) ≥ 0.
    for i in 0..n {
        if r.get(i, i) < 0.0 {
            for j in i..n {
                let v = r.get(i, j);
                r.set(i, j, -v);
            }
            q_cols[i].iter_mut().for_each(|t| *t = -*t);
        }
    }
    let q = DenseMatrix::from_fn(m, n, |i, j| q_cols[j][i]);
    Ok((q, r))
}

#[inline]
fn apply_reflector(v: &[f64], x: &mut [f64]) {
    let d: f64 = v.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= 2.0 * d * vi;
    }
}
