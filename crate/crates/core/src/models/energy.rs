use super::ModelError;
use crate::numcore::{qr_thin, DenseMatrix, NumError};
use crate::rng::standard_normals;
use serde::{Deserialize, Serialize};

/// Scale of the Gaussian jitter added to degenerate energy columns.
const JITTER: f64 = 1e-12;

/// A client's spectral fingerprint: the `d × (K+1)` matrix of mean band
/// responses and an orthonormal basis of its column space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralEnergy {
    pub client: usize,
    pub s: DenseMatrix,
    pub q: DenseMatrix,
    /// Number of columns that received jitter before factorization.
    pub jittered_columns: usize,
}

/// Column `k` of `S` is `w^k` times the node-mean of `H^k`.
///
/// Columns that are exactly zero are replaced by `1e-12`-scaled seeded
/// Gaussian noise before QR; if the matrix is still rank deficient, every
/// column receives noise scaled by `max(1, ‖S‖_F)`.
pub fn spectral_energy(
    client: usize,
    coeffs: &[f64],
    powers: &[DenseMatrix],
    rng: &mut impl rand::Rng,
) -> Result<SpectralEnergy, ModelError> {
    let k1 = coeffs.len();
    if powers.len() != k1 {
        return Err(NumError::Shape {
            op: "spectral_energy",
            left: (k1, 1),
            right: (powers.len(), 1),
        }
        .into());
    }
    let d = powers[0].cols();
    if d < k1 {
        return Err(ModelError::Config(format!(
            "feature dimension {d} is smaller than the number of filter bands {k1}"
        )));
    }
    let means: Vec<DenseMatrix> = powers.iter().map(DenseMatrix::column_means).collect();
    let s = DenseMatrix::from_fn(d, k1, |i, k| coeffs[k] * means[k].get(0, i));

    let mut jittered = s.clone();
    let mut count = 0;
    for k in 0..k1 {
        if (0..d).all(|i| s.get(i, k) == 0.0) {
            let noise = standard_normals(rng, d);
            for (i, v) in noise.iter().enumerate() {
                jittered.set(i, k, JITTER * v);
            }
            count += 1;
        }
    }
    let q = match qr_thin(&jittered) {
        Ok((q, _)) => q,
        Err(NumError::Rank { .. }) => {
            let scale = JITTER * s.frobenius_norm().max(1.0);
            let noise = standard_normals(rng, d * k1);
            for i in 0..d {
                for k in 0..k1 {
                    let v = jittered.get(i, k) + scale * noise[i * k1 + k];
                    jittered.set(i, k, v);
                }
            }
            count = k1;
            qr_thin(&jittered)?.0
        }
        Err(e) => return Err(e.into()),
    };
    Ok(SpectralEnergy {
        client,
        s,
        q,
        jittered_columns: count,
    })
}
