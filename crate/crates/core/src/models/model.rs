use super::ModelError;
use crate::numcore::{DenseMatrix, DiffTape, Unary, Var};
use crate::rng::standard_normals;
use serde::{Deserialize, Serialize};

/// Encoder log-variances are clamped to `[-LOGVAR_BOUND, LOGVAR_BOUND]`.
pub const LOGVAR_BOUND: f64 = 10.0;

/// Shapes shared by every client of a federation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub features: usize,
    pub classes: usize,
    /// Filter order `K`; there are `K + 1` coefficients.
    pub order: usize,
    pub hidden: usize,
    pub latent: usize,
}

/// Classifier MLP `d → h → C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Head {
    pub w1: DenseMatrix,
    pub b1: DenseMatrix,
    pub w2: DenseMatrix,
    pub b2: DenseMatrix,
}

/// Encoder `[P | onehot(Y)] → h → (μ, logvar)`.
///
/// The `P` block of the first layer is the head's `w1`; only the label block
/// `wy` and the bias are encoder-specific.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Encoder {
    pub wy: DenseMatrix,
    pub b: DenseMatrix,
    pub w_mu: DenseMatrix,
    pub b_mu: DenseMatrix,
    pub w_logvar: DenseMatrix,
    pub b_logvar: DenseMatrix,
}

/// All learnable parameters of one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientModel {
    pub coeffs: Vec<f64>,
    pub head: Head,
    pub encoder: Encoder,
}

/// Tape handles for every parameter of a [`ClientModel`].
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub coeffs: Vec<Var>,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub wy: Var,
    pub b: Var,
    pub w_mu: Var,
    pub b_mu: Var,
    pub w_logvar: Var,
    pub b_logvar: Var,
}

fn glorot(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> DenseMatrix {
    let scale = (2.0 / (rows + cols) as f64).sqrt();
    DenseMatrix::from_vec(rows, cols, standard_normals(rng, rows * cols))
        .expect("normal draws are finite")
        .scale(scale)
}

impl ClientModel {
    /// Filter `w_k = (-1/2)^k`, Glorot-normal weights, zero biases.
    ///
    /// The decaying filter gives every power a nonzero share so spectral
    /// energies differ between graphs from the first upload on.
    pub fn init(dims: ModelDims, rng: &mut impl rand::Rng) -> Self {
        let ModelDims {
            features: d,
            classes: c,
            order: k,
            hidden: h,
            latent: z,
        } = dims;
        let coeffs: Vec<f64> = (0..=k).map(|i| (-0.5f64).powi(i as i32)).collect();

        let head = Head {
            w1: glorot(d, h, rng),
            b1: DenseMatrix::zeros(1, h),
            w2: glorot(h, c, rng),
            b2: DenseMatrix::zeros(1, c),
        };
        let encoder = Encoder {
            wy: glorot(c, h, rng),
            b: DenseMatrix::zeros(1, h),
            w_mu: glorot(h, z, rng),
            b_mu: DenseMatrix::zeros(1, z),
            w_logvar: glorot(h, z, rng),
            b_logvar: DenseMatrix::zeros(1, z),
        };
        Self {
            coeffs,
            head,
            encoder,
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            features: self.head.w1.rows(),
            classes: self.head.w2.cols(),
            order: self.coeffs.len() - 1,
            hidden: self.head.w1.cols(),
            latent: self.encoder.w_mu.cols(),
        }
    }

    /// Parameters as matrices, coefficients first (each `1×1`).
    pub fn tensors(&self) -> Vec<DenseMatrix> {
        let mut out: Vec<DenseMatrix> = self.coeffs.iter().map(|&w| DenseMatrix::scalar(w)).collect();
        let h = &self.head;
        let e = &self.encoder;
        out.extend(
            [
                &h.w1, &h.b1, &h.w2, &h.b2, &e.wy, &e.b, &e.w_mu, &e.b_mu, &e.w_logvar,
                &e.b_logvar,
            ]
            .into_iter()
            .cloned(),
        );
        out
    }

    /// Inverse of [`ClientModel::tensors`]; shapes must match.
    pub fn set_tensors(&mut self, t: &[DenseMatrix]) -> Result<(), ModelError> {
        let k1 = self.coeffs.len();
        let current = self.tensors();
        if t.len() != current.len() || t.iter().zip(&current).any(|(a, b)| a.shape() != b.shape()) {
            return Err(ModelError::Contract("parameter list does not match model shape".into()));
        }
        for (w, m) in self.coeffs.iter_mut().zip(t) {
            *w = m.get(0, 0);
        }
        let mut rest = t[k1..].iter().cloned();
        let mut next = || rest.next().expect("length checked");
        self.head = Head {
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
        };
        self.encoder = Encoder {
            wy: next(),
            b: next(),
            w_mu: next(),
            b_mu: next(),
            w_logvar: next(),
            b_logvar: next(),
        };
        Ok(())
    }

    /// Clamps every coefficient into `[-w_max, w_max]`.
    pub fn clamp_coeffs(&mut self, w_max: f64) {
        self.coeffs.iter_mut().for_each(|w| *w = w.clamp(-w_max, w_max));
    }

    /// Registers all parameters as tape leaves, in [`ClientModel::tensors`] order.
    pub fn register(&self, tape: &mut DiffTape) -> ModelVars {
        let coeffs = self
            .coeffs
            .iter()
            .map(|&w| tape.param(DenseMatrix::scalar(w)))
            .collect();
        let h = &self.head;
        let e = &self.encoder;
        ModelVars {
            coeffs,
            w1: tape.param(h.w1.clone()),
            b1: tape.param(h.b1.clone()),
            w2: tape.param(h.w2.clone()),
            b2: tape.param(h.b2.clone()),
            wy: tape.param(e.wy.clone()),
            b: tape.param(e.b.clone()),
            w_mu: tape.param(e.w_mu.clone()),
            b_mu: tape.param(e.b_mu.clone()),
            w_logvar: tape.param(e.w_logvar.clone()),
            b_logvar: tape.param(e.b_logvar.clone()),
        }
    }
}

impl ModelVars {
    /// `P = Σ_k w^k H^k` and classifier logits.
    pub fn gnn_forward(&self, tape: &mut DiffTape, powers: &[Var]) -> Result<(Var, Var), ModelError> {
        if powers.len() != self.coeffs.len() {
            return Err(ModelError::Num(crate::numcore::NumError::Shape {
                op: "gnn_forward",
                left: (self.coeffs.len(), 1),
                right: (powers.len(), 1),
            }));
        }
        let mut p = tape.scalar_mul(self.coeffs[0], powers[0])?;
        for (w, h) in self.coeffs.iter().zip(powers).skip(1) {
            let term = tape.scalar_mul(*w, *h)?;
            p = tape.add(p, term)?;
        }
        let z = tape.matmul(p, self.w1)?;
        let z = tape.add(z, self.b1)?;
        let hidden = tape.relu(z)?;
        let out = tape.matmul(hidden, self.w2)?;
        let logits = tape.add(out, self.b2)?;
        Ok((p, logits))
    }

    /// Per-node posterior parameters `(μ, logvar)`, both `n × d_z`.
    pub fn encode(&self, tape: &mut DiffTape, p: Var, onehot: Var) -> Result<(Var, Var), ModelError> {
        let a = tape.matmul(p, self.w1)?;
        let b = tape.matmul(onehot, self.wy)?;
        let z = tape.add(a, b)?;
        let z = tape.add(z, self.b)?;
        let hidden = tape.relu(z)?;
        let mu = tape.matmul(hidden, self.w_mu)?;
        let mu = tape.add(mu, self.b_mu)?;
        let lv = tape.matmul(hidden, self.w_logvar)?;
        let lv = tape.add(lv, self.b_logvar)?;
        let logvar = tape.unary(
            lv,
            Unary::Clamp {
                lo: -LOGVAR_BOUND,
                hi: LOGVAR_BOUND,
            },
        )?;
        Ok((mu, logvar))
    }
}
