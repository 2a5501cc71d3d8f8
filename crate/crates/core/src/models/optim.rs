use super::ModelError;
use crate::numcore::DenseMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction over a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, shapes: &[DenseMatrix]) -> Self {
        let zeros: Vec<DenseMatrix> = shapes
            .iter()
            .map(|p| DenseMatrix::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            cfg,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [DenseMatrix], grads: &[DenseMatrix]) -> Result<(), ModelError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(ModelError::Contract("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            if p.shape() != g.shape() {
                return Err(ModelError::Contract("gradient shape mismatch".into()));
            }
            let data: Vec<f64> = (0..g.as_slice().len())
                .map(|i| {
                    let gi = g.as_slice()[i];
                    let mi = beta1 * m.as_slice()[i] + (1.0 - beta1) * gi;
                    let vi = beta2 * v.as_slice()[i] + (1.0 - beta2) * gi * gi;
                    m.as_mut_slice()[i] = mi;
                    v.as_mut_slice()[i] = vi;
                    p.as_slice()[i] - lr * (mi / c1) / ((vi / c2).sqrt() + eps)
                })
                .collect();
            *p = DenseMatrix::from_vec(p.rows(), p.cols(), data)?;
        }
        Ok(())
    }
}
