//! Training objectives expressed on the differentiation tape.

use super::{ClassGaussian, ModelError, VARIANCE_FLOOR};
use crate::numcore::{Cholesky, DenseMatrix, DiffTape, Unary, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Which non-edges enter the reconstruction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairSampling {
    /// As many uniformly drawn non-edges as there are edges.
    #[default]
    Balanced,
    /// Every non-edge.
    Full,
}

/// Handles to the pieces of the negative ELBO.
#[derive(Debug, Clone, Copy)]
pub struct ElboParts {
    /// `recon + kl − log_prior`.
    pub loss: Var,
    /// Mean binary cross-entropy over the scored node pairs.
    pub recon: Var,
    /// Mean per-node `KL(q(z_i) ‖ N(0, I))`.
    pub kl: Var,
    /// Mean log empirical class frequency over labeled nodes (constant).
    pub log_prior: f64,
}

/// Per-class moments of the node posteriors, as tape handles.
#[derive(Debug, Clone, Copy)]
pub struct ClassMoment {
    pub class: usize,
    pub count: usize,
    /// `1 × d_z` mean of node means.
    pub mean: Var,
    /// `1 × d_z` mean node variance plus variance of node means, floored.
    pub var: Var,
}

fn selector(tape: &mut DiffTape, n: usize, rows: &[usize]) -> Var {
    let mut sel = DenseMatrix::zeros(rows.len(), n);
    for (r, &i) in rows.iter().enumerate() {
        sel.set(r, i, 1.0);
    }
    tape.constant(sel)
}

/// Mean softmax cross-entropy of `logits` over the nodes in `mask`.
pub fn ce_loss(tape: &mut DiffTape, logits: Var, labels: &[usize], mask: &[usize]) -> Result<Var, ModelError> {
    if mask.is_empty() {
        return Err(ModelError::Contract("cross-entropy over an empty mask".into()));
    }
    let (n, c) = tape.value(logits).shape();
    let sel = selector(tape, n, mask);
    let picked = tape.matmul(sel, logits)?;
    let rows = tape.value(picked).clone();
    let shift = DenseMatrix::from_fn(mask.len(), 1, |r, _| {
        rows.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    });
    let onehot = DenseMatrix::from_fn(mask.len(), c, |r, j| f64::from(labels[mask[r]] == j));
    let shift = tape.constant(shift);
    let onehot = tape.constant(onehot);
    let shifted = tape.sub(picked, shift)?;
    let e = tape.exp(shifted)?;
    let s = tape.row_sum(e)?;
    let lse = tape.log(s)?;
    let true_logit = tape.mul(shifted, onehot)?;
    let true_logit = tape.row_sum(true_logit)?;
    let per_node = tape.sub(lse, true_logit)?;
    let total = tape.sum(per_node)?;
    Ok(tape.scale(total, 1.0 / mask.len() as f64)?)
}

/// Mean over nodes of `KL(N(μ_i, diag e^{logvar_i}) ‖ N(0, I))`.
pub fn kl_to_standard_normal(tape: &mut DiffTape, mu: Var, logvar: Var) -> Result<Var, ModelError> {
    let (n, dz) = tape.value(mu).shape();
    let m2 = tape.square(mu)?;
    let var = tape.exp(logvar)?;
    let a = tape.sum(m2)?;
    let b = tape.sum(var)?;
    let c = tape.sum(logvar)?;
    let ab = tape.add(a, b)?;
    let s = tape.sub(ab, c)?;
    let s = tape.scale(s, 0.5 / n as f64)?;
    let offset = tape.constant(DenseMatrix::scalar(-0.5 * dz as f64));
    Ok(tape.add(s, offset)?)
}

/// Negative ELBO with an inner-product decoder on `z = μ + e^{logvar/2} ⊙ ε`.
#[allow(clippy::too_many_arguments)]
pub fn elbo_loss(
    tape: &mut DiffTape,
    mu: Var,
    logvar: Var,
    eps: &DenseMatrix,
    edges: &[(usize, usize)],
    labeled_classes: &[usize],
    num_classes: usize,
    sampling: PairSampling,
    rng: &mut impl Rng,
) -> Result<ElboParts, ModelError> {
    let n = tape.value(mu).rows();
    let edge_set: BTreeSet<(usize, usize)> = edges.iter().copied().collect();
    let mut w_pos = DenseMatrix::zeros(n, n);
    let mut w_all = DenseMatrix::zeros(n, n);
    for &(u, v) in &edge_set {
        w_pos.set(u, v, 1.0);
        w_all.set(u, v, 1.0);
    }
    let total_pairs = n * n.saturating_sub(1) / 2;
    let non_edges = total_pairs - edge_set.len();
    let mut scored = edge_set.len();
    match sampling {
        PairSampling::Full => {
            for u in 0..n {
                for v in (u + 1)..n {
                    if !edge_set.contains(&(u, v)) {
                        w_all.set(u, v, 1.0);
                    }
                }
            }
            scored += non_edges;
        }
        PairSampling::Balanced => {
            let want = edge_set.len().min(non_edges);
            let mut chosen = BTreeSet::new();
            while chosen.len() < want {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                let pair = (a.min(b), a.max(b));
                if a != b && !edge_set.contains(&pair) && chosen.insert(pair) {
                    w_all.set(pair.0, pair.1, 1.0);
                }
            }
            scored += want;
        }
    }

    let half = tape.scale(logvar, 0.5)?;
    let std = tape.exp(half)?;
    let eps = tape.constant(eps.clone());
    let noise = tape.mul(std, eps)?;
    let z = tape.add(mu, noise)?;

    let recon = if scored == 0 {
        tape.constant(DenseMatrix::scalar(0.0))
    } else {
        let zt = tape.transpose(z)?;
        let scores = tape.matmul(z, zt)?;
        let sp = tape.softplus(scores)?;
        let w_all = tape.constant(w_all);
        let w_pos = tape.constant(w_pos);
        let t1 = tape.mul(sp, w_all)?;
        let t1 = tape.sum(t1)?;
        let t2 = tape.mul(scores, w_pos)?;
        let t2 = tape.sum(t2)?;
        let diff = tape.sub(t1, t2)?;
        tape.scale(diff, 1.0 / scored as f64)?
    };
    let kl = kl_to_standard_normal(tape, mu, logvar)?;
    let log_prior = log_class_prior(labeled_classes, num_classes);
    let prior = tape.constant(DenseMatrix::scalar(-log_prior));
    let loss = tape.add(recon, kl)?;
    let loss = tape.add(loss, prior)?;
    Ok(ElboParts {
        loss,
        recon,
        kl,
        log_prior,
    })
}

/// Mean of `ln(freq(y))` over labeled nodes, using their own frequencies.
fn log_class_prior(labeled: &[usize], num_classes: usize) -> f64 {
    if labeled.is_empty() {
        return 0.0;
    }
    let mut counts = vec![0usize; num_classes];
    labeled.iter().for_each(|&c| counts[c] += 1);
    let n = labeled.len() as f64;
    labeled
        .iter()
        .map(|&c| (counts[c] as f64 / n).ln())
        .sum::<f64>()
        / n
}

/// Moment-matched diagonal Gaussian per class over the `labeled` nodes.
///
/// Classes without labeled nodes are omitted.
pub fn class_moments(
    tape: &mut DiffTape,
    mu: Var,
    logvar: Var,
    labels: &[usize],
    labeled: &[usize],
    num_classes: usize,
) -> Result<Vec<ClassMoment>, ModelError> {
    let n = tape.value(mu).rows();
    let var = tape.exp(logvar)?;
    let mu2 = tape.square(mu)?;
    let second = tape.add(var, mu2)?;
    let mut out = Vec::new();
    for c in 0..num_classes {
        let members: Vec<usize> = labeled.iter().copied().filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let inv = 1.0 / members.len() as f64;
        let mut row = DenseMatrix::zeros(1, n);
        members.iter().for_each(|&i| row.set(0, i, inv));
        let row = tape.constant(row);
        let mean = tape.matmul(row, mu)?;
        let m2 = tape.matmul(row, second)?;
        let mean_sq = tape.square(mean)?;
        let v = tape.sub(m2, mean_sq)?;
        let v = tape.unary(
            v,
            Unary::Clamp {
                lo: VARIANCE_FLOOR,
                hi: f64::INFINITY,
            },
        )?;
        out.push(ClassMoment {
            class: c,
            count: members.len(),
            mean,
            var: v,
        });
    }
    Ok(out)
}

impl ClassMoment {
    /// Current value as a diagonal [`ClassGaussian`].
    pub fn to_gaussian(&self, tape: &DiffTape) -> Result<ClassGaussian, ModelError> {
        ClassGaussian::diagonal(
            self.class,
            tape.value(self.mean).as_slice().to_vec(),
            tape.value(self.var).as_slice(),
            self.count,
        )
    }
}

/// `KL(N(mean, diag var) ‖ frozen)` with the frozen side constant.
pub fn gaussian_kl_to_frozen(
    tape: &mut DiffTape,
    mean: Var,
    var: Var,
    frozen: &ClassGaussian,
) -> Result<Var, ModelError> {
    let dz = frozen.dim();
    let chol = Cholesky::new(&frozen.cov)?;
    let inv = chol.inverse()?;
    let diag_inv = DenseMatrix::row_vector(&inv.diagonal());
    let mu_r = tape.constant(DenseMatrix::row_vector(&frozen.mean));
    let inv = tape.constant(inv);
    let diag_inv = tape.constant(diag_inv);

    let diff = tape.sub(mean, mu_r)?;
    let q = tape.matmul(diff, inv)?;
    let q = tape.mul(q, diff)?;
    let quad = tape.sum(q)?;
    let tr = tape.mul(var, diag_inv)?;
    let tr = tape.sum(tr)?;
    let lv = tape.log(var)?;
    let lv = tape.sum(lv)?;
    let s = tape.add(tr, quad)?;
    let s = tape.sub(s, lv)?;
    let s = tape.scale(s, 0.5)?;
    let offset = tape.constant(DenseMatrix::scalar(0.5 * (chol.log_det() - dz as f64)));
    Ok(tape.add(s, offset)?)
}

/// `Σ_k |w^k − w̄^k|` against frozen cluster means.
pub fn l_align(tape: &mut DiffTape, coeffs: &[Var], target: &[f64]) -> Result<Var, ModelError> {
    if coeffs.len() != target.len() {
        return Err(ModelError::Contract(format!(
            "{} coefficients but {} cluster means",
            coeffs.len(),
            target.len()
        )));
    }
    let mut total = tape.constant(DenseMatrix::scalar(0.0));
    for (w, t) in coeffs.iter().zip(target) {
        let t = tape.constant(DenseMatrix::scalar(*t));
        let d = tape.sub(*w, t)?;
        let a = tape.abs(d)?;
        total = tape.add(total, a)?;
    }
    Ok(total)
}

/// `Σ_k (λ1 |w^k| + λ2/2 (w^k)²)`.
pub fn l_reg(tape: &mut DiffTape, coeffs: &[Var], lambda1: f64, lambda2: f64) -> Result<Var, ModelError> {
    if !(lambda1 >= 0.0 && lambda2 >= 0.0) {
        return Err(ModelError::Config(format!(
            "regularization weights must be nonnegative, got {lambda1}, {lambda2}"
        )));
    }
    let mut total = tape.constant(DenseMatrix::scalar(0.0));
    for w in coeffs {
        let a = tape.abs(*w)?;
        let a = tape.scale(a, lambda1)?;
        let s = tape.square(*w)?;
        let s = tape.scale(s, 0.5 * lambda2)?;
        total = tape.add(total, a)?;
        total = tape.add(total, s)?;
    }
    Ok(total)
}
