//! Executable diagnostics for intra-cluster heterogeneity, the aggregated
//! error floor, linear contraction toward that floor, and the KL bound
//! between a client's class distribution and its cluster representative.

use crate::models::{ClassGaussian, SpectralEnergy};
use crate::numcore::{sym_eig_small, DenseMatrix, NumError};
use crate::semantic::{gaussian_kl, ClientClasses, SemanticClusterMap, SemanticError};
use crate::structural::{chordal_distance, StructuralClusterMap, StructuralError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack allowed between the simulated sequence and its closed-form bound.
pub const CONTRACTION_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error(transparent)]
    Structural(#[from] StructuralError),
}

/// Spread of one class's semantic cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticSpread {
    pub class: usize,
    pub cluster: usize,
    pub members: Vec<usize>,
    /// Largest pairwise distance between member means.
    pub delta_mu: f64,
    /// Largest pairwise Frobenius distance between member covariances.
    pub delta_sigma: f64,
    /// Smallest eigenvalue of the cluster representative's covariance.
    pub sigma_min_sq: f64,
}

/// Spread of one structural cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralSpread {
    pub cluster: usize,
    pub members: Vec<usize>,
    /// Largest pairwise chordal distance between member energies.
    pub eps_u: f64,
}

/// Intra-cluster heterogeneity of a clustered federation.
///
/// The scalar fields are worst cases over clusters; `sigma_min_sq` is the
/// minimum over all representatives and is `None` without semantic clusters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HeterogeneityReport {
    pub semantic: Vec<SemanticSpread>,
    pub structural: Vec<StructuralSpread>,
    pub delta_mu: f64,
    pub delta_sigma: f64,
    pub eps_u: f64,
    pub sigma_min_sq: Option<f64>,
}

fn max_pairwise<T>(items: &[T], dist: impl Fn(&T, &T) -> Result<f64, TheoryError>) -> Result<f64, TheoryError> {
    let mut best = 0.0f64;
    for (i, a) in items.iter().enumerate() {
        for b in &items[i + 1..] {
            best = best.max(dist(a, b)?);
        }
    }
    Ok(best)
}

fn mean_distance(a: &&ClassGaussian, b: &&ClassGaussian) -> Result<f64, TheoryError> {
    Ok(a.mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

fn cov_distance(a: &&ClassGaussian, b: &&ClassGaussian) -> Result<f64, TheoryError> {
    Ok(a.cov.sub(&b.cov)?.frobenius_norm())
}

fn energy_distance(a: &&SpectralEnergy, b: &&SpectralEnergy) -> Result<f64, TheoryError> {
    Ok(chordal_distance(&a.q, &b.q)?)
}

/// Smallest eigenvalue of a covariance.
pub fn min_eigenvalue(cov: &DenseMatrix) -> Result<f64, NumError> {
    Ok(sym_eig_small(cov)?.0[0])
}

fn class_of<'a>(uploads: &[ClientClasses<'a>], client: usize, class: usize) -> Result<&'a ClassGaussian, TheoryError> {
    uploads
        .iter()
        .find(|(id, _)| *id == client)
        .and_then(|(_, gs)| gs.iter().find(|g| g.class == class))
        .ok_or_else(|| TheoryError::Contract(format!("client {client} has no Gaussian for class {class}")))
}

fn energy_of<'a>(energies: &[&'a SpectralEnergy], client: usize) -> Result<&'a SpectralEnergy, TheoryError> {
    energies
        .iter()
        .find(|e| e.client == client)
        .copied()
        .ok_or_else(|| TheoryError::Contract(format!("client {client} has no spectral energy")))
}

/// Exact maxima over intra-cluster pairs; singleton clusters contribute 0.
pub fn measure_heterogeneity(
    classes: &[ClientClasses<'_>],
    energies: &[&SpectralEnergy],
    semantic: &SemanticClusterMap,
    structural: &StructuralClusterMap,
) -> Result<HeterogeneityReport, TheoryError> {
    let mut report = HeterogeneityReport::default();
    for cc in &semantic.classes {
        for (k, ids) in cc.members().into_iter().enumerate() {
            let gs = ids
                .iter()
                .map(|&id| class_of(classes, id, cc.class))
                .collect::<Result<Vec<_>, _>>()?;
            let spread = SemanticSpread {
                class: cc.class,
                cluster: k,
                members: ids,
                delta_mu: max_pairwise(&gs, mean_distance)?,
                delta_sigma: max_pairwise(&gs, cov_distance)?,
                sigma_min_sq: min_eigenvalue(&cc.representatives[k].cov)?,
            };
            report.delta_mu = report.delta_mu.max(spread.delta_mu);
            report.delta_sigma = report.delta_sigma.max(spread.delta_sigma);
            report.sigma_min_sq = Some(
                report
                    .sigma_min_sq
                    .map_or(spread.sigma_min_sq, |s| s.min(spread.sigma_min_sq)),
            );
            report.semantic.push(spread);
        }
    }
    for (k, ids) in structural.members().into_iter().enumerate() {
        let es = ids
            .iter()
            .map(|&id| energy_of(energies, id))
            .collect::<Result<Vec<_>, _>>()?;
        let eps_u = max_pairwise(&es, energy_distance)?;
        report.eps_u = report.eps_u.max(eps_u);
        report.structural.push(StructuralSpread {
            cluster: k,
            members: ids,
            eps_u,
        });
    }
    Ok(report)
}

/// Worst-case spreads with every client in a single cluster.
///
/// Returns `(δ_μ, δ_Σ, ε_U)`; each class is compared across the clients
/// that hold it.
pub fn measure_unclustered(
    classes: &[ClientClasses<'_>],
    energies: &[&SpectralEnergy],
) -> Result<(f64, f64, f64), TheoryError> {
    let num_classes = classes
        .iter()
        .flat_map(|(_, gs)| gs.iter().map(|g| g.class + 1))
        .max()
        .unwrap_or(0);
    let (mut dmu, mut dsigma) = (0.0f64, 0.0f64);
    for c in 0..num_classes {
        let gs: Vec<&ClassGaussian> = classes
            .iter()
            .filter_map(|(_, list)| list.iter().find(|g| g.class == c))
            .collect();
        dmu = dmu.max(max_pairwise(&gs, mean_distance)?);
        dsigma = dsigma.max(max_pairwise(&gs, cov_distance)?);
    }
    Ok((dmu, dsigma, max_pairwise(energies, energy_distance)?))
}

/// Weights of the four error-floor terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FloorConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl Default for FloorConstants {
    fn default() -> Self {
        FloorConstants {
            c1: 1.0,
            c2: 1.0,
            c3: 1.0,
            c4: 1.0,
        }
    }
}

/// Aggregated error floor with every input it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorFloorReport {
    pub constants: FloorConstants,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Polynomial order `K`; the filter has `K + 1` coefficients.
    pub order: usize,
    pub delta_mu: f64,
    pub delta_sigma: f64,
    pub eps_u: f64,
    /// `C1 (δ_μ + δ_μ² + δ_Σ)`.
    pub semantic: f64,
    /// `C2 (K+1) ε_U + λ1 C3 + λ2 C4`.
    pub structural: f64,
    pub value: f64,
}

impl ErrorFloorReport {
    /// Recomputes the floor from the stored inputs.
    pub fn recompute(&self) -> f64 {
        let c = &self.constants;
        let semantic = c.c1 * (self.delta_mu + self.delta_mu * self.delta_mu + self.delta_sigma);
        let structural =
            c.c2 * (self.order + 1) as f64 * self.eps_u + self.lambda1 * c.c3 + self.lambda2 * c.c4;
        semantic + structural
    }
}

/// `C1(δ_μ + δ_μ² + δ_Σ) + C2(K+1)ε_U + λ1 C3 + λ2 C4`.
pub fn error_floor(
    delta_mu: f64,
    delta_sigma: f64,
    eps_u: f64,
    constants: FloorConstants,
    lambda1: f64,
    lambda2: f64,
    order: usize,
) -> Result<ErrorFloorReport, TheoryError> {
    let c = constants;
    if [c.c1, c.c2, c.c3, c.c4].iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(TheoryError::Config(format!(
            "error-floor constants must be positive and finite, got {c:?}"
        )));
    }
    if !(lambda1 >= 0.0 && lambda2 >= 0.0) {
        return Err(TheoryError::Config("regularization weights must be nonnegative".into()));
    }
    if [delta_mu, delta_sigma, eps_u].iter().any(|v| !(*v >= 0.0)) {
        return Err(TheoryError::Contract("heterogeneity measures must be nonnegative".into()));
    }
    let semantic = c.c1 * (delta_mu + delta_mu * delta_mu + delta_sigma);
    let structural = c.c2 * (order + 1) as f64 * eps_u + lambda1 * c.c3 + lambda2 * c.c4;
    Ok(ErrorFloorReport {
        constants: c,
        lambda1,
        lambda2,
        order,
        delta_mu,
        delta_sigma,
        eps_u,
        semantic,
        structural,
        value: semantic + structural,
    })
}

/// Simulated distance recursion and its closed-form envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionTrace {
    pub rho: f64,
    /// `d_1 .. d_T`.
    pub distances: Vec<f64>,
    /// `ρ^t d_0 + ((L_F+λ_F)/(λ_F L_F)) ℰ` for `t = 1 .. T`.
    pub bounds: Vec<f64>,
    /// `((L_F+λ_F)/(λ_F L_F)) ℰ`, the limit of the recursion.
    pub fixed_point: f64,
}

/// `ρ = 1 − λ_F/(L_F+λ_F)`.
pub fn contraction_rate(l_f: f64, lambda_f: f64) -> Result<f64, TheoryError> {
    if !(lambda_f > 0.0 && l_f.is_finite()) {
        return Err(TheoryError::Contract(format!(
            "strong convexity {lambda_f} must be positive and smoothness {l_f} finite"
        )));
    }
    if lambda_f > l_f {
        return Err(TheoryError::Contract(format!(
            "strong convexity {lambda_f} exceeds smoothness {l_f}"
        )));
    }
    Ok(1.0 - lambda_f / (l_f + lambda_f))
}

/// Iterates `d_{t+1} = ρ d_t + ℰ/L_F` for `rounds` steps and checks every
/// iterate against the closed-form bound.
pub fn contraction_simulate(
    l_f: f64,
    lambda_f: f64,
    d0: f64,
    floor: f64,
    rounds: usize,
) -> Result<ContractionTrace, TheoryError> {
    let rho = contraction_rate(l_f, lambda_f)?;
    if !(d0 >= 0.0 && floor >= 0.0) {
        return Err(TheoryError::Contract("distance and floor must be nonnegative".into()));
    }
    let fixed_point = (l_f + lambda_f) / (lambda_f * l_f) * floor;
    let mut distances = Vec::with_capacity(rounds);
    let mut bounds = Vec::with_capacity(rounds);
    let mut d = d0;
    for t in 1..=rounds {
        d = rho * d + floor / l_f;
        let bound = rho.powi(t as i32) * d0 + fixed_point;
        if d > bound + CONTRACTION_TOL {
            return Err(TheoryError::Contract(format!(
                "iterate {t} is {d}, above its bound {bound}"
            )));
        }
        distances.push(d);
        bounds.push(bound);
    }
    Ok(ContractionTrace {
        rho,
        distances,
        bounds,
        fixed_point,
    })
}

/// `⌈((L_F+λ_F)/λ_F) ln(d_0/ξ)⌉` rounds, enough for `ρ^T d_0 ≤ ξ`.
pub fn rounds_to_tolerance(l_f: f64, lambda_f: f64, d0: f64, xi: f64) -> Result<u64, TheoryError> {
    contraction_rate(l_f, lambda_f)?;
    if !(xi > 0.0 && d0 >= 0.0) {
        return Err(TheoryError::Contract("tolerance must be positive".into()));
    }
    if d0 <= xi {
        return Ok(0);
    }
    Ok(((l_f + lambda_f) / lambda_f * (d0 / xi).ln()).ceil() as u64)
}

/// `F(w) = ½ (w − w*)ᵀ A (w − w*)` with symmetric positive definite `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticToy {
    pub hessian: DenseMatrix,
    pub minimizer: Vec<f64>,
}

impl QuadraticToy {
    pub fn new(hessian: DenseMatrix, minimizer: Vec<f64>) -> Result<Self, TheoryError> {
        let hessian = hessian.symmetrized()?;
        if hessian.rows() != minimizer.len() {
            return Err(TheoryError::Contract("Hessian and minimizer dimensions differ".into()));
        }
        if min_eigenvalue(&hessian)? <= 0.0 {
            return Err(TheoryError::Contract("Hessian is not positive definite".into()));
        }
        Ok(QuadraticToy { hessian, minimizer })
    }

    /// `(λ_F, L_F)`: extreme Hessian eigenvalues.
    pub fn curvature(&self) -> Result<(f64, f64), TheoryError> {
        let vals = sym_eig_small(&self.hessian)?.0;
        Ok((vals[0], vals[vals.len() - 1]))
    }

    pub fn gradient(&self, w: &[f64]) -> Result<Vec<f64>, TheoryError> {
        let diff: Vec<f64> = w.iter().zip(&self.minimizer).map(|(a, b)| a - b).collect();
        Ok(self
            .hessian
            .matmul(&DenseMatrix::column_vector(&diff))?
            .into_vec())
    }

    pub fn distance(&self, w: &[f64]) -> f64 {
        w.iter()
            .zip(&self.minimizer)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Distances `‖w_t − w*‖` for `t = 0 .. steps` of gradient descent with
    /// step `1/L_F`.
    pub fn descend(&self, w0: &[f64], steps: usize) -> Result<Vec<f64>, TheoryError> {
        let (_, l_f) = self.curvature()?;
        let mut w = w0.to_vec();
        let mut out = vec![self.distance(&w)];
        for _ in 0..steps {
            let g = self.gradient(&w)?;
            w.iter_mut().zip(&g).for_each(|(x, gi)| *x -= gi / l_f);
            out.push(self.distance(&w));
        }
        Ok(out)
    }
}

/// Outcome for one cluster member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditStatus {
    Satisfied,
    Violated,
    /// The cluster is too spread for the bound to apply.
    AssumptionViolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlAuditEntry {
    pub member: usize,
    pub kl: f64,
    pub bound: f64,
    pub status: AuditStatus,
}

/// `δ_μ²/(2σ²) + 3 d_z (δ_Σ + δ_μ²)/(2σ²)`.
pub fn kl_bound(delta_mu: f64, delta_sigma: f64, sigma_min_sq: f64, dim: usize) -> f64 {
    let dm2 = delta_mu * delta_mu;
    dm2 / (2.0 * sigma_min_sq) + 3.0 * dim as f64 * (delta_sigma + dm2) / (2.0 * sigma_min_sq)
}

/// Compares `KL(member ‖ representative)` with [`kl_bound`] for each member.
///
/// The spreads are measured on `members`. When `δ_Σ + δ_μ² > σ²/2` every
/// entry is marked [`AuditStatus::AssumptionViolated`].
pub fn kl_bound_audit(
    members: &[&ClassGaussian],
    representative: &ClassGaussian,
    sigma_min_sq: f64,
) -> Result<Vec<KlAuditEntry>, TheoryError> {
    if !(sigma_min_sq > 0.0) {
        return Err(TheoryError::Contract("σ_min² must be positive".into()));
    }
    let delta_mu = max_pairwise(members, mean_distance)?;
    let delta_sigma = max_pairwise(members, cov_distance)?;
    let applies = delta_sigma + delta_mu * delta_mu <= sigma_min_sq / 2.0;
    let bound = kl_bound(delta_mu, delta_sigma, sigma_min_sq, representative.dim());
    members
        .iter()
        .enumerate()
        .map(|(member, g)| {
            let kl = gaussian_kl(g, representative)?;
            let status = if !applies {
                AuditStatus::AssumptionViolated
            } else if kl <= bound {
                AuditStatus::Satisfied
            } else {
                AuditStatus::Violated
            };
            Ok(KlAuditEntry {
                member,
                kl,
                bound,
                status,
            })
        })
        .collect()
}

/// Fraction of consecutive rounds in which `series` does not increase.
///
/// Returns `None` for fewer than two points.
pub fn nonincreasing_fraction(series: &[f64]) -> Option<f64> {
    if series.len() < 2 {
        return None;
    }
    let steps = series.len() - 1;
    let ok = series.windows(2).filter(|w| w[1] <= w[0]).count();
    Some(ok as f64 / steps as f64)
}
