use super::{DatasetSpec, ExperimentConfig, ExperimentError};
use crate::federation::{
    run_federation, write_diagnostics_csv, write_distances_csv, write_metrics_csv, Ablation, ClientUpload,
    FederationOutcome, Method, RoundMetrics, METRICS_HEADER,
};
use crate::graphs::{save_dataset, save_graph};
use crate::models::{Encoder, Head};
use crate::semantic::SemanticClusterMap;
use crate::structural::{filter_derivative_sup, filter_lipschitz_bound, StructuralClusterMap};
use crate::theory::{
    contraction_simulate, kl_bound_audit, min_eigenvalue, nonincreasing_fraction, rounds_to_tolerance, AuditStatus,
    KlAuditEntry,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const METRICS_FILE: &str = "metrics.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const DISTANCES_FILE: &str = "distances.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const UPLOADS_FILE: &str = "uploads.json";
pub const CLUSTERS_FILE: &str = "clusters.json";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const DIAGNOSE_FILE: &str = "diagnose.json";
const GRAPH_FILE: &str = "graph.json";
const DATASET_FILE: &str = "dataset.json";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Also write the per-round client-by-client chordal distances.
    pub dump_distances: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedState {
    pub seed: u64,
    pub rounds_completed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientCheckpoint {
    pub client: usize,
    pub w: Vec<f64>,
    pub head: Head,
    pub encoder: Encoder,
}

/// Final parameters of every client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    /// Polynomial order.
    #[serde(rename = "K")]
    pub order: usize,
    pub clients: Vec<ClientCheckpoint>,
    pub seed_state: SeedState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub method: Method,
    pub ablation: Ablation,
    pub seed: u64,
    pub clients: usize,
    pub rounds: usize,
    pub final_mean_test: Option<f64>,
    /// First round reaching the highest mean test metric.
    pub best_round: Option<usize>,
    pub best_mean_test: Option<f64>,
    /// Error floor of every round; empty unless the method clusters.
    pub error_floor: Vec<f64>,
    /// Global edges lost to partitioning.
    pub dropped_edges: usize,
    pub bytes_up: usize,
    pub bytes_down: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClustersDocument {
    semantic: SemanticClusterMap,
    structural: StructuralClusterMap,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn artifact_err(path: &Path, detail: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Artifact {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| artifact_err(path, e))?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ExperimentError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| artifact_err(path, e))
}

fn write_csv(
    path: &Path,
    rounds: &[RoundMetrics],
    f: fn(&[RoundMetrics], &mut Vec<u8>) -> csv::Result<()>,
) -> Result<(), ExperimentError> {
    let mut bytes = Vec::new();
    f(rounds, &mut bytes).map_err(|e| artifact_err(path, e))?;
    write_bytes(path, &bytes)
}

fn create_dir(out: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(out).map_err(io_err(out))
}

/// Highest value and the first index reaching it.
fn best_of(values: impl Iterator<Item = Option<f64>>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if let Some(v) = v {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best
}

fn summarize(cfg: &ExperimentConfig, outcome: &FederationOutcome, dropped_edges: usize) -> RunSummary {
    let rounds = &outcome.rounds;
    let best = best_of(rounds.iter().map(RoundMetrics::mean_test));
    let (bytes_up, bytes_down) = rounds
        .iter()
        .flat_map(|r| &r.clients)
        .fold((0, 0), |(u, d), c| (u + c.bytes_up, d + c.bytes_down));
    RunSummary {
        method: cfg.train.method,
        ablation: cfg.train.ablation,
        seed: cfg.seed,
        clients: outcome.models.len(),
        rounds: rounds.len(),
        final_mean_test: rounds.last().and_then(RoundMetrics::mean_test),
        best_round: best.map(|(i, _)| rounds[i].round),
        best_mean_test: best.map(|(_, v)| v),
        error_floor: rounds
            .iter()
            .filter_map(|r| r.diagnostics.as_ref().map(|d| d.floor.value))
            .collect(),
        dropped_edges,
        bytes_up,
        bytes_down,
    }
}

fn checkpoint(cfg: &ExperimentConfig, outcome: &FederationOutcome) -> Checkpoint {
    Checkpoint {
        order: cfg.train.order,
        clients: outcome
            .models
            .iter()
            .enumerate()
            .map(|(client, m)| ClientCheckpoint {
                client,
                w: m.coeffs.clone(),
                head: m.head.clone(),
                encoder: m.encoder.clone(),
            })
            .collect(),
        seed_state: SeedState {
            seed: cfg.seed,
            rounds_completed: outcome.rounds.len(),
        },
    }
}

/// Trains the configured federation and writes its artifacts to `out`.
///
/// Always written: metrics, diagnostics, checkpoint and summary. Clustering
/// methods also leave the last uploads and cluster maps for `diagnose`.
pub fn run(
    cfg: &ExperimentConfig,
    out: &Path,
    opts: RunOptions,
) -> Result<(RunSummary, FederationOutcome), ExperimentError> {
    cfg.validate()?;
    let dataset = cfg.dataset()?;
    create_dir(out)?;
    let outcome = run_federation(&dataset, &cfg.train, cfg.seed)?;
    write_csv(&out.join(METRICS_FILE), &outcome.rounds, |r, w| write_metrics_csv(r, w))?;
    write_csv(&out.join(DIAGNOSTICS_FILE), &outcome.rounds, |r, w| write_diagnostics_csv(r, w))?;
    if opts.dump_distances {
        write_csv(&out.join(DISTANCES_FILE), &outcome.rounds, |r, w| write_distances_csv(r, w))?;
    }
    write_json(&out.join(CHECKPOINT_FILE), &checkpoint(cfg, &outcome))?;
    if let Some(server) = &outcome.last_server {
        write_json(&out.join(UPLOADS_FILE), &outcome.last_uploads)?;
        write_json(
            &out.join(CLUSTERS_FILE),
            &ClustersDocument {
                semantic: server.semantic.clone(),
                structural: server.structural.clone(),
            },
        )?;
    }
    let summary = summarize(cfg, &outcome, dataset.dropped_edges());
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok((summary, outcome))
}

/// One cell of the alignment ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub semantic: bool,
    pub structural: bool,
    pub final_mean_test: Option<f64>,
    pub best_mean_test: Option<f64>,
    /// Client-mean alignment losses of the last round.
    pub node_loss: f64,
    pub struct_loss: f64,
}

impl AblationRow {
    /// Fixed-width text table of `rows`.
    pub fn table(rows: &[AblationRow]) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let on = |b: bool| if b { "on" } else { "off" };
        let mut s = format!(
            "{:<9} {:<11} {:>10} {:>10} {:>12} {:>12}\n",
            "semantic", "structural", "final", "best", "node_loss", "struct_loss"
        );
        for r in rows {
            s += &format!(
                "{:<9} {:<11} {:>10} {:>10} {:>12.4e} {:>12.4e}\n",
                on(r.semantic),
                on(r.structural),
                fmt(r.final_mean_test),
                fmt(r.best_mean_test),
                r.node_loss,
                r.struct_loss
            );
        }
        s
    }
}

/// Runs the four semantic × structural cells with the clustering method
/// and shared seeds, writing `ablation.csv` to `out`.
///
/// The cell with both branches off must report zero alignment losses in
/// every round.
pub fn ablate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<AblationRow>, ExperimentError> {
    cfg.validate()?;
    let dataset = cfg.dataset()?;
    create_dir(out)?;
    let mut rows = Vec::with_capacity(4);
    for (semantic, structural) in [(true, true), (false, true), (true, false), (false, false)] {
        let mut train = cfg.train.clone();
        train.method = Method::FedSsa;
        train.ablation = Ablation { semantic, structural };
        let outcome = run_federation(&dataset, &train, cfg.seed)?;
        if !semantic && !structural {
            let leak = outcome
                .rounds
                .iter()
                .flat_map(|r| &r.clients)
                .find(|c| c.eval.losses.node != 0.0 || c.eval.losses.structure != 0.0);
            if let Some(c) = leak {
                return Err(ExperimentError::Contract(format!(
                    "client {} reports alignment losses with both branches off",
                    c.client
                )));
            }
        }
        let last = outcome.rounds.last().expect("validated configs run at least one round");
        rows.push(AblationRow {
            semantic,
            structural,
            final_mean_test: last.mean_test(),
            best_mean_test: best_of(outcome.rounds.iter().map(RoundMetrics::mean_test)).map(|(_, v)| v),
            node_loss: last.mean.losses.node,
            struct_loss: last.mean.losses.structure,
        });
    }
    let path = out.join(ABLATION_FILE);
    let mut w = csv::Writer::from_writer(Vec::new());
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    let csv_err = |e: csv::Error| artifact_err(&path, e);
    w.write_record(["semantic", "structural", "final_mean_test", "best_mean_test", "node_loss", "struct_loss"])
        .map_err(csv_err)?;
    for r in &rows {
        w.write_record([
            r.semantic.to_string(),
            r.structural.to_string(),
            opt(r.final_mean_test),
            opt(r.best_mean_test),
            r.node_loss.to_string(),
            r.struct_loss.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| artifact_err(&path, e))?;
    write_bytes(&path, &bytes)?;
    Ok(rows)
}

/// Writes the configured synthetic data to `out` and returns the file.
///
/// A block model yields its single global graph; the two-regime model
/// yields the whole federation.
pub fn synth(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf, ExperimentError> {
    cfg.validate()?;
    create_dir(out)?;
    match &cfg.dataset {
        DatasetSpec::Sbm { .. } => {
            let g = cfg.global_graph()?.expect("block models have a global graph");
            let path = out.join(GRAPH_FILE);
            save_graph(&g, &path)?;
            Ok(path)
        }
        DatasetSpec::TwoRegime { .. } => {
            let path = out.join(DATASET_FILE);
            save_dataset(&cfg.dataset()?, &path)?;
            Ok(path)
        }
        _ => Err(ExperimentError::Config(
            "synth needs a synthetic dataset kind (sbm or two-regime)".into(),
        )),
    }
}

/// Builds the configured federation and writes it to `out` as one bundle.
pub fn partition(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf, ExperimentError> {
    cfg.validate()?;
    let dataset = cfg.dataset()?;
    create_dir(out)?;
    let path = out.join(DATASET_FILE);
    save_dataset(&dataset, &path)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlAuditCluster {
    pub class: usize,
    pub cluster: usize,
    /// Client ids, in the order of `entries`.
    pub members: Vec<usize>,
    pub sigma_min_sq: f64,
    pub entries: Vec<KlAuditEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzCheck {
    pub client: usize,
    pub bound: f64,
    pub grid_sup: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionSummary {
    pub rho: f64,
    /// Last round's error floor.
    pub error_floor: f64,
    pub rounds_to_tolerance: u64,
    /// Limit of the distance recursion.
    pub fixed_point: f64,
    /// Share of rounds in which the error floor did not increase.
    pub floor_nonincreasing_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub kl_audit: Vec<KlAuditCluster>,
    pub kl_satisfied: usize,
    pub kl_violated: usize,
    /// Members of clusters too spread for the bound to apply.
    pub kl_not_applicable: usize,
    pub lipschitz: Vec<LipschitzCheck>,
    pub contraction: ContractionSummary,
}

/// Applies the theory checks to the last round of a saved clustering run
/// in `dir` and writes `diagnose.json` next to it.
pub fn diagnose(cfg: &ExperimentConfig, dir: &Path) -> Result<DiagnoseReport, ExperimentError> {
    let uploads_path = dir.join(UPLOADS_FILE);
    if !uploads_path.exists() {
        return Err(artifact_err(&uploads_path, "missing; diagnose needs a fedssa run"));
    }
    let uploads: Vec<ClientUpload> = read_json(&uploads_path)?;
    let clusters: ClustersDocument = read_json(&dir.join(CLUSTERS_FILE))?;
    let summary: RunSummary = read_json(&dir.join(SUMMARY_FILE))?;
    let upload_of = |client: usize| {
        uploads
            .iter()
            .find(|u| u.client == client)
            .ok_or_else(|| artifact_err(&uploads_path, format!("no upload for client {client}")))
    };

    let mut kl_audit = Vec::new();
    for cc in &clusters.semantic.classes {
        for (k, members) in cc.members().into_iter().enumerate() {
            let rep = &cc.representatives[k];
            let mut gaussians = Vec::with_capacity(members.len());
            for &client in &members {
                let g = upload_of(client)?
                    .class_gaussians
                    .iter()
                    .find(|g| g.class == cc.class)
                    .ok_or_else(|| artifact_err(&uploads_path, format!("client {client} lacks class {}", cc.class)))?;
                gaussians.push(g);
            }
            let sigma_min_sq = min_eigenvalue(&rep.cov).map_err(crate::theory::TheoryError::from)?;
            let entries = kl_bound_audit(&gaussians, rep, sigma_min_sq)?;
            kl_audit.push(KlAuditCluster {
                class: cc.class,
                cluster: k,
                members,
                sigma_min_sq,
                entries,
            });
        }
    }
    let count = |s: AuditStatus| {
        kl_audit
            .iter()
            .flat_map(|c| &c.entries)
            .filter(|e| e.status == s)
            .count()
    };

    let lipschitz = uploads
        .iter()
        .map(|u| {
            let bound = filter_lipschitz_bound(&u.coeffs);
            let grid_sup = filter_derivative_sup(&u.coeffs);
            LipschitzCheck {
                client: u.client,
                bound,
                grid_sup,
                holds: grid_sup <= bound * (1.0 + 1e-12),
            }
        })
        .collect();

    let th = &cfg.theory;
    let floor = summary.error_floor.last().copied().unwrap_or(0.0);
    let rounds = rounds_to_tolerance(th.smoothness, th.strong_convexity, th.initial_distance, th.tolerance)?;
    let trace = contraction_simulate(th.smoothness, th.strong_convexity, th.initial_distance, floor, 1)?;
    let report = DiagnoseReport {
        kl_satisfied: count(AuditStatus::Satisfied),
        kl_violated: count(AuditStatus::Violated),
        kl_not_applicable: count(AuditStatus::AssumptionViolated),
        kl_audit,
        lipschitz,
        contraction: ContractionSummary {
            rho: trace.rho,
            error_floor: floor,
            rounds_to_tolerance: rounds,
            fixed_point: trace.fixed_point,
            floor_nonincreasing_fraction: nonincreasing_fraction(&summary.error_floor),
        },
    };
    write_json(&dir.join(DIAGNOSE_FILE), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub mean_train: Option<f64>,
    pub mean_test: Option<f64>,
    pub bytes_up: usize,
    pub bytes_down: usize,
}

/// Per-round summary of a saved metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rounds: Vec<RoundSummary>,
    pub final_mean_test: Option<f64>,
    pub best_round: Option<usize>,
    pub best_mean_test: Option<f64>,
    pub bytes_up: usize,
    pub bytes_down: usize,
}

impl Report {
    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let mut s = format!("{:>6} {:>10} {:>10} {:>12} {:>12}\n", "round", "train", "test", "bytes_up", "bytes_down");
        for r in &self.rounds {
            s += &format!(
                "{:>6} {:>10} {:>10} {:>12} {:>12}\n",
                r.round,
                fmt(r.mean_train),
                fmt(r.mean_test),
                r.bytes_up,
                r.bytes_down
            );
        }
        s += &format!(
            "final test {}, best test {} at round {}, bytes up {}, bytes down {}\n",
            fmt(self.final_mean_test),
            fmt(self.best_mean_test),
            self.best_round.map_or_else(|| "-".to_string(), |r| r.to_string()),
            self.bytes_up,
            self.bytes_down
        );
        s
    }
}

/// Summarizes the metrics CSV in `dir`.
pub fn report(dir: &Path) -> Result<Report, ExperimentError> {
    let path = dir.join(METRICS_FILE);
    let bytes = std::fs::read(&path).map_err(io_err(&path))?;
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let header = reader.headers().map_err(|e| artifact_err(&path, e))?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(artifact_err(&path, "unexpected header"));
    }
    let col = |name: &str| METRICS_HEADER.iter().position(|h| *h == name).expect("known column");
    let (c_round, c_train, c_test, c_up, c_down) =
        (col("round"), col("metric_train"), col("metric_test"), col("bytes_up"), col("bytes_down"));

    struct Acc {
        train: (f64, usize),
        test: (f64, usize),
        up: usize,
        down: usize,
    }
    let mut rounds: Vec<(usize, Acc)> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| artifact_err(&path, e))?;
        let bad = |what: &str| artifact_err(&path, format!("row {}: bad {what}", line + 2));
        let int = |i: usize, what: &str| rec[i].parse::<usize>().map_err(|_| bad(what));
        let opt = |i: usize, what: &str| -> Result<Option<f64>, ExperimentError> {
            match &rec[i] {
                "" => Ok(None),
                s => s.parse::<f64>().map(Some).map_err(|_| bad(what)),
            }
        };
        let round = int(c_round, "round")?;
        if rounds.last().is_none_or(|(r, _)| *r != round) {
            rounds.push((
                round,
                Acc {
                    train: (0.0, 0),
                    test: (0.0, 0),
                    up: 0,
                    down: 0,
                },
            ));
        }
        let acc = &mut rounds.last_mut().expect("just pushed").1;
        if let Some(v) = opt(c_train, "metric_train")? {
            acc.train = (acc.train.0 + v, acc.train.1 + 1);
        }
        if let Some(v) = opt(c_test, "metric_test")? {
            acc.test = (acc.test.0 + v, acc.test.1 + 1);
        }
        acc.up += int(c_up, "bytes_up")?;
        acc.down += int(c_down, "bytes_down")?;
    }
    let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
    let rounds: Vec<RoundSummary> = rounds
        .into_iter()
        .map(|(round, a)| RoundSummary {
            round,
            mean_train: mean(a.train),
            mean_test: mean(a.test),
            bytes_up: a.up,
            bytes_down: a.down,
        })
        .collect();
    let best = best_of(rounds.iter().map(|r| r.mean_test));
    Ok(Report {
        final_mean_test: rounds.last().and_then(|r| r.mean_test),
        best_round: best.map(|(i, _)| rounds[i].round),
        best_mean_test: best.map(|(_, v)| v),
        bytes_up: rounds.iter().map(|r| r.bytes_up).sum(),
        bytes_down: rounds.iter().map(|r| r.bytes_down).sum(),
        rounds,
    })
}
