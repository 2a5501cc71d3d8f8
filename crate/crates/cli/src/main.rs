//! `fedssa`: synthesize data, run federations, ablate and diagnose.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 when training
//! diverges, 1 for anything else.

use clap::{Args, Parser, Subcommand};
use fedssa_core::experiment::{self, ExperimentConfig, ExperimentError, RunOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fedssa", version, about = "Graph federated learning simulator with clustered alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic graph or federation.
    Synth(Common),
    /// Build the configured federation and write it as one bundle.
    Partition(Common),
    /// Train and write metrics, diagnostics, checkpoint and summary.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write per-round client-by-client chordal distances.
        #[arg(long)]
        dump_distances: bool,
    },
    /// Run the semantic × structural ablation grid.
    Ablate(Common),
    /// Apply the theory checks to a saved run.
    Diagnose(Common),
    /// Summarize the metrics of a saved run.
    Report {
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), ExperimentError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.out.clone());
    Ok((cfg, out))
}

/// Writes to stdout, ignoring a closed pipe (as in `fedssa report | head`).
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json<T: serde::Serialize>(value: &T) {
    emit(&format!("{}\n", serde_json::to_string_pretty(value).expect("reports serialize")));
}

fn written(path: &Path) {
    emit(&format!("wrote {}\n", path.display()));
}

fn execute(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Synth(c) => {
            let (cfg, out) = load(&c)?;
            written(&experiment::synth(&cfg, &out)?);
        }
        Command::Partition(c) => {
            let (cfg, out) = load(&c)?;
            written(&experiment::partition(&cfg, &out)?);
        }
        Command::Run { common, dump_distances } => {
            let (cfg, out) = load(&common)?;
            let (summary, _) = experiment::run(&cfg, &out, RunOptions { dump_distances })?;
            print_json(&summary);
        }
        Command::Ablate(c) => {
            let (cfg, out) = load(&c)?;
            let rows = experiment::ablate(&cfg, &out)?;
            emit(&experiment::AblationRow::table(&rows));
        }
        Command::Diagnose(c) => {
            let (cfg, out) = load(&c)?;
            let report = experiment::diagnose(&cfg, &out)?;
            emit(&format!(
                "kl audit: {} satisfied, {} violated, {} outside the bound's precondition\n",
                report.kl_satisfied, report.kl_violated, report.kl_not_applicable
            ));
            let broken = report.lipschitz.iter().filter(|l| !l.holds).count();
            emit(&format!(
                "filter lipschitz: {} of {} clients within bound\n",
                report.lipschitz.len() - broken,
                report.lipschitz.len()
            ));
            print_json(&report.contraction);
        }
        Command::Report { out } => {
            emit(&experiment::report(&out)?.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
