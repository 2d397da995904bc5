//! `recall`: command-line front end for perturbed image memory experiments.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use recall_core::experiment::{render_summary, ExperimentConfig, ExperimentReport, Runner};
use recall_core::store::Metric;
use recall_core::Error;

#[derive(Parser)]
#[command(name = "recall", version, about = "Image memory with perturbed encoding and nearest-neighbor recall")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured dataset as PNGs plus a manifest.
    Ingest(RunArgs),
    /// Write the memory-time perturbed images plus a manifest.
    Perturb(RunArgs),
    /// Memorize the memorize split and write it as EMB1.
    Memorize(RunArgs),
    /// Calibrate the repeat-detection threshold.
    Calibrate(RunArgs),
    /// Forced choice between seen and novel images.
    EvalFc(RunArgs),
    /// Streaming repeat detection with a calibrated threshold.
    EvalRepeat(RunArgs),
    /// Forced choice over the configured noise and blur grid.
    Sweep(RunArgs),
    /// 2-D PCA scatter of the memory encodings.
    Pca(RunArgs),
    /// Print a summary of report files.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    L2,
    Cosine,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed_split: Option<u64>,
    #[arg(long)]
    seed_perturbation: Option<u64>,
    #[arg(long)]
    seed_stream: Option<u64>,
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    #[arg(long)]
    normalize: bool,
}

impl RunArgs {
    fn runner(&self) -> Result<Runner, Error> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed_split {
            config.seeds.split = s;
        }
        if let Some(s) = self.seed_perturbation {
            config.seeds.perturbation = s;
        }
        if let Some(s) = self.seed_stream {
            config.seeds.stream = s;
        }
        if let Some(m) = self.metric {
            config.metric = match m {
                MetricArg::L2 => Metric::L2,
                MetricArg::Cosine => Metric::Cosine,
            };
        }
        config.normalize |= self.normalize;
        if self.jobs == Some(0) {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        Runner::new(config, self.out.clone(), self.jobs)
    }
}

/// Sweep finished, but some grid cells failed.
const EXIT_PARTIAL: u8 = 8;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Fraction(_) | Error::Parse { .. } => 3,
        Error::Io { .. } | Error::Csv(_) => 4,
        Error::ExternalUnavailable(_) | Error::ProtocolViolation(_) | Error::ExternalEncoder { .. } => 6,
        Error::DegenerateCalibration { .. } => 7,
        _ => 5,
    }
}

type TaskFn = fn(&Runner) -> Result<ExperimentReport, Error>;

fn run(command: Command) -> Result<u8, Error> {
    let (args, task): (RunArgs, TaskFn) = match command {
        Command::Report { reports } => {
            for path in reports {
                let text = fs::read_to_string(&path).map_err(|source| Error::Io {
                    path: path.clone(),
                    source,
                })?;
                print!("{}", render_summary(&text)?);
            }
            return Ok(0);
        }
        Command::Ingest(a) => (a, Runner::ingest),
        Command::Perturb(a) => (a, Runner::perturb),
        Command::Memorize(a) => (a, Runner::memorize),
        Command::Calibrate(a) => (a, Runner::calibrate),
        Command::EvalFc(a) => (a, Runner::forced_choice),
        Command::EvalRepeat(a) => (a, Runner::repeat_detection),
        Command::Sweep(a) => (a, Runner::sweep),
        Command::Pca(a) => (a, Runner::pca),
    };
    let runner = args.runner()?;
    let report = task(&runner)?;
    let path = runner.output_dir().join(report.file_name());
    println!("{}", serde_json::json!({ "report": path, "artifacts": report.artifacts }));

    let failed: Vec<String> = report
        .sweep
        .iter()
        .flatten()
        .filter_map(|c| c.error.as_ref().map(|e| format!("{} sigma={} {}: {e}", c.kind, c.sigma, c.category)))
        .collect();
    if !failed.is_empty() {
        eprintln!(
            "{}",
            serde_json::json!({ "error": "partial_failure", "exit_code": EXIT_PARTIAL, "failed_cells": failed })
        );
        return Ok(EXIT_PARTIAL);
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let code = exit_code(&e);
            eprintln!(
                "{}",
                serde_json::json!({ "error": e.kind(), "message": e.to_string(), "exit_code": code })
            );
            ExitCode::from(code)
        }
    }
}
