//! `reachguard` - pipeline driver for the runway-taxiing safety toolkit.
//!
//! Every subcommand reads one TOML config (defaults apply for anything
//! omitted), runs a pipeline stage into the run directory, and appends a
//! manifest record. Exit codes: 0 success, 2 configuration error, 3 missing
//! prerequisite artifact, 4 numeric divergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reachguard_core::pipeline::{self, CalibrateOpts};
use reachguard_core::PipelineConfig;

#[derive(Parser)]
#[command(name = "reachguard", version, about = "Reachability-based safety pipeline for a vision-guided taxiing controller")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration file (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory that receives artifacts and the manifest.
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,
    /// Override the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Additional `section.key=value` config overrides.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> reachguard_core::Result<PipelineConfig> {
        let text = match &self.config {
            Some(path) => std::fs::read_to_string(path).map_err(|e| {
                reachguard_core::Error::Config(format!("cannot read {}: {e}", path.display()))
            })?,
            None => String::new(),
        };
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("pipeline.seed={seed}"));
        }
        PipelineConfig::parse_with_overrides(&text, &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the nominal state-labeled training corpus.
    Render(Common),
    /// Train the pose estimator on the nominal corpus.
    TrainVbc(Common),
    /// Precompute closed-loop policies and solve the grid tubes.
    SolveGrid(Common),
    /// Train the neural reachable-tube value network.
    TrainNrt(Common),
    /// Mine labeled pools, evaluation sets, and failure traces.
    Mine(Common),
    /// Train the failure-detection classifier.
    TrainFd(Common),
    /// Conformally calibrate the detector threshold.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Override the miscoverage level from the config.
        #[arg(long)]
        alpha: Option<f64>,
        /// Dataset whose positive samples join the calibration set.
        #[arg(long)]
        privileged: Option<PathBuf>,
    },
    /// Evaluate the calibrated detector per environment.
    EvalFd(Common),
    /// Measure empirical unsafe fractions of the gated pipeline.
    FallbackEval {
        #[command(flatten)]
        common: Common,
        /// Also run the bare controller on the same states and report the
        /// relative reduction.
        #[arg(long)]
        compare: bool,
    },
    /// Retrain the estimator on mined failures.
    Retrain(Common),
    /// Emit value-slice rasters, difference images, and overlays.
    Report(Common),
    /// Run every stage in order.
    RunAll(Common),
}

fn run() -> reachguard_core::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Render(c) => pipeline::cmd_render(&c.load()?, &c.out),
        Command::TrainVbc(c) => pipeline::cmd_train_vbc(&c.load()?, &c.out),
        Command::SolveGrid(c) => pipeline::cmd_solve_grid(&c.load()?, &c.out),
        Command::TrainNrt(c) => pipeline::cmd_train_nrt(&c.load()?, &c.out),
        Command::Mine(c) => pipeline::cmd_mine(&c.load()?, &c.out),
        Command::TrainFd(c) => pipeline::cmd_train_fd(&c.load()?, &c.out),
        Command::Calibrate { common, alpha, privileged } => {
            let opts = CalibrateOpts { alpha: *alpha, privileged: privileged.clone() };
            let result = pipeline::cmd_calibrate(&common.load()?, &common.out, &opts)?;
            println!(
                "q_hat = {:.6} (alpha {}, {} calibration positives{})",
                result.q_hat,
                result.alpha,
                result.n,
                if result.is_degenerate() { ", degenerate" } else { "" }
            );
            Ok(())
        }
        Command::EvalFd(c) => pipeline::cmd_eval_fd(&c.load()?, &c.out),
        Command::FallbackEval { common, compare } => {
            pipeline::cmd_fallback_eval(&common.load()?, &common.out, *compare)
        }
        Command::Retrain(c) => pipeline::cmd_retrain(&c.load()?, &c.out),
        Command::Report(c) => pipeline::cmd_report(&c.load()?, &c.out),
        Command::RunAll(c) => pipeline::run_all(&c.load()?, &c.out),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
