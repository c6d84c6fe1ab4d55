//! Batch front end: parse a scenario configuration, run the named
//! experiment, and write deterministic artifacts into an output directory.
//!
//! Every subcommand reads the same line-oriented config format and maps to
//! one experiment kind; the config's `experiment.kind` must agree with the
//! subcommand so that a config file is self-describing. Exit status is 0
//! for a completed run (including runs whose verdict is FAIL — the verdict
//! is data, not an error), 1 for runtime failures, and 2 for usage or
//! configuration errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smplab_core::config::{parse_config, Config, ExperimentKind};
use smplab_core::error::Error;
use smplab_core::runner::run_experiment;

#[derive(Parser)]
#[command(
    name = "smplab",
    version,
    about = "Simulation and optimality toolkit for boundary-controlled stochastic heat equations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file (line-oriented `section.key = value`).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory for artifacts (created if missing).
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Override the seed from the config; the manifest echoes the
    /// effective value.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the state equation under a held control and dump paths.
    Simulate(RunArgs),
    /// Solve the adjoint backward equation and dump its paths and
    /// regression diagnostics.
    Adjoint(RunArgs),
    /// Cross-validate the adjoint gradient against finite differences.
    GradCheck(RunArgs),
    /// Measure perturbation decay rates for short control spikes.
    SpikeRates(RunArgs),
    /// Run an iterative optimizer (projected gradient or successive
    /// approximations).
    Optimize(RunArgs),
    /// Test the pointwise maximization condition along a control.
    VerifySmp(RunArgs),
    /// Profile the adjoint's growth near the terminal time.
    Regularity(RunArgs),
    /// Check the scenario against the structural hypotheses and print the
    /// report.
    Validate(RunArgs),
}

impl Command {
    fn kind(&self) -> ExperimentKind {
        match self {
            Command::Simulate(_) => ExperimentKind::Simulate,
            Command::Adjoint(_) => ExperimentKind::Adjoint,
            Command::GradCheck(_) => ExperimentKind::GradCheck,
            Command::SpikeRates(_) => ExperimentKind::SpikeRates,
            Command::Optimize(_) => ExperimentKind::Optimize,
            Command::VerifySmp(_) => ExperimentKind::VerifySmp,
            Command::Regularity(_) => ExperimentKind::Regularity,
            Command::Validate(_) => ExperimentKind::Validate,
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::Simulate(a)
            | Command::Adjoint(a)
            | Command::GradCheck(a)
            | Command::SpikeRates(a)
            | Command::Optimize(a)
            | Command::VerifySmp(a)
            | Command::Regularity(a)
            | Command::Validate(a) => a,
        }
    }
}

fn load_config(args: &RunArgs, expected: ExperimentKind) -> Result<Config, String> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| format!("cannot read {}: {e}", args.config.display()))?;
    let mut config = parse_config(&text).map_err(|e| match e {
        Error::Config(errors) => {
            let mut msg = format!("{} configuration error(s):", errors.len());
            for err in &errors {
                msg.push_str("\n  ");
                msg.push_str(&err.to_string());
            }
            msg
        }
        other => other.to_string(),
    })?;
    if config.kind != expected {
        return Err(format!(
            "config declares experiment.kind = {} but the subcommand is {}",
            config.kind.as_str(),
            expected.as_str()
        ));
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args = cli.command.args();
    let config = match load_config(args, cli.command.kind()) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    match run_experiment(&config, &args.out) {
        Ok(summary) => {
            for line in &summary.lines {
                println!("{line}");
            }
            println!("artifacts = {}", args.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
