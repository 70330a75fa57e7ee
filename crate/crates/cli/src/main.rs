//! `sdde` — experiment runner for the delayed-plate simulation toolkit.
//!
//! One TOML experiment file fully determines each run; the command line
//! only selects the experiment kind, the configuration source, and the
//! output directory.  Artifacts are plot-ready CSV files plus an
//! appended `summary.jsonl` with one record per run, and identical
//! configurations (including seeds) reproduce byte-identical files.
//!
//! Exit codes: 0 when the configured tolerance was met, 1 when the run
//! finished but the tolerance failed (or the measurement could not be
//! completed), 2 for usage or configuration errors.
//!
//! Parallel sweeps share a global worker pool sized by the
//! `RAYON_NUM_THREADS` environment variable (default: all cores).

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sdde_core::config::ExperimentConfig;
use sdde_core::presets;
use serde_json::json;

use output::OutDir;

#[derive(Parser)]
#[command(name = "sdde", version, about = "Spectral simulator and verification runner for second-order equations with state-dependent delay")]
struct Cli {
    /// List the bundled experiment configurations and exit.
    #[arg(long, exclusive = true)]
    list: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct RunArgs {
    /// Path of a TOML experiment file.
    #[arg(long, value_name = "FILE", conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Name of a bundled configuration (see --list).
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,

    /// Directory for CSV and JSON-lines artifacts (created if missing).
    #[arg(long, value_name = "DIR", default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the configured model and write trace artifacts.
    Simulate(RunArgs),
    /// Audit the energy ledger at the configured step and its half.
    EnergyCheck(RunArgs),
    /// Sweep damping/horizon and compare long-run tail radii.
    Dissipativity(RunArgs),
    /// Fit the contraction rate of close trajectory pairs.
    QuasiStability(RunArgs),
    /// Measure trajectory distance against history-perturbation size.
    Lipschitz(RunArgs),
    /// Check the strong-form residual order under step halving.
    Residual(RunArgs),
    /// Characteristic roots of the scalar delayed oscillator.
    OdeStability(RunArgs),
    /// Correlation dimension of the sampled attractor cloud.
    AttractorDim(RunArgs),
    /// Decay rate of a perturbation bundle toward the reference run.
    AttractionRate(RunArgs),
    /// Self-convergence order across halved steps.
    Convergence(RunArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::EnergyCheck(_) => "energy-check",
            Command::Dissipativity(_) => "dissipativity",
            Command::QuasiStability(_) => "quasi-stability",
            Command::Lipschitz(_) => "lipschitz",
            Command::Residual(_) => "residual",
            Command::OdeStability(_) => "ode-stability",
            Command::AttractorDim(_) => "attractor-dim",
            Command::AttractionRate(_) => "attraction-rate",
            Command::Convergence(_) => "convergence",
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::Simulate(a)
            | Command::EnergyCheck(a)
            | Command::Dissipativity(a)
            | Command::QuasiStability(a)
            | Command::Lipschitz(a)
            | Command::Residual(a)
            | Command::OdeStability(a)
            | Command::AttractorDim(a)
            | Command::AttractionRate(a)
            | Command::Convergence(a) => a,
        }
    }
}

/// Load the experiment description from `--config` or `--preset`.
fn load_config(args: &RunArgs) -> Result<(ExperimentConfig, String), String> {
    match (&args.config, &args.preset) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            let cfg = ExperimentConfig::parse(&text).map_err(|e| e.to_string())?;
            Ok((cfg, path.display().to_string()))
        }
        (None, Some(name)) => {
            let cfg = presets::load(name).map_err(|e| e.to_string())?;
            Ok((cfg, format!("preset:{name}")))
        }
        (None, None) => Err("one of --config or --preset is required".into()),
        (Some(_), Some(_)) => unreachable!("clap rejects conflicting sources"),
    }
}

fn dispatch(
    command: &Command,
    cfg: &ExperimentConfig,
    source: &str,
    out: &OutDir,
) -> commands::CmdResult {
    match command {
        Command::Simulate(_) => commands::simulate(cfg, source, out),
        Command::EnergyCheck(_) => commands::energy_check(cfg, source, out),
        Command::Dissipativity(_) => commands::dissipativity(cfg, source, out),
        Command::QuasiStability(_) => commands::quasi_stability(cfg, source, out),
        Command::Lipschitz(_) => commands::lipschitz(cfg, source, out),
        Command::Residual(_) => commands::residual(cfg, source, out),
        Command::OdeStability(_) => commands::ode_stability(cfg, source, out),
        Command::AttractorDim(_) => commands::attractor_dim(cfg, source, out),
        Command::AttractionRate(_) => commands::attraction(cfg, source, out),
        Command::Convergence(_) => commands::convergence(cfg, source, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.list {
        for name in presets::names() {
            println!("{name}");
        }
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: a subcommand or --list is required (see --help)");
        return ExitCode::from(2);
    };
    let args = command.args();

    let (cfg, source) = match load_config(args) {
        Ok(pair) => pair,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let out = match OutDir::create(&args.out_dir) {
        Ok(out) => out,
        Err(e) => {
            eprintln!("error: cannot create {}: {e}", args.out_dir.display());
            return ExitCode::from(2);
        }
    };

    match dispatch(&command, &cfg, &source, &out) {
        Ok(true) => {
            println!("{}: pass", command.name());
            ExitCode::SUCCESS
        }
        Ok(false) => {
            println!("{}: fail (see summary.jsonl)", command.name());
            ExitCode::from(1)
        }
        Err(e) => {
            // Configuration problems surfacing from the build are usage
            // errors; anything later is a failed measurement.
            let code = match &e {
                sdde_core::Error::Config(_) => 2,
                _ => 1,
            };
            let _ = out.record(&json!({
                "experiment": command.name(),
                "source": source,
                "error": e.to_string(),
                "pass": false,
            }));
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}
