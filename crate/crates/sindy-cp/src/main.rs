//! Scenario CLI: simulate streams, run online forecasting, and sweep
//! coverage, feature importance, and coefficient intervals. Every artifact
//! embeds the resolved configuration in its header; the exit code is 0
//! only when all configured checks pass.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use sindy_cp::scenarios::{
    parse_config, run_coefficient_sweep, run_coverage_sweep, run_forecast_scenario,
    run_importance_sweep, run_simulate, RunArtifacts, ScenarioConfig,
};

#[derive(Parser)]
#[command(name = "sindy-cp", version, about = "Sparse dynamics discovery with conformal intervals")]
struct Cli {
    /// Scenario configuration file (key = value lines); defaults otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the configured number of noise realizations.
    #[arg(long, global = true)]
    realizations: Option<usize>,

    /// Output directory for CSV artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write one simulated clean/noisy stream.
    Simulate,
    /// Run the online conformal forecasters and log per-step intervals.
    Forecast,
    /// Sweep coverage targets and noise levels for both methods.
    SweepCoverage,
    /// Sweep data length for the three importance methods.
    SweepImportance,
    /// Sweep noise configurations for coefficient intervals.
    SweepCoefficients,
}

fn load_config(cli: &Cli) -> Result<ScenarioConfig, sindy_cp::Error> {
    let mut cfg = match &cli.config {
        Some(path) => parse_config(&fs::read_to_string(path)?)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(realizations) = cli.realizations {
        if realizations == 0 {
            return Err(sindy_cp::Error::Config("realizations must be >= 1".into()));
        }
        cfg.realizations = realizations;
    }
    Ok(cfg)
}

fn report(artifacts: &RunArtifacts) -> bool {
    for file in &artifacts.files {
        println!("wrote {}", file.display());
    }
    for check in &artifacts.checks {
        println!(
            "check {}: {} ({})",
            check.name,
            if check.passed { "PASS" } else { "FAIL" },
            check.detail
        );
    }
    artifacts.all_passed()
}

fn run(cli: &Cli) -> Result<bool, sindy_cp::Error> {
    let cfg = load_config(cli)?;
    let artifacts = match cli.cmd {
        Cmd::Simulate => run_simulate(&cfg, &cli.out)?,
        Cmd::Forecast => run_forecast_scenario(&cfg, &cli.out)?.artifacts,
        Cmd::SweepCoverage => run_coverage_sweep(&cfg, &cli.out)?.artifacts,
        Cmd::SweepImportance => run_importance_sweep(&cfg, &cli.out)?.artifacts,
        Cmd::SweepCoefficients => run_coefficient_sweep(&cfg, &cli.out)?.artifacts,
    };
    Ok(report(&artifacts))
}

fn main() -> ExitCode {
    let defaults = ScenarioConfig::default().echo_plain();
    let help: &'static str =
        Box::leak(format!("Config keys and defaults:\n{defaults}").into_boxed_str());
    let matches = Cli::command().after_help(help).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
