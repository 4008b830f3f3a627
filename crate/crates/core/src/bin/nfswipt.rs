//! Command-line driver for the experiments in `nfswipt::harness`.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 no feasible run.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nfswipt::harness::{config_from_json, run_and_write, Algorithm, ExperimentConfig, ExperimentKind, HarnessError};

#[derive(Parser)]
#[command(name = "nfswipt", version, about = "Near-field SWIPT hybrid beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample one scenario and write it as JSON.
    Scenario(Common),
    /// PTL convergence traces.
    Convergence(Common),
    /// Transmit power against the rate target.
    SweepQos(Common),
    /// Transmit power against the energy target.
    SweepEnergy(Common),
    /// Information and energy-beam power with a random analog precoder.
    EnergyBeamPower(Common),
    /// Rate against smallest harvested power at a fixed budget.
    ReRegion(Common),
    /// Normalized received power maps for near-field and far-field designs.
    Spectrum(Common),
}

#[derive(Args)]
struct Common {
    /// JSON file overriding the experiment defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated algorithm labels, e.g. `ptl,two-stage`.
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<Algorithm>>,
    #[arg(long)]
    antennas: Option<usize>,
    #[arg(long)]
    rf_chains: Option<usize>,
}

fn build_config(kind: ExperimentKind, args: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
            config_from_json(kind, &text)?
        }
        None => ExperimentConfig::for_kind(kind),
    };
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.clone();
    }
    if let Some(a) = &args.algorithms {
        cfg.algorithms = a.clone();
    }
    if let Some(m) = args.antennas {
        cfg.system.num_antennas = m;
    }
    if let Some(r) = args.rf_chains {
        cfg.system.num_rf_chains = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_scenario(args: &Common) -> Result<(), HarnessError> {
    let cfg = build_config(ExperimentKind::SweepQos, args)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    for &seed in &cfg.seeds {
        let path = cfg.out_dir.join(format!("scenario_{seed}.json"));
        std::fs::write(&path, cfg.scenario(seed)?.to_json())?;
        println!("{}", path.display());
    }
    Ok(())
}

fn exit_code(e: &HarnessError) -> u8 {
    match e {
        HarnessError::Config(_) | HarnessError::Channel(_) | HarnessError::Json(_) => 2,
        HarnessError::Io(_) | HarnessError::Csv(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Scenario(a) => {
            return match write_scenario(a) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit_code(&e))
                }
            };
        }
        Command::Convergence(a) => (ExperimentKind::Convergence, a),
        Command::SweepQos(a) => (ExperimentKind::SweepQos, a),
        Command::SweepEnergy(a) => (ExperimentKind::SweepEnergy, a),
        Command::EnergyBeamPower(a) => (ExperimentKind::EnergyBeamPower, a),
        Command::ReRegion(a) => (ExperimentKind::ReRegion, a),
        Command::Spectrum(a) => (ExperimentKind::Spectrum, a),
    };
    let result = build_config(kind, args).and_then(|cfg| run_and_write(&cfg));
    match result {
        Ok((out, files)) => {
            for f in &files {
                println!("{}", f.display());
            }
            let feasible = out.metrics.iter().filter(|r| r.feasible).count();
            eprintln!("{}: {feasible}/{} runs met every target", kind.name(), out.metrics.len());
            if out.all_infeasible() {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
