use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use gapbound_cli::config::{ExperimentConfig, GridConfig};
use gapbound_cli::{run, validate, Experiment, Severity, THREADS_ENV};

/// Error bounds for band-projected quantum dynamics.
///
/// Times are in units with ħ = 1, so a time t pairs with energies as
/// configured (t·Δ₀ is dimensionless). Set GAPBOUND_THREADS to cap the
/// number of worker threads.
#[derive(Parser)]
#[command(name = "gapbound", version, about, long_about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write one CSV per trace plus a JSON summary.
    Run {
        experiment: Experiment,
        #[command(flatten)]
        options: Options,
    },
    /// Report configuration problems without running anything.
    Validate {
        experiment: Option<Experiment>,
        #[command(flatten)]
        options: Options,
    },
    /// List the available experiments.
    ListExperiments,
}

#[derive(Args)]
struct Options {
    /// TOML config file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Gap of the unperturbed band (energy).
    #[arg(long)]
    delta0: Option<f64>,
    /// Comma-separated list of log10(Δ₀) values (pxp sweep).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    delta0_log10: Option<Vec<f64>>,
    /// Rabi frequency Ω (energy).
    #[arg(long)]
    omega: Option<f64>,
    /// Seed for the random banded model.
    #[arg(long)]
    seed: Option<u64>,
    /// Chain length (pxp).
    #[arg(long = "L")]
    length: Option<usize>,
    #[arg(long)]
    n_bands: Option<usize>,
    #[arg(long)]
    levels_per_band: Option<usize>,
    /// Nominal band spacing in units of ‖V‖ (random banded).
    #[arg(long)]
    gap_ratio: Option<f64>,
    /// Final time of the uniform grid starting at t = 0.
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    n_points: Option<usize>,
    /// Directory for CSV and JSON artifacts [default: out].
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// c in the universal-bound slack factor (1 + c‖V‖/Δ₀) [default: 8].
    #[arg(long)]
    bound_slack: Option<f64>,
    /// k in the bound horizon t ≤ k·Δ₀/‖V‖² [default: 0.1].
    #[arg(long)]
    horizon_factor: Option<f64>,
    /// c in the remainder certificate factor (1 + c‖V‖/Δ₀) [default: 4].
    #[arg(long)]
    remainder_slack: Option<f64>,
}

impl Options {
    fn into_config(self, experiment: Option<Experiment>) -> anyhow::Result<ExperimentConfig> {
        let file = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        let flags = ExperimentConfig {
            experiment,
            delta0: self.delta0,
            delta0_log10: self.delta0_log10,
            omega: self.omega,
            seed: self.seed,
            length: self.length,
            n_bands: self.n_bands,
            levels_per_band: self.levels_per_band,
            gap_ratio: self.gap_ratio,
            out_dir: self.out_dir,
            bound_slack: self.bound_slack,
            horizon_factor: self.horizon_factor,
            remainder_slack: self.remainder_slack,
            grid: GridConfig {
                t_end: self.t_end,
                n_points: self.n_points,
            },
            band: None,
        };
        Ok(file.overridden_by(flags))
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {value:?}"))?;
    if threads == 0 {
        bail!("{THREADS_ENV} must be a positive integer, got 0");
    }
    gapbound::configure_threads(threads)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match cli.command {
        Command::ListExperiments => {
            for experiment in Experiment::ALL {
                let (t_end, n) = experiment.default_grid(None);
                let grid = match experiment {
                    Experiment::Pxp => format!("t_end = 12/omega, {n} points"),
                    _ => format!("t_end = {t_end}, {n} points"),
                };
                println!("{:<14} {} [{grid}]", experiment.name(), experiment.description());
            }
            ExitCode::SUCCESS
        }
        Command::Validate { experiment, options } => {
            let config = match options.into_config(experiment) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    return ExitCode::from(1);
                }
            };
            let diagnostics = validate(&config);
            for d in &diagnostics {
                println!("{d}");
            }
            if diagnostics.iter().any(|d| d.severity == Severity::Error) {
                ExitCode::from(1)
            } else {
                if diagnostics.is_empty() {
                    println!("ok");
                }
                ExitCode::SUCCESS
            }
        }
        Command::Run { experiment, options } => {
            let config = match options.into_config(Some(experiment)) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    return ExitCode::from(1);
                }
            };
            match run(&config) {
                Ok(summary) => {
                    for warning in &summary.warnings {
                        eprintln!("{warning}");
                    }
                    for path in &summary.artifacts {
                        println!("wrote {path}");
                    }
                    if summary.certificates_hold() {
                        println!("all certificates hold ({:.2} s)", summary.wall_clock_seconds);
                        ExitCode::SUCCESS
                    } else {
                        for failure in &summary.failures {
                            eprintln!("certificate failed: {failure}");
                        }
                        ExitCode::from(2)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}
