use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mvpolymer_cli::config::{parse_grids_file, parse_run_config, Experiment};
use mvpolymer_cli::diagnose::diagnose;
use mvpolymer_cli::error::{CliError, CliResult};
use mvpolymer_cli::output::write_csv;
use mvpolymer_cli::selftest::{cmd_selftest, Injection, DEFAULT_BUDGET};
use mvpolymer_cli::simulate::cmd_simulate;
use mvpolymer_cli::sweep::cmd_sweep;

#[derive(Parser)]
#[command(name = "mvpolymer", version, about = "Directed polymer endpoint simulations and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trajectory per seed and write per-step diagnostics.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate free energy, Lyapunov exponent and localization statistics
    /// for several inverse temperatures.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check transport and metric invariants on random instances.
    Selftest {
        /// Instances per property (the exact-metric property uses a fifth).
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: usize,
        /// Deliberately break a component to see the suite catch it.
        #[arg(long, value_enum)]
        inject: Option<InjectArg>,
    },
    /// Localization and clustering statistics of a saved measure.
    Diagnose {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        grids: PathBuf,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum InjectArg {
    BrokenPlan,
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { config, out } => {
            let text = read(&config)?;
            let cfg = parse_run_config(&text, &config.display().to_string(), Experiment::Simulate)?;
            cmd_simulate(&cfg, &text, &out)
        }
        Command::Sweep { config, out } => {
            let text = read(&config)?;
            let cfg = parse_run_config(&text, &config.display().to_string(), Experiment::Sweep)?;
            cmd_sweep(&cfg, &text, &out)
        }
        Command::Selftest { budget, inject } => cmd_selftest(
            budget,
            inject.map(|i| match i {
                InjectArg::BrokenPlan => Injection::BrokenPlan,
            }),
        ),
        Command::Diagnose { snapshot, grids, out } => {
            let grids = parse_grids_file(&read(&grids)?, &grids.display().to_string())?;
            let rows = diagnose(&read(&snapshot)?, &grids)?;
            let header = ["layer", "statistic", "value"].map(String::from);
            let rows: Vec<Vec<String>> = rows.into_iter().map(Vec::from).collect();
            match out {
                Some(path) => write_csv(&path, &header, &rows),
                None => {
                    let mut w = csv::Writer::from_writer(std::io::stdout());
                    let io = |e: csv::Error| CliError::Config(format!("stdout: {e}"));
                    w.write_record(&header).map_err(io)?;
                    for r in &rows {
                        w.write_record(r).map_err(io)?;
                    }
                    w.flush().map_err(|e| CliError::Config(format!("stdout: {e}")))
                }
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
