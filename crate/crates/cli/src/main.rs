use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qfei_cli::commands;
use qfei_cli::config::parse_override;
use qfei_cli::{CliError, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "qfei", version, about = "Quantile-function emulation and QFEI optimization experiments")]
struct Cli {
    /// TOML experiment configuration; every key has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Experiment directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Replace existing outputs of the command.
    #[arg(long, global = true)]
    force: bool,

    /// Override a configuration key, e.g. `--set emulator.q=3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true, value_parser = parse_override)]
    overrides: Vec<(String, toml::Value)>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample the learning and study sets.
    Design,
    /// Simulate the learning set and write its empirical quantile functions.
    Simulate {
        /// Keep inputs already complete in the archive.
        #[arg(long)]
        resume: bool,
    },
    /// Fit the quantile-function emulator.
    Train,
    /// Error tables on the study set and the direct-optimization report.
    Evaluate,
    /// Repeated adaptive optimization runs.
    Qfei {
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// Plot-ready CSV series.
    Figures,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut overrides = cli.overrides;
    if let Some(seed) = cli.seed {
        let seed = i64::try_from(seed).map_err(|_| qfei_cli::error::config("--seed must fit in 63 bits"))?;
        overrides.push(("seed".into(), toml::Value::Integer(seed)));
    }
    if let Some(out) = &cli.out {
        overrides.push(("out".into(), toml::Value::String(out.to_string_lossy().into_owned())));
    }
    if let Command::Qfei { repetitions: Some(r) } = cli.command {
        overrides.push(("qfei.repetitions".into(), toml::Value::Integer(r as i64)));
    }
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Design => commands::design(&cfg, cli.force),
        Command::Simulate { resume } => commands::simulate_learning(&cfg, cli.force, resume),
        Command::Train => commands::train(&cfg, cli.force),
        Command::Evaluate => commands::evaluate(&cfg, cli.force),
        Command::Qfei { .. } => commands::qfei(&cfg, cli.force).map(|_| ()),
        Command::Figures => commands::figures(&cfg, cli.force),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
