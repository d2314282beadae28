use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use netkernel_cli::config::{load_config, ExperimentKind};
use netkernel_cli::error::CliError;

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "kebab-case")]
enum Command {
    Simulate,
    FitAls,
    FitOrals,
    FitThreefold,
    StudyConvergence,
    StudyNoise,
    StudyRegularizers,
    StudyRip,
    Kuramoto,
    LeaderFollower,
    MultitypeSelect,
    Benchmark,
}

impl Command {
    fn kind(self) -> ExperimentKind {
        match self {
            Command::Simulate => ExperimentKind::Simulate,
            Command::FitAls => ExperimentKind::FitAls,
            Command::FitOrals => ExperimentKind::FitOrals,
            Command::FitThreefold => ExperimentKind::FitThreefold,
            Command::StudyConvergence => ExperimentKind::StudyConvergence,
            Command::StudyNoise => ExperimentKind::StudyNoise,
            Command::StudyRegularizers => ExperimentKind::StudyRegularizers,
            Command::StudyRip => ExperimentKind::StudyRip,
            Command::Kuramoto => ExperimentKind::Kuramoto,
            Command::LeaderFollower => ExperimentKind::LeaderFollower,
            Command::MultitypeSelect => ExperimentKind::MultitypeSelect,
            Command::Benchmark => ExperimentKind::Benchmark,
        }
    }
}

/// Joint graph and kernel inference experiments.
#[derive(Debug, Parser)]
#[command(name = "netkernel", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; falls back to NETKERNEL_THREADS, then all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn threads(arg: Option<usize>) -> Result<Option<usize>, CliError> {
    if arg.is_some() {
        return Ok(arg);
    }
    match std::env::var("NETKERNEL_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("NETKERNEL_THREADS={v} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn main_inner(args: Args) -> Result<PathBuf, CliError> {
    if let Some(k) = threads(args.threads)? {
        if k == 0 {
            return Err(CliError::Config("thread count must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let mut cfg = load_config(&args.config)?;
    if cfg.kind() != args.command.kind() {
        return Err(CliError::Config(format!(
            "config describes {:?}, not {:?}",
            cfg.kind(),
            args.command.kind()
        )));
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    netkernel_cli::run(&cfg, &args.out)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match main_inner(args) {
        Ok(summary) => {
            println!("{}", summary.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
