use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dacbf::config::PipelineConfig;
use dacbf::pipeline::{Command, Pipeline};
use dacbf::Error;

#[derive(Parser)]
#[command(name = "dacbf", version, about = "Data-attributed adaptive CBF pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Simulate labeled episodes.
    Generate,
    /// Train the ensemble with checkpoints.
    Train,
    /// Influence scores of every training sample.
    Attribute,
    /// Select samples to remove.
    Curate,
    /// Retrain on each curated dataset.
    Retrain,
    /// Error tables, sweep and histogram.
    Evaluate,
    /// Safety constants, budgets and certified sets.
    Certify,
    /// Closed-loop benchmark.
    Simulate,
    /// Assemble report.md from all artifacts.
    Report,
    /// Every stage in order.
    All,
    /// Print the effective configuration.
    Config,
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Cmd::Config = cli.command {
        print!("{}", cfg.to_toml_string()?);
        return Ok(());
    }
    let p = Pipeline::new(cfg, &cli.out)?;
    let cmd = match cli.command {
        Cmd::Generate => Command::Generate,
        Cmd::Train => Command::Train,
        Cmd::Attribute => Command::Attribute,
        Cmd::Curate => Command::Curate,
        Cmd::Retrain => Command::Retrain,
        Cmd::Evaluate => Command::Evaluate,
        Cmd::Certify => Command::Certify,
        Cmd::Simulate => Command::Simulate,
        Cmd::Report => Command::Report,
        Cmd::All => return p.run_all(),
        Cmd::Config => unreachable!(),
    };
    p.run(cmd)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
