use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use osteo_cli::{config, parse_fault, run_dir, CliError, CliResult};

#[derive(Parser)]
#[command(name = "osteo", version, about = "Knee X-ray osteoporosis classification pipeline")]
struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: a hash-timestamp directory under `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate, audit, balance and split the dataset roots.
    Ingest,
    /// Train a model and record checkpoints and learning curves.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train every (lr, batch) cell and report the best.
    Gridsearch,
    /// Finite-difference check of every primitive and the whole model.
    Gradcheck {
        /// Scale the backward pass of one op, e.g. `relu:1.5`.
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Write a synthetic two-class texture dataset.
    Synth,
}

fn set_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("OSTEO_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("OSTEO_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    set_threads()?;
    let settings = config::load(cli.config.as_deref(), cli.seed)?;
    let fault = match &cli.command {
        Command::Gradcheck { corrupt: Some(spec) } => Some(parse_fault(spec)?),
        _ => None,
    };
    if let Command::Synth = cli.command {
        let dir = cli.out.ok_or_else(|| CliError::Config("synth needs --out".into()))?;
        return osteo_cli::cmd_synth(&settings, &dir);
    }
    let dir = run_dir(&settings, cli.out.as_deref())?;
    match cli.command {
        Command::Ingest => osteo_cli::cmd_ingest(&settings, &dir),
        Command::Train { resume } => osteo_cli::cmd_train(&settings, &dir, resume.as_deref()),
        Command::Eval { checkpoint } => osteo_cli::cmd_eval(&settings, &dir, checkpoint.as_deref()),
        Command::Gridsearch => osteo_cli::cmd_gridsearch(&settings, &dir),
        Command::Gradcheck { .. } => osteo_cli::cmd_gradcheck(&settings, &dir, fault),
        Command::Synth => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
