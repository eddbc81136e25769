//! Command-line entry point.
//!
//! Exit codes: 0 success (or a negative refinement verdict), 1 positive
//! refinement verdict (the pair is distinguishable), 2 usage or IO errors,
//! 3 internal invariant violations (including failed gradient checks).

mod commands;

use clap::{Args, Parser, Subcommand};
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(
    name = "ordnet",
    version,
    about = "Ordered topological network modeling toolkit"
)]
struct Cli {
    /// Emit machine-parseable JSON on stdout where applicable.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct SeedArg {
    /// RNG seed; falls back to the ORDNET_SEED environment variable.
    #[arg(long)]
    seed: Option<u64>,
}

impl SeedArg {
    fn resolve(&self) -> Result<u64, CliError> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var("ORDNET_SEED") {
            Ok(v) => v
                .parse()
                .map_err(|_| CliError::Usage(format!("ORDNET_SEED={v:?} is not an integer"))),
            Err(_) => Err(CliError::Usage(
                "a seed is required: pass --seed or set ORDNET_SEED".into(),
            )),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled dataset directory.
    Gen(commands::GenArgs),
    /// Train the model on a dataset split.
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint against the analytical baseline on a split.
    Eval(commands::EvalArgs),
    /// Run the color-refinement tests on a complex pair or fixture bundle.
    Wl(commands::WlArgs),
    /// Convert a scenario into its ordered complex and validate it.
    Complexify(commands::ComplexifyArgs),
    /// Check tape gradients against finite differences.
    Gradcheck(commands::GradcheckArgs),
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable files, malformed inputs: exit 2.
    Usage(String),
    /// A library invariant failed: exit 3.
    Internal(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Internal(m) => write!(f, "{m}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(format!("io: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => commands::run_gen(args, cli.json),
        Command::Train(args) => commands::run_train(args, cli.json),
        Command::Eval(args) => commands::run_eval(args, cli.json),
        Command::Wl(args) => commands::run_wl(args, cli.json),
        Command::Complexify(args) => commands::run_complexify(args, cli.json),
        Command::Gradcheck(args) => commands::run_gradcheck(args, cli.json),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Internal(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
