use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use captain_cli::commands;
use captain_cli::config::Overrides;

#[derive(Parser)]
#[command(name = "captain", version, about = "Memorization mitigation experiments on latent diffusion samplers")]
struct Cli {
    /// More log output (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate once and write final_latent.caplat and result.json
    Run {
        #[command(flatten)]
        over: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep δ, τ and the init/injection toggles over seeds
    Ablate {
        #[command(flatten)]
        over: Overrides,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        workers: usize,
        #[command(flatten)]
        grid: commands::GridArgs,
    },
    /// Score candidate references and pick one
    SelectRef(commands::SelectArgs),
    /// Build or query a flat embedding index
    Index {
        #[command(subcommand)]
        action: commands::IndexAction,
    },
    /// Print perceptual hashes, optionally writing a corpus file
    Phash {
        paths: Vec<PathBuf>,
        #[arg(long)]
        corpus_out: Option<PathBuf>,
    },
    /// Dump an alignment trace and the window it implies
    Trace {
        #[command(flatten)]
        over: Overrides,
        /// Existing step,score CSV to analyse instead of running
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Run { over, out } => commands::run(&over, &out),
        Command::Ablate { over, out, workers, grid } => commands::ablate(&over, &out, workers, &grid),
        Command::SelectRef(args) => commands::select_ref(&args),
        Command::Index { action } => commands::index(&action),
        Command::Phash { paths, corpus_out } => commands::phash(&paths, corpus_out.as_deref()),
        Command::Trace { over, input, out } => commands::trace(&over, input.as_deref(), out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
