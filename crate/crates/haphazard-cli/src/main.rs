use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use haphazard_cli::commands;
use haphazard_cli::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "haphazard",
    version,
    about = "Online learning benchmark for streams whose feature set varies per instance"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the multi-seed prequential benchmark described by a config file.
    Run(RunArgs),
    /// Compare a persistent model against one restarted at each interval.
    Scenario(RunArgs),
    /// Check analytic gradients of every cell kind and the composed model.
    Gradcheck {
        /// Random draws per cell kind.
        #[arg(long, default_value_t = 100)]
        draws: usize,
        /// Hidden size for the cell-level checks.
        #[arg(long, default_value_t = 8)]
        hidden: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print parameter counts per cell kind and a worked example.
    Paramcount {
        #[arg(long, default_value_t = 64)]
        hidden: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Path to a key=value config file.
    #[arg(long)]
    config: PathBuf,
    /// Override one config key, e.g. --set p=0.75 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run(args) => {
            RunConfig::from_file(&args.config, &args.set).and_then(|cfg| commands::run(&cfg))
        }
        Cmd::Scenario(args) => {
            RunConfig::from_file(&args.config, &args.set).and_then(|cfg| commands::scenario(&cfg))
        }
        Cmd::Gradcheck { draws, hidden, seed } => commands::gradcheck(seed, draws, hidden),
        Cmd::Paramcount { hidden } => commands::paramcount(hidden),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
