use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ecg_cosearch_cli::{execute, resolve_config, Stage};

#[derive(Parser)]
#[command(name = "ecg-cosearch", version, about = "Network and accelerator co-search for ECG reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate synthetic beats.
    Synth,
    /// Search the network blocks and derive a network.
    SearchNet,
    /// Retrain the derived network and evaluate it.
    Train,
    /// Search an accelerator for the derived network.
    SearchAcc,
    /// Write the summary and plot-data CSVs.
    Report,
    /// Run every stage.
    All,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let stage = match cli.command {
        Command::Synth => Stage::Synth,
        Command::SearchNet => Stage::SearchNet,
        Command::Train => Stage::Train,
        Command::SearchAcc => Stage::SearchAcc,
        Command::Report => Stage::Report,
        Command::All => Stage::All,
    };
    let result = resolve_config(cli.config.as_ref(), cli.seed, cli.out).and_then(|cfg| execute(stage, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
