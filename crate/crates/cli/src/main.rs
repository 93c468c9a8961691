use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use perc_cli::{commands, Context};

#[derive(Parser)]
#[command(name = "perc", version, about = "Perceptual-color adversarial attack campaigns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true, default_value = "perc.json")]
    config: PathBuf,
    /// Override the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use only the first N suite images.
    #[arg(long, global = true)]
    suite: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train source and transfer models and export the suite.
    Train,
    /// Run the configured attack campaigns.
    Attack,
    /// Robustness, transfer, validity and contact sheets for finished campaigns.
    Evaluate,
    /// Write a Markdown summary.
    Report,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = Context::load(&cli.config, cli.seed, cli.out.as_deref(), cli.suite).and_then(|ctx| {
        match cli.command {
            Command::Train => commands::train(&ctx).map(|_| ()),
            Command::Attack => commands::attack(&ctx).map(|_| ()),
            Command::Evaluate => commands::evaluate(&ctx).map(|_| ()),
            Command::Report => commands::report(&ctx).map(|md| print!("{md}")),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
