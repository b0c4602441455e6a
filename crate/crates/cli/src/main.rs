//! `scrforge` command-line driver.
//!
//! Every subcommand reads the same `key=value` configuration file; see
//! [`config::RunConfig`] for the keys it adds on top of the library's.

mod commands;
mod config;
mod ply;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    /// Generate a synthetic dataset.
    Synth,
    /// Build the covisibility graph from training poses.
    Graph,
    /// Learn global encodings from the graph.
    Embed,
    /// Train the network and the retrieval index.
    Train,
    /// Localize every query of the dataset.
    Localize,
    /// Print the accuracy table and map size.
    Eval,
    /// Write predicted training scene coordinates as a PLY point cloud.
    Export,
}

#[derive(Debug, Parser)]
#[command(name = "scrforge", version, about = "Scene coordinate regression with covisibility-aware global encodings")]
struct Cli {
    command: Command,
    /// Configuration file of `key=value` lines.
    #[arg(long)]
    config: PathBuf,
    /// Reseeds every stage, overriding `seed` and `scene.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding `paths.out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit status for configuration problems; clap uses it for usage errors too.
const EXIT_CONFIG: u8 = 2;
const EXIT_PIPELINE: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match RunConfig::load(&cli.config, cli.seed, cli.out.as_deref()).and_then(|c| c.check_inputs(cli.command).map(|()| c)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("scrforge: configuration error: {e:#}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let result = match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Graph => commands::graph(&cfg),
        Command::Embed => commands::embed(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Localize => commands::localize(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Export => commands::export(&cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("scrforge: {e:#}");
            ExitCode::from(EXIT_PIPELINE)
        }
    }
}
