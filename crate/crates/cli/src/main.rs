//! `lightmem`: run the memory service, move snapshots around, and drive
//! the seeded evaluation harnesses from a shell.

mod bench;
mod http;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use lightmem_core::config::ServiceConfig;
use lightmem_core::engine::MemoryEngine;
use lightmem_core::persistence;

#[derive(Parser)]
#[command(name = "lightmem", version, about = "Tiered conversational memory engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        /// Port to bind on 127.0.0.1; 0 picks a free one.
        #[arg(long, default_value_t = 7700)]
        port: u16,
        /// key = value settings file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Snapshot directory loaded at startup and rewritten on clean
        /// shutdown.
        #[arg(long)]
        state: Option<PathBuf>,
    },
    /// Export the current state as a snapshot directory.
    Snapshot {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        state: Option<PathBuf>,
    },
    /// Validate a snapshot and optionally install it as service state.
    Load {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        state: Option<PathBuf>,
    },
    /// Seeded evaluation harnesses emitting JSON reports.
    #[command(subcommand)]
    Bench(bench::BenchCommand),
}

/// Builds the engine a subcommand runs against: settings from `--config`,
/// stores from the `--state` snapshot when one is already on disk.
fn build_engine(config: Option<&Path>, state: Option<&Path>) -> anyhow::Result<MemoryEngine> {
    let service = match config {
        Some(path) => ServiceConfig::load(path)?,
        None => ServiceConfig::default(),
    };
    let (engine_config, gateway) = service.build()?;
    match state {
        Some(dir) if dir.join(persistence::MTM_FILE).exists() => {
            Ok(MemoryEngine::load(dir, engine_config, gateway)?)
        }
        _ => Ok(MemoryEngine::new(engine_config, gateway)?),
    }
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Serve { port, config, state } => {
            http::serve(port, config.as_deref(), state.as_deref())
        }
        Command::Snapshot { out, config, state } => {
            let engine = build_engine(config.as_deref(), state.as_deref())?;
            engine.snapshot(&out)?;
            println!(
                "wrote snapshot to {} ({} mtm items, {} ltm nodes)",
                out.display(),
                engine.mtm_len(),
                engine.ltm().len()
            );
            Ok(())
        }
        Command::Load { input, state } => {
            let (mtm, ltm) = persistence::load_snapshot(&input)?;
            println!(
                "snapshot {} holds {} mtm items and {} ltm nodes",
                input.display(),
                mtm.len(),
                ltm.len()
            );
            if let Some(dir) = state {
                persistence::save_snapshot(&dir, &mtm, &ltm)?;
                println!("installed into {}", dir.display());
            }
            Ok(())
        }
        Command::Bench(command) => bench::run(command),
    }
}
