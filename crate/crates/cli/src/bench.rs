//! Shell access to the seeded evaluation harnesses. Every report is JSON
//! with a schema_version field, written to --out or stdout.

use std::path::{Path, PathBuf};

use clap::Subcommand;

use lightmem_core::harness::{
    run_error_injection, run_growth_stress, run_latency, run_update_gap, run_update_gap_suite,
    GrowthTrajectory, SplitCorpus, StressConfig, StressGroup, StressTranscript, UpdateGapMode,
    UpdateGapReport, UpdateGapRow, SCHEMA_VERSION,
};

#[derive(Subcommand)]
pub enum BenchCommand {
    /// Five-arm failure study over one seeded transcript.
    ErrorInjection {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Retrieval quality as one user's store grows through checkpoints.
    Growth {
        /// Comma-separated store sizes at which to measure.
        #[arg(long, value_delimiter = ',', default_value = "100,1000,5000,10000")]
        checkpoints: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recall of recently updated facts across store arms.
    UpdateGap {
        /// full | ltm_only | mtm_only | mtm_noise | all
        #[arg(long, default_value = "all")]
        mode: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Percentile timings through the full query path.
    Latency {
        /// Live store size to seed before timing.
        #[arg(long, default_value_t = 1_000)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        queries: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(command: BenchCommand) -> anyhow::Result<()> {
    match command {
        BenchCommand::ErrorInjection { seed, k, out } => {
            let transcript = StressTranscript::generate(seed);
            let base = StressConfig::new(StressGroup::Full, seed);
            emit(&run_error_injection(&transcript, &base, k)?, out.as_deref())
        }
        BenchCommand::Growth {
            checkpoints,
            seed,
            k,
            out,
        } => {
            let trajectory = GrowthTrajectory::generate(seed);
            emit(
                &run_growth_stress(&trajectory, &checkpoints, k)?,
                out.as_deref(),
            )
        }
        BenchCommand::UpdateGap { mode, seed, k, out } => {
            let corpus = SplitCorpus::generate(seed);
            let report = if mode == "all" {
                run_update_gap_suite(&corpus, k)?
            } else {
                let mode: UpdateGapMode = mode.parse()?;
                UpdateGapReport {
                    schema_version: SCHEMA_VERSION,
                    seed,
                    k,
                    rows: vec![UpdateGapRow {
                        mode,
                        metrics: run_update_gap(&corpus, mode, k)?,
                    }],
                }
            };
            emit(&report, out.as_deref())
        }
        BenchCommand::Latency {
            n,
            queries,
            seed,
            out,
        } => emit(&run_latency(n, queries, seed)?, out.as_deref()),
    }
}

fn emit<T: serde::Serialize>(report: &T, out: Option<&Path>) -> anyhow::Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    match out {
        Some(path) => {
            std::fs::write(path, json + "\n")?;
            println!("wrote {}", path.display());
        }
        None => println!("{json}"),
    }
    Ok(())
}
