//! Latency measurement against a populated engine.
//!
//! Content is seeded, timings are wall-clock; the report is for reading, not
//! for byte-comparison across runs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{EngineConfig, MemoryEngine};
use crate::error::Result;
use crate::gateway::Gateway;

use super::{salad_text, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRunReport {
    pub schema_version: u32,
    pub n_items: usize,
    pub n_queries: usize,
    /// Store rows after seeding and querying; queries append summaries.
    pub store_len: usize,
    pub retrieval_p50_ms: f64,
    pub retrieval_p95_ms: f64,
    pub end_to_end_p50_ms: f64,
    pub end_to_end_p95_ms: f64,
}

/// Fills one user's partition to exactly `n_items` live rows, then times
/// `n_queries` probes through the full query path.
pub fn run_latency(n_items: usize, n_queries: usize, seed: u64) -> Result<LatencyRunReport> {
    let mut config = EngineConfig::default();
    config.embedding.dimension = 32;
    let engine = MemoryEngine::new(config, Gateway::mock())?;
    let user = "latency_user";

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut notes = Vec::new();
    let mut counter = 0usize;
    while engine.user_len(user) < n_items {
        let note = format!("note {counter:05} regarding {}", salad_text(&mut rng));
        engine.seed_memory(user, &note)?;
        notes.push(note);
        counter += 1;
    }

    for _ in 0..n_queries {
        let probe = &notes[rng.gen_range(0..notes.len())];
        engine.handle_query(user, probe)?;
    }

    let report = engine.latency_report();
    Ok(LatencyRunReport {
        schema_version: SCHEMA_VERSION,
        n_items,
        n_queries,
        store_len: engine.mtm_len(),
        retrieval_p50_ms: report.retrieval_p50_ms,
        retrieval_p95_ms: report.retrieval_p95_ms,
        end_to_end_p50_ms: report.end_to_end_p50_ms,
        end_to_end_p95_ms: report.end_to_end_p95_ms,
    })
}
