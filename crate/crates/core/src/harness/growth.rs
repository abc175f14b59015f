//! Store-growth stress: replay one long write stream and compare the full
//! two-stage pipeline with a coarse-only arm at fixed size checkpoints.
//!
//! The stream starts clean and turns adversarial: facts planted after a
//! short prefix are shadowed by near-miss variants, so the coarse arm's
//! accuracy decays as the store grows while the filtered arm holds. The gap
//! between the arms is the quantity under test.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::retrieval::Stage2Mode;
use crate::types::UserId;

use super::{
    make_fact, mean_metrics, salad_text, shuffled, variant_text, PipelineHarness, PlantedFact,
    CORPUS_DIMENSION, SCHEMA_VERSION,
};

pub const DEFAULT_CHECKPOINTS: [usize; 4] = [100, 1_000, 5_000, 10_000];

const WRITES_PER_BLOCK: usize = 16;
const VARIANTS_PER_POISONED_FACT: usize = 3;
/// Facts planted before this block index get no variants, so early
/// checkpoints measure a benign store.
const CLEAN_PREFIX_BLOCKS: usize = 12;
/// Enough blocks to push the store past the largest default checkpoint with
/// slack for merged writes.
const DEFAULT_BLOCKS: usize = 760;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryWrite {
    pub user_id: UserId,
    pub text: String,
}

/// A replayable write stream with the planted facts' positions.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthTrajectory {
    pub seed: u64,
    pub writes: Vec<TrajectoryWrite>,
    /// Each fact with the index of its write in `writes`.
    pub facts: Vec<(usize, PlantedFact)>,
}

impl GrowthTrajectory {
    pub fn generate(seed: u64) -> Self {
        Self::generate_blocks(seed, DEFAULT_BLOCKS)
    }

    /// One block per fact: the fact write, its variants (past the clean
    /// prefix), and salad filler, everything after the fact shuffled. Each
    /// fact gets its own user partition, mirroring a service where no single
    /// user owns the whole store.
    pub fn generate_blocks(seed: u64, blocks: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut writes = Vec::with_capacity(blocks * WRITES_PER_BLOCK);
        let mut facts = Vec::with_capacity(blocks);
        for b in 0..blocks {
            let user_id = UserId::from(format!("g{b:04}"));
            let fact = make_fact(&mut rng, user_id.clone());
            facts.push((writes.len(), fact.clone()));
            writes.push(TrajectoryWrite { user_id: user_id.clone(), text: fact.summary.clone() });

            let mut rest = Vec::with_capacity(WRITES_PER_BLOCK - 1);
            if b >= CLEAN_PREFIX_BLOCKS {
                let offset = rng.gen_range(0..4);
                for j in 0..VARIANTS_PER_POISONED_FACT {
                    rest.push(variant_text(&fact, offset + j));
                }
            }
            while rest.len() < WRITES_PER_BLOCK - 1 {
                rest.push(salad_text(&mut rng));
            }
            for text in shuffled(rest, &mut rng) {
                writes.push(TrajectoryWrite { user_id: user_id.clone(), text });
            }
        }
        Self { seed, writes, facts }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub checkpoint: usize,
    /// False when the stream ended before the store reached this size.
    pub reached: bool,
    /// Live store rows when the checkpoint was crossed.
    pub store_len: usize,
    /// Probes evaluated: all facts written so far.
    pub probes: usize,
    pub full_f1: f64,
    pub vector_only_f1: f64,
    /// full_f1 − vector_only_f1.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub schema_version: u32,
    pub seed: u64,
    pub k: usize,
    pub checkpoints: Vec<CheckpointRow>,
}

/// Replays the stream once per arm, emitting a row the first time the live
/// store size reaches each checkpoint. Unreached checkpoints are reported
/// absent rather than failing the run.
pub fn run_growth_stress(
    trajectory: &GrowthTrajectory,
    checkpoints: &[usize],
    k: usize,
) -> Result<GrowthReport> {
    let mut targets: Vec<usize> = checkpoints.to_vec();
    targets.sort_unstable();
    targets.dedup();

    let mut full = PipelineHarness::new(CORPUS_DIMENSION, k);
    let mut coarse = PipelineHarness::new(CORPUS_DIMENSION, k);
    let mut rows = Vec::with_capacity(targets.len());
    let mut next = 0;

    for (i, write) in trajectory.writes.iter().enumerate() {
        full.write(&write.user_id, &write.text)?;
        coarse.write(&write.user_id, &write.text)?;
        while next < targets.len() && full.mtm.len() >= targets[next] {
            rows.push(evaluate(trajectory, &mut full, &mut coarse, targets[next], i)?);
            next += 1;
        }
    }
    for &checkpoint in &targets[next..] {
        rows.push(CheckpointRow {
            checkpoint,
            reached: false,
            store_len: 0,
            probes: 0,
            full_f1: 0.0,
            vector_only_f1: 0.0,
            delta: 0.0,
        });
    }
    Ok(GrowthReport { schema_version: SCHEMA_VERSION, seed: trajectory.seed, k, checkpoints: rows })
}

fn evaluate(
    trajectory: &GrowthTrajectory,
    full: &mut PipelineHarness,
    coarse: &mut PipelineHarness,
    checkpoint: usize,
    write_index: usize,
) -> Result<CheckpointRow> {
    let mut full_rows = Vec::new();
    let mut coarse_rows = Vec::new();
    for (position, fact) in &trajectory.facts {
        if *position > write_index {
            break;
        }
        let answer = full.ask(&fact.user_id, &fact.probe, Stage2Mode::Model, None, None)?;
        full_rows.push(full.score(&answer, &fact.summary));
        let answer = coarse.ask(&fact.user_id, &fact.probe, Stage2Mode::Bypass, None, None)?;
        coarse_rows.push(coarse.score(&answer, &fact.summary));
    }
    let full_f1 = mean_metrics(&full_rows).f1;
    let vector_only_f1 = mean_metrics(&coarse_rows).f1;
    Ok(CheckpointRow {
        checkpoint,
        reached: true,
        store_len: full.mtm.len(),
        probes: full_rows.len(),
        full_f1,
        vector_only_f1,
        delta: full_f1 - vector_only_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectories_are_seed_deterministic() {
        assert_eq!(
            GrowthTrajectory::generate_blocks(5, 20),
            GrowthTrajectory::generate_blocks(5, 20)
        );
        assert_ne!(
            GrowthTrajectory::generate_blocks(5, 20).writes,
            GrowthTrajectory::generate_blocks(6, 20).writes
        );
    }

    #[test]
    fn short_streams_mark_checkpoints_absent() {
        let trajectory = GrowthTrajectory::generate_blocks(1, 4);
        let report = run_growth_stress(&trajectory, &[40, 5_000], 5).unwrap();
        assert!(report.checkpoints[0].reached);
        assert!(!report.checkpoints[1].reached);
        assert_eq!(report.checkpoints[1].probes, 0);
    }

    #[test]
    fn filtered_arm_dominates_and_the_gap_widens() {
        let trajectory = GrowthTrajectory::generate_blocks(21, 80);
        let report = run_growth_stress(&trajectory, &[100, 1_000], 5).unwrap();
        for row in &report.checkpoints {
            assert!(row.reached);
            assert!(
                row.full_f1 >= row.vector_only_f1,
                "coarse arm won at {}: {row:?}",
                row.checkpoint
            );
        }
        let early = report.checkpoints[0].delta;
        let late = report.checkpoints[1].delta;
        assert!(late > early, "gap did not widen: {early} -> {late}");
        assert!(report.checkpoints.iter().all(|r| r.full_f1 > 0.95));
    }

    #[test]
    fn reports_serialize_identically_across_runs() {
        let trajectory = GrowthTrajectory::generate_blocks(33, 30);
        let one = run_growth_stress(&trajectory, &[50, 200], 5).unwrap();
        let two = run_growth_stress(&trajectory, &[50, 200], 5).unwrap();
        assert_eq!(
            serde_json::to_string(&one).unwrap(),
            serde_json::to_string(&two).unwrap()
        );
    }
}
