//! Error-injection stress groups.
//!
//! One transcript, five arms: a clean run, three single-point corruptions
//! (query rewriting, coarse-only retrieval, write noise), and the compound
//! failure applying all three at once.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricSet;
use crate::retrieval::Stage2Mode;
use crate::types::UserId;

use super::{
    machine_query, make_fact, mean_metrics, salad_text, shuffled, variant_text, PipelineHarness,
    PlantedFact, CORPUS_DIMENSION, SCHEMA_VERSION,
};

/// Stress arms. The cascade arm applies every single-point corruption at
/// once, so its score is the compound floor the single arms are compared
/// against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StressGroup {
    #[serde(rename = "A_full")]
    Full,
    #[serde(rename = "B_hq_noise")]
    HqNoise,
    #[serde(rename = "C_no_stage2")]
    NoStage2,
    #[serde(rename = "D_write_noise")]
    WriteNoise,
    #[serde(rename = "E_cascade")]
    Cascade,
}

impl StressGroup {
    pub const ALL: [StressGroup; 5] = [
        StressGroup::Full,
        StressGroup::HqNoise,
        StressGroup::NoStage2,
        StressGroup::WriteNoise,
        StressGroup::Cascade,
    ];

    pub fn label(self) -> &'static str {
        match self {
            StressGroup::Full => "A_full",
            StressGroup::HqNoise => "B_hq_noise",
            StressGroup::NoStage2 => "C_no_stage2",
            StressGroup::WriteNoise => "D_write_noise",
            StressGroup::Cascade => "E_cascade",
        }
    }

    pub fn corrupts_queries(self) -> bool {
        matches!(self, StressGroup::HqNoise | StressGroup::Cascade)
    }

    pub fn bypasses_filter(self) -> bool {
        matches!(self, StressGroup::NoStage2 | StressGroup::Cascade)
    }

    pub fn corrupts_writes(self) -> bool {
        matches!(self, StressGroup::WriteNoise | StressGroup::Cascade)
    }
}

impl std::str::FromStr for StressGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A_full" | "full" => Ok(StressGroup::Full),
            "B_hq_noise" | "hq_noise" => Ok(StressGroup::HqNoise),
            "C_no_stage2" | "no_stage2" => Ok(StressGroup::NoStage2),
            "D_write_noise" | "write_noise" => Ok(StressGroup::WriteNoise),
            "E_cascade" | "cascade" => Ok(StressGroup::Cascade),
            other => Err(Error::Config(format!("unknown stress group '{other}'"))),
        }
    }
}

/// Settings for one stress arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StressConfig {
    pub group: StressGroup,
    /// Fraction of queries (and of writes) replaced under the corrupting
    /// arms.
    pub noise_rate: f64,
    pub seed: u64,
}

impl StressConfig {
    pub fn new(group: StressGroup, seed: u64) -> Self {
        Self { group, noise_rate: 0.5, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_rate) || !self.noise_rate.is_finite() {
            return Err(Error::Config(format!(
                "noise_rate must be in [0, 1], got {}",
                self.noise_rate
            )));
        }
        Ok(())
    }
}

/// One replayed write.
#[derive(Debug, Clone, PartialEq)]
pub struct WriteRecord {
    pub user_id: UserId,
    pub text: String,
}

const STRESS_FACTS: usize = 48;
const VARIANTS_PER_FACT: usize = 2;
const SALADS_PER_FACT: usize = 6;

/// Synthetic conversation history: per fact, one isolated user partition
/// holding the fact, two near-miss variants, and filler.
#[derive(Debug, Clone, PartialEq)]
pub struct StressTranscript {
    pub seed: u64,
    pub facts: Vec<PlantedFact>,
    pub writes: Vec<WriteRecord>,
}

impl StressTranscript {
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut facts = Vec::with_capacity(STRESS_FACTS);
        let mut writes = Vec::new();
        for i in 0..STRESS_FACTS {
            let user_id = UserId::from(format!("s{i:04}"));
            let fact = make_fact(&mut rng, user_id.clone());
            writes.push(WriteRecord { user_id: user_id.clone(), text: fact.summary.clone() });
            let mut rest = Vec::new();
            let offset = rng.gen_range(0..4);
            for j in 0..VARIANTS_PER_FACT {
                rest.push(variant_text(&fact, offset + j));
            }
            for _ in 0..SALADS_PER_FACT {
                rest.push(salad_text(&mut rng));
            }
            for text in shuffled(rest, &mut rng) {
                writes.push(WriteRecord { user_id: user_id.clone(), text });
            }
            facts.push(fact);
        }
        Self { seed, facts, writes }
    }
}

/// Picks ⌊rate·n⌋ distinct indexes, uniformly without replacement.
fn pick_fraction(n: usize, rate: f64, rng: &mut impl Rng) -> BTreeSet<usize> {
    let count = ((n as f64) * rate).floor() as usize;
    let mut indexes: Vec<usize> = (0..n).collect();
    indexes.shuffle(rng);
    indexes.into_iter().take(count).collect()
}

/// Replays the transcript under one arm's corruptions and returns the mean
/// score over all probes.
pub fn run_stress_group(
    transcript: &StressTranscript,
    config: &StressConfig,
    k: usize,
) -> Result<MetricSet> {
    config.validate()?;
    let mut harness = PipelineHarness::new(CORPUS_DIMENSION, k);

    let mut write_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x57));
    let corrupted_writes = if config.group.corrupts_writes() {
        pick_fraction(transcript.writes.len(), config.noise_rate, &mut write_rng)
    } else {
        BTreeSet::new()
    };
    for (i, record) in transcript.writes.iter().enumerate() {
        if corrupted_writes.contains(&i) {
            harness.write(&record.user_id, &salad_text(&mut write_rng))?;
        } else {
            harness.write(&record.user_id, &record.text)?;
        }
    }

    let mut query_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9d));
    let corrupted_probes = if config.group.corrupts_queries() {
        pick_fraction(transcript.facts.len(), config.noise_rate, &mut query_rng)
    } else {
        BTreeSet::new()
    };
    let mode = if config.group.bypasses_filter() {
        Stage2Mode::Bypass
    } else {
        Stage2Mode::Model
    };

    let mut rows = Vec::with_capacity(transcript.facts.len());
    for (i, fact) in transcript.facts.iter().enumerate() {
        let replacement = corrupted_probes
            .contains(&i)
            .then(|| machine_query(&mut query_rng));
        let answer = harness.ask(&fact.user_id, &fact.probe, mode, None, replacement.as_deref())?;
        rows.push(harness.score(&answer, &fact.summary));
    }
    Ok(mean_metrics(&rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupOutcome {
    pub group: StressGroup,
    pub metrics: MetricSet,
    /// Clean-arm f1 minus this arm's f1.
    pub drop_from_full: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorInjectionReport {
    pub schema_version: u32,
    pub seed: u64,
    pub k: usize,
    pub noise_rate: f64,
    pub groups: Vec<GroupOutcome>,
}

/// Runs all five arms on one transcript under a shared seed and budget.
pub fn run_error_injection(
    transcript: &StressTranscript,
    base: &StressConfig,
    k: usize,
) -> Result<ErrorInjectionReport> {
    let mut groups = Vec::with_capacity(StressGroup::ALL.len());
    let full = run_stress_group(transcript, &StressConfig { group: StressGroup::Full, ..*base }, k)?;
    for group in StressGroup::ALL {
        let metrics = if group == StressGroup::Full {
            full
        } else {
            run_stress_group(transcript, &StressConfig { group, ..*base }, k)?
        };
        groups.push(GroupOutcome {
            group,
            metrics,
            drop_from_full: full.f1 - metrics.f1,
        });
    }
    Ok(ErrorInjectionReport {
        schema_version: SCHEMA_VERSION,
        seed: base.seed,
        k,
        noise_rate: base.noise_rate,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f1_of(report: &ErrorInjectionReport, group: StressGroup) -> f64 {
        report
            .groups
            .iter()
            .find(|row| row.group == group)
            .expect("report carries every group")
            .metrics
            .f1
    }

    #[test]
    fn transcripts_are_seed_deterministic() {
        assert_eq!(StressTranscript::generate(7), StressTranscript::generate(7));
        assert_ne!(
            StressTranscript::generate(7).writes,
            StressTranscript::generate(8).writes
        );
    }

    #[test]
    fn clean_arm_answers_every_probe_exactly() {
        let transcript = StressTranscript::generate(3);
        let metrics =
            run_stress_group(&transcript, &StressConfig::new(StressGroup::Full, 3), 5).unwrap();
        assert_eq!(metrics.f1, 1.0);
        assert_eq!(metrics.rouge_l, 1.0);
    }

    #[test]
    fn single_corruptions_degrade_and_cascade_is_worst() {
        for seed in [1u64, 2, 3] {
            let transcript = StressTranscript::generate(seed);
            let report = run_error_injection(
                &transcript,
                &StressConfig::new(StressGroup::Full, seed),
                5,
            )
            .unwrap();
            let a = f1_of(&report, StressGroup::Full);
            let b = f1_of(&report, StressGroup::HqNoise);
            let c = f1_of(&report, StressGroup::NoStage2);
            let d = f1_of(&report, StressGroup::WriteNoise);
            let e = f1_of(&report, StressGroup::Cascade);
            assert!(a > b && a > c && a > d, "seed {seed}: {a} {b} {c} {d}");
            assert!(e < b && e < c && e < d, "seed {seed}: cascade {e} not minimal");
            for row in &report.groups {
                if row.group != StressGroup::Cascade && row.group != StressGroup::Full {
                    assert!(
                        a - e > row.drop_from_full,
                        "seed {seed}: cascade drop {} not above {} drop {}",
                        a - e,
                        row.group.label(),
                        row.drop_from_full
                    );
                }
            }
        }
    }

    #[test]
    fn reports_are_reproducible_and_complete() {
        let transcript = StressTranscript::generate(9);
        let config = StressConfig::new(StressGroup::Full, 9);
        let one = run_error_injection(&transcript, &config, 5).unwrap();
        let two = run_error_injection(&transcript, &config, 5).unwrap();
        assert_eq!(
            serde_json::to_string(&one).unwrap(),
            serde_json::to_string(&two).unwrap()
        );
        assert_eq!(one.groups.len(), 5);
        assert_eq!(one.schema_version, SCHEMA_VERSION);
        assert_eq!(one.groups[0].drop_from_full, 0.0);
        let rate_zero = StressConfig { noise_rate: 0.0, ..config };
        let calm = run_stress_group(&transcript, &StressConfig { group: StressGroup::HqNoise, ..rate_zero }, 5)
            .unwrap();
        assert_eq!(calm.f1, 1.0, "zero noise rate must leave queries intact");
    }

    #[test]
    fn noise_rate_outside_unit_interval_is_rejected() {
        let config = StressConfig { noise_rate: 1.5, ..StressConfig::new(StressGroup::Full, 1) };
        assert!(config.validate().is_err());
        let transcript = StressTranscript::generate(1);
        assert!(run_stress_group(&transcript, &config, 5).is_err());
    }
}
