//! Update-gap stress: facts split between a store that just learned them
//! and knowledge consolidated long ago, probed under four routing regimes.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::StoreKind;
use crate::metrics::MetricSet;
use crate::retrieval::Stage2Mode;
use crate::types::UserId;

use super::{
    make_fact, mean_metrics, salad_text, variant_text, PipelineHarness, PlantedFact,
    CORPUS_DIMENSION, SCHEMA_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateGapMode {
    /// Planner routing untouched.
    Full,
    /// Every query forced to the graph.
    LtmOnly,
    /// Every query forced to the per-user store.
    MtmOnly,
    /// Planner routing untouched, per-user store flooded with noise first.
    MtmNoise,
}

impl UpdateGapMode {
    pub const ALL: [UpdateGapMode; 4] = [
        UpdateGapMode::Full,
        UpdateGapMode::LtmOnly,
        UpdateGapMode::MtmOnly,
        UpdateGapMode::MtmNoise,
    ];

    pub fn label(self) -> &'static str {
        match self {
            UpdateGapMode::Full => "full",
            UpdateGapMode::LtmOnly => "ltm_only",
            UpdateGapMode::MtmOnly => "mtm_only",
            UpdateGapMode::MtmNoise => "mtm_noise",
        }
    }
}

impl std::str::FromStr for UpdateGapMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(UpdateGapMode::Full),
            "ltm_only" => Ok(UpdateGapMode::LtmOnly),
            "mtm_only" => Ok(UpdateGapMode::MtmOnly),
            "mtm_noise" => Ok(UpdateGapMode::MtmNoise),
            other => Err(Error::Config(format!("unknown update-gap mode '{other}'"))),
        }
    }
}

const RECENT_FACTS: usize = 16;
const CONSOLIDATED_FACTS: usize = 16;
const SALADS_PER_RECENT: usize = 2;
/// Variants written per buried fact under mtm_noise. Must exceed the coarse
/// pool so the buried fact cannot rank into it.
const FLOOD_VARIANTS: usize = 12;
const FLOOD_SALADS: usize = 24;

const PLACE_STEMS: [&str; 16] = [
    "freed", "sylv", "gall", "bor", "vald", "mer", "cal", "dros", "els", "tarn", "vel", "ost",
    "quar", "nim", "pell", "ard",
];
const PLACE_SUFFIXES: [&str; 4] = ["onia", "avia", "oria", "land"];
const TOWN_STEMS: [&str; 16] = [
    "fred", "sylv", "gart", "bren", "vost", "marn", "celd", "drava", "elst", "torn", "veld",
    "oster", "quil", "ninn", "pelt", "arden",
];
const TOWN_SUFFIXES: [&str; 4] = ["ville", "port", "stad", "burg"];

/// A fact living only in the graph: its label and the probe that should
/// find it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsolidatedFact {
    pub label: String,
    pub probe: String,
}

/// Corpus with a deliberate freshness split: `recent` facts exist only in
/// the per-user store, `consolidated` facts only in the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitCorpus {
    pub seed: u64,
    pub user_id: UserId,
    pub recent: Vec<PlantedFact>,
    pub consolidated: Vec<ConsolidatedFact>,
    /// Recent-fact indexes buried under mtm_noise.
    pub flood_targets: Vec<usize>,
}

impl SplitCorpus {
    pub fn generate(seed: u64) -> Self {
        Self::generate_sized(seed, RECENT_FACTS, CONSOLIDATED_FACTS)
    }

    pub fn generate_sized(seed: u64, recent_count: usize, consolidated_count: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let user_id = UserId::from("gap_user");

        let mut recent: Vec<PlantedFact> = Vec::with_capacity(recent_count);
        while recent.len() < recent_count {
            let fact = make_fact(&mut rng, user_id.clone());
            // One partition holds every recent fact, so subjects and
            // (subject, category) pairs must not repeat.
            if recent.iter().any(|f| f.subject == fact.subject) {
                continue;
            }
            recent.push(fact);
        }

        let mut stems: Vec<usize> = (0..PLACE_STEMS.len()).collect();
        stems.shuffle(&mut rng);
        let consolidated = stems
            .into_iter()
            .take(consolidated_count)
            .map(|i| {
                let place = format!("{}{}", PLACE_STEMS[i], PLACE_SUFFIXES[rng.gen_range(0..4)]);
                let town = format!("{}{}", TOWN_STEMS[i], TOWN_SUFFIXES[rng.gen_range(0..4)]);
                ConsolidatedFact {
                    label: format!("the capital of {place} is {town}"),
                    probe: format!("what is the capital of {place}"),
                }
            })
            .collect();

        let mut flood_targets: Vec<usize> = (0..recent_count).collect();
        flood_targets.shuffle(&mut rng);
        flood_targets.truncate(recent_count / 2);
        flood_targets.sort_unstable();

        Self { seed, user_id, recent, consolidated, flood_targets }
    }
}

fn build_harness(corpus: &SplitCorpus, mode: UpdateGapMode, k: usize) -> Result<PipelineHarness> {
    let mut harness = PipelineHarness::new(CORPUS_DIMENSION, k);
    let mut rng = ChaCha8Rng::seed_from_u64(corpus.seed.wrapping_add(0xf1));
    for fact in &corpus.recent {
        harness.write(&corpus.user_id, &fact.summary)?;
        for _ in 0..SALADS_PER_RECENT {
            let text = salad_text(&mut rng);
            harness.write(&corpus.user_id, &text)?;
        }
    }
    for fact in &corpus.consolidated {
        harness.insert_concept(&fact.label)?;
    }
    if mode == UpdateGapMode::MtmNoise {
        for &target in &corpus.flood_targets {
            let fact = &corpus.recent[target];
            for j in 0..FLOOD_VARIANTS {
                harness.write(&corpus.user_id, &variant_text(fact, j))?;
            }
        }
        for _ in 0..FLOOD_SALADS {
            let text = salad_text(&mut rng);
            harness.write(&corpus.user_id, &text)?;
        }
    }
    Ok(harness)
}

/// Scores one routing regime over every probe in the corpus.
pub fn run_update_gap(corpus: &SplitCorpus, mode: UpdateGapMode, k: usize) -> Result<MetricSet> {
    let mut harness = build_harness(corpus, mode, k)?;
    let route = match mode {
        UpdateGapMode::LtmOnly => Some(StoreKind::Ltm),
        UpdateGapMode::MtmOnly => Some(StoreKind::Mtm),
        UpdateGapMode::Full | UpdateGapMode::MtmNoise => None,
    };
    let mut rows = Vec::with_capacity(corpus.recent.len() + corpus.consolidated.len());
    for fact in &corpus.recent {
        let answer = harness.ask(&corpus.user_id, &fact.probe, Stage2Mode::Model, route, None)?;
        rows.push(harness.score(&answer, &fact.summary));
    }
    for fact in &corpus.consolidated {
        let answer = harness.ask(&corpus.user_id, &fact.probe, Stage2Mode::Model, route, None)?;
        rows.push(harness.score(&answer, &fact.label));
    }
    Ok(mean_metrics(&rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateGapRow {
    pub mode: UpdateGapMode,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateGapReport {
    pub schema_version: u32,
    pub seed: u64,
    pub k: usize,
    pub rows: Vec<UpdateGapRow>,
}

pub fn run_update_gap_suite(corpus: &SplitCorpus, k: usize) -> Result<UpdateGapReport> {
    let mut rows = Vec::with_capacity(UpdateGapMode::ALL.len());
    for mode in UpdateGapMode::ALL {
        rows.push(UpdateGapRow { mode, metrics: run_update_gap(corpus, mode, k)? });
    }
    Ok(UpdateGapReport { schema_version: SCHEMA_VERSION, seed: corpus.seed, k, rows })
}
