//! Desk-scale evaluation harness.
//!
//! Builds seeded synthetic corpora of planted preference facts, probe
//! questions, and adversarial near-miss noise, then replays them through the
//! real write and retrieval paths to measure answer quality under stress.
//! Every runner is deterministic given its seed; reports carry a
//! schema_version so downstream tooling can detect format drift.
//!
//! The noise generator is tuned against the trigram embedding: a corrupted
//! probe variant ("what collor doess ... casey brennan prefeer") lands above
//! the true fact in cosine space while sharing fewer exact tokens with the
//! probe than the fact does, so coarse retrieval is fooled exactly where the
//! semantic filter is not. Foreign variants (other subjects) stay below the
//! fact because the intact two-token name carries the decisive trigram mass.

mod gap;
mod growth;
mod latency;
mod stress;

pub use gap::{run_update_gap, run_update_gap_suite, SplitCorpus, UpdateGapMode, UpdateGapReport, UpdateGapRow};
pub use growth::{run_growth_stress, CheckpointRow, GrowthReport, GrowthTrajectory, TrajectoryWrite, DEFAULT_CHECKPOINTS};
pub use latency::{run_latency, LatencyRunReport};
pub use stress::{
    run_error_injection, run_stress_group, ErrorInjectionReport, GroupOutcome, StressConfig,
    StressGroup, StressTranscript, WriteRecord,
};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::embedding::{embed, EmbeddingConfig};
use crate::engine::NO_MEMORY_ANSWER;
use crate::error::Result;
use crate::gateway::Gateway;
use crate::index::StoreKind;
use crate::metrics::{score_answer, MetricSet};
use crate::planner::{build_plan, PlannerConfig};
use crate::retrieval::{retrieve, Stage2Mode};
use crate::store::{LtmGraph, MtmStore};
use crate::types::{LtmNode, MemoryItem, NodeKind, UserId};
use crate::writer::{write_mtm, MtmConfig};

/// Bumped whenever a report field changes shape or meaning.
pub const SCHEMA_VERSION: u32 = 1;

/// Embedding width used by the synthetic corpora. The noise margins below
/// were validated at this width; narrower vectors blur them with hash
/// collisions.
pub const CORPUS_DIMENSION: usize = 64;

const FIRST_NAMES: [&str; 32] = [
    "casey", "jordan", "avery", "riley", "morgan", "quinn", "harper", "rowan", "sage", "emery",
    "blake", "devon", "finley", "hollis", "jules", "kai", "lane", "marlow", "noel", "oakley",
    "pax", "reese", "skyler", "tatum", "vale", "wren", "ashton", "bryn", "cole", "dana", "flynn",
    "kerry",
];

const LAST_NAMES: [&str; 32] = [
    "brennan", "ellis", "vance", "holt", "mercer", "dalton", "frost", "hayes", "ingram", "keller",
    "lennox", "monroe", "nash", "orchard", "porter", "quill", "ramsey", "sutton", "thorne",
    "underhill", "vogel", "walsh", "xenos", "yates", "zhao", "barlow", "cormack", "draper",
    "eastman", "farrow", "gibson", "halloran",
];

const CATEGORIES: [(&str, [&str; 12]); 8] = [
    ("color", ["teal", "maroon", "ochre", "indigo", "crimson", "amber", "sienna", "violet", "coral", "olive", "slate", "peach"]),
    ("drink", ["matcha", "espresso", "cider", "cocoa", "lassi", "kombucha", "julep", "spritz", "tonic", "mead", "oolong", "chai"]),
    ("city", ["lisbon", "oslo", "quito", "dakar", "hanoi", "perth", "tunis", "bogota", "riga", "osaka", "turin", "cusco"]),
    ("hobby", ["archery", "origami", "bouldering", "pottery", "birding", "chess", "knitting", "foraging", "kayaking", "juggling", "calligraphy", "sketching"]),
    ("dish", ["paella", "ramen", "goulash", "tagine", "risotto", "pho", "ceviche", "gumbo", "bibimbap", "falafel", "moussaka", "laksa"]),
    ("sport", ["fencing", "rowing", "squash", "curling", "biathlon", "handball", "badminton", "lacrosse", "softball", "cricket", "rugby", "netball"]),
    ("flower", ["peony", "dahlia", "lupine", "aster", "freesia", "zinnia", "magnolia", "tulip", "orchid", "jasmine", "camellia", "marigold"]),
    ("metal", ["copper", "titanium", "cobalt", "nickel", "zinc", "tungsten", "brass", "pewter", "chromium", "iridium", "tantalum", "silver"]),
];

/// Variant fillers. Deliberately absent from the planner marker lexicon and
/// from every fact or probe template, so they add embedding mass without
/// adding token overlap.
const FILLERS: [&str; 16] = [
    "honestly", "mostly", "somewhat", "plainly", "roughly", "broadly", "kindly", "oddly",
    "quietly", "rather", "nearly", "barely", "truly", "fairly", "simply", "notably",
];

/// Filler vocabulary for bulk noise writes; disjoint from every other pool.
const SALAD_WORDS: [&str; 48] = [
    "gravel", "spoon", "lantern", "mossy", "chord", "pebble", "drift", "anvil", "cork",
    "thimble", "fern", "rasp", "dune", "ember", "flint", "gourd", "hinge", "juniper", "kelp",
    "loam", "marble", "nutmeg", "onyx", "plume", "quartz", "reed", "shale", "tether", "umber",
    "vellum", "wicker", "yonder", "zephyr", "birch", "cairn", "delta", "eaves", "fjord", "grove",
    "heath", "inlet", "jetty", "knoll", "ledge", "mesa", "notch", "spire", "vault",
];

/// Vocabulary for replacement queries in the stress groups; disjoint from
/// the corpus so a corrupted plan shares no tokens with any stored summary.
const MACHINE_WORDS: [&str; 20] = [
    "granite", "kettle", "hums", "sprocket", "wobbles", "turbine", "lisps", "gasket", "whirrs",
    "piston", "clanks", "flywheel", "rattles", "bellows", "drones", "camshaft", "ticks",
    "dynamo", "buzzes", "solenoid",
];

/// One planted preference fact with its probe question. The summary is both
/// the stored memory and the reference answer for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedFact {
    pub user_id: UserId,
    pub subject: String,
    pub category: String,
    pub value: String,
    pub summary: String,
    pub probe: String,
}

pub(crate) fn make_fact(rng: &mut impl Rng, user_id: impl Into<UserId>) -> PlantedFact {
    let first = FIRST_NAMES[rng.gen_range(0..FIRST_NAMES.len())];
    let last = LAST_NAMES[rng.gen_range(0..LAST_NAMES.len())];
    let (category, values) = CATEGORIES[rng.gen_range(0..CATEGORIES.len())];
    let value = values[rng.gen_range(0..values.len())];
    let subject = format!("{first} {last}");
    PlantedFact {
        user_id: user_id.into(),
        subject: subject.clone(),
        category: category.to_string(),
        value: value.to_string(),
        summary: format!("{subject} prefers the {category} {value}"),
        probe: format!("what {category} does {subject} prefer"),
    }
}

/// Doubles one character of `word`, the position keyed by `r`. The result
/// keeps most of the word's trigrams while never matching it as a token.
pub(crate) fn corrupt_word(word: &str, r: usize) -> String {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    if n < 3 {
        return format!("{word}{word}");
    }
    let p = 1 + r % (n - 1);
    let mut out = String::with_capacity(word.len() + 1);
    for (i, ch) in chars.iter().enumerate() {
        out.push(*ch);
        if i == p {
            out.push(*ch);
        }
    }
    out
}

/// The near-miss distractor for a fact's probe: question-shaped, with the
/// subject and "what" intact and everything else misspelled. Sits above the
/// fact in trigram cosine for the fact's own probe, below it in token
/// overlap, and below the merge threshold against the fact and against
/// sibling variants.
pub(crate) fn variant_text(fact: &PlantedFact, j: usize) -> String {
    format!(
        "what {} {} {} {} {}",
        corrupt_word(&fact.category, j),
        corrupt_word("does", j + 1),
        FILLERS[j % FILLERS.len()],
        fact.subject,
        corrupt_word("prefer", j + 2),
    )
}

pub(crate) fn salad_text(rng: &mut impl Rng) -> String {
    let mut words: Vec<&str> = Vec::with_capacity(5);
    for _ in 0..5 {
        words.push(SALAD_WORDS[rng.gen_range(0..SALAD_WORDS.len())]);
    }
    words.join(" ")
}

pub(crate) fn machine_query(rng: &mut impl Rng) -> String {
    let mut pick = || MACHINE_WORDS[rng.gen_range(0..MACHINE_WORDS.len())];
    format!("which {} {} {} {}", pick(), pick(), pick(), pick())
}

pub(crate) fn shuffled<T>(mut items: Vec<T>, rng: &mut impl Rng) -> Vec<T> {
    items.shuffle(rng);
    items
}

/// Store-level driver used by the experiment runners. It owns both stores
/// and replays the service's write and retrieval paths synchronously, with a
/// logical clock, so runs are reproducible and cheap enough to repeat across
/// seeds.
#[derive(Debug)]
pub struct PipelineHarness {
    pub embedding: EmbeddingConfig,
    pub planner: PlannerConfig,
    pub write_config: MtmConfig,
    pub gateway: Gateway,
    pub mtm: MtmStore,
    pub ltm: LtmGraph,
    now_ms: i64,
}

impl PipelineHarness {
    pub fn new(dimension: usize, k: usize) -> Self {
        let planner = PlannerConfig {
            k,
            ..PlannerConfig::default()
        };
        Self {
            embedding: EmbeddingConfig::mock(dimension),
            planner,
            write_config: MtmConfig::default(),
            gateway: Gateway::mock(),
            mtm: MtmStore::new(dimension),
            ltm: LtmGraph::new(dimension),
            now_ms: 0,
        }
    }

    fn tick(&mut self) -> i64 {
        self.now_ms += 1_000;
        self.now_ms
    }

    /// Writes one summary through the maintenance path (merge or insert).
    pub fn write(&mut self, user_id: &UserId, text: &str) -> Result<()> {
        let now = self.tick();
        let embedding = embed(text, &self.embedding)?;
        let id = self.mtm.allocate_id();
        let item = MemoryItem::new(id, user_id.clone(), text, embedding, now);
        write_mtm(&mut self.mtm, item, &self.write_config)?;
        Ok(())
    }

    /// Plants one de-identified concept node directly in the graph, standing
    /// in for knowledge consolidated in some earlier epoch.
    pub fn insert_concept(&mut self, label: &str) -> Result<()> {
        let now = self.tick();
        let embedding = embed(label, &self.embedding)?;
        let id = self.ltm.allocate_id();
        self.ltm.insert_node(LtmNode {
            node_id: id,
            kind: NodeKind::Concept,
            label: label.to_string(),
            embedding,
            confidence: 0.8,
            evidence_count: 2,
            created_at: now,
            updated_at: now,
        })
    }

    /// Runs plan, coarse pass, and filter for one probe, echoing the top
    /// retrieved summary as the answer. `route_override` forces every query
    /// to one store; `hq_replace` swaps every query's text and embedding
    /// while keeping routing and quotas.
    pub fn ask(
        &mut self,
        user_id: &UserId,
        probe: &str,
        mode: Stage2Mode,
        route_override: Option<StoreKind>,
        hq_replace: Option<&str>,
    ) -> Result<String> {
        let now = self.tick();
        let (mut plan, _) = build_plan(
            probe,
            "",
            user_id,
            now,
            &self.planner,
            &self.gateway,
            &self.embedding,
        )?;
        if let Some(text) = hq_replace {
            let embedding = embed(text, &self.embedding)?;
            for hq in &mut plan.hqs {
                hq.text = text.to_string();
                hq.embedding = embedding.clone();
            }
        }
        if let Some(store) = route_override {
            for hq in &mut plan.hqs {
                hq.route = store;
            }
        }
        let outcome = retrieve(&plan, &mut self.mtm, &self.ltm, mode, &self.gateway, now)?;
        Ok(outcome
            .retrieved
            .entries
            .first()
            .map(|entry| entry.summary.clone())
            .unwrap_or_else(|| NO_MEMORY_ANSWER.to_string()))
    }

    pub fn score(&self, answer: &str, reference: &str) -> MetricSet {
        score_answer(answer, reference, &self.embedding)
    }
}

pub(crate) fn mean_metrics(rows: &[MetricSet]) -> MetricSet {
    if rows.is_empty() {
        return MetricSet::zero();
    }
    let n = rows.len() as f64;
    MetricSet {
        f1: rows.iter().map(|m| m.f1).sum::<f64>() / n,
        bleu1: rows.iter().map(|m| m.bleu1).sum::<f64>() / n,
        rouge_l: rows.iter().map(|m| m.rouge_l).sum::<f64>() / n,
        embed_sim: rows.iter().map(|m| m.embed_sim).sum::<f64>() / n,
    }
}
