//! Offline consolidation: flagged episodes leave the per-user store as
//! de-identified knowledge candidates and land in the long-term graph,
//! which accumulates evidence, decays weak nodes, and forgets.
//!
//! A cycle never touches the live graph; it clones a snapshot, applies the
//! whole delta, and hands the finished graph back for an atomic publish.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::embedding::{embed, EmbeddingConfig};
use crate::error::{Error, Result};
use crate::gateway::{
    CandidateSketch, DegradationEvent, EpisodeBrief, Gateway, ParsedOutput, Role, RolePayload,
};
use crate::store::{LtmGraph, MtmStore};
use crate::types::{
    ConsolidationFlag, ItemId, LtmEdge, LtmNode, MemoryItem, NodeId, NodeKind, RelationKind,
};

pub const DEFAULT_TRIGGER_INTERVAL_TURNS: u32 = 12;
pub const DEFAULT_ANCHOR_K: usize = 5;
pub const DEFAULT_MERGE_THRESHOLD: f64 = 0.9;
pub const DEFAULT_DECAY_LAMBDA: f64 = 0.95;
pub const DEFAULT_DROP_FLOOR: f64 = 0.1;

/// Confidence granted to a freshly inserted node and to schema edges.
pub const INITIAL_CONFIDENCE: f64 = 0.5;
/// Confidence added when a candidate reinforces an existing node.
pub const CONFIDENCE_MERGE_BUMP: f64 = 0.05;
/// Minimum anchor cosine for an automatic RelatedTo link on insert.
pub const RELATED_LINK_THRESHOLD: f64 = 0.5;

/// First-person tokens the redaction table rewrites.
const FIRST_PERSON: &[&str] = &["i", "me", "my", "mine", "we", "us", "our", "ours"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsolidationConfig {
    /// Turns between automatic cycles.
    pub trigger_interval_turns: u32,
    /// Anchor probe width during integration.
    pub anchor_k: usize,
    /// Cosine at or above which a candidate reinforces an anchor instead of
    /// inserting.
    pub merge_threshold: f64,
    /// Per-cycle confidence multiplier for singly-evidenced nodes.
    pub decay_lambda: f64,
    /// Nodes below this confidence are forgotten.
    pub drop_floor: f64,
}

impl Default for ConsolidationConfig {
    fn default() -> Self {
        Self {
            trigger_interval_turns: DEFAULT_TRIGGER_INTERVAL_TURNS,
            anchor_k: DEFAULT_ANCHOR_K,
            merge_threshold: DEFAULT_MERGE_THRESHOLD,
            decay_lambda: DEFAULT_DECAY_LAMBDA,
            drop_floor: DEFAULT_DROP_FLOOR,
        }
    }
}

impl ConsolidationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trigger_interval_turns == 0 {
            return Err(Error::Config("trigger_interval_turns must be positive".into()));
        }
        if self.anchor_k == 0 {
            return Err(Error::Config("anchor_k must be positive".into()));
        }
        if !(self.merge_threshold > 0.0 && self.merge_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "merge_threshold {} outside (0, 1]",
                self.merge_threshold
            )));
        }
        if !(self.decay_lambda > 0.0 && self.decay_lambda < 1.0) {
            return Err(Error::Config(format!(
                "decay_lambda {} outside (0, 1)",
                self.decay_lambda
            )));
        }
        if !(self.drop_floor >= 0.0 && self.drop_floor < 1.0) {
            return Err(Error::Config(format!(
                "drop_floor {} outside [0, 1)",
                self.drop_floor
            )));
        }
        Ok(())
    }
}

/// De-identified statement ready for graph integration.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeCandidate {
    pub statement: String,
    pub embedding: Vec<f32>,
    pub proposed_kind: NodeKind,
    pub proposed_edges: Vec<(RelationKind, String)>,
    pub source_item_ids: Vec<ItemId>,
}

fn normalize_token(token: &str) -> String {
    token
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

fn looks_like_timestamp(normalized: &str) -> bool {
    if normalized.len() >= 4 && normalized.chars().all(|c| c.is_ascii_digit()) {
        return true;
    }
    let bytes = normalized.as_bytes();
    normalized.len() == 10
        && bytes[4] == b'-'
        && bytes[7] == b'-'
        && normalized
            .chars()
            .enumerate()
            .all(|(i, c)| if i == 4 || i == 7 { c == '-' } else { c.is_ascii_digit() })
}

/// Redaction rule table: known user ids and first-person tokens become
/// "a user" (a literal "user <id>" pair collapses to one mention),
/// timestamp-shaped tokens are dropped.
pub fn redact_summary(summary: &str, known_user_ids: &[String]) -> String {
    let ids: BTreeSet<String> = known_user_ids.iter().map(|s| s.to_lowercase()).collect();
    let mut out: Vec<String> = Vec::new();
    for token in summary.split_whitespace() {
        let normalized = normalize_token(token);
        if normalized.is_empty() {
            out.push(token.to_string());
            continue;
        }
        if looks_like_timestamp(&normalized) {
            continue;
        }
        if ids.contains(&normalized) {
            if out.last().map(|t| normalize_token(t)) == Some("user".into()) {
                out.pop();
            }
            if out.last().map(String::as_str) != Some("a user") {
                out.push("a user".to_string());
            }
            continue;
        }
        if FIRST_PERSON.contains(&normalized.as_str()) {
            if out.last().map(String::as_str) != Some("a user") {
                out.push("a user".to_string());
            }
            continue;
        }
        out.push(token.to_string());
    }
    out.join(" ").trim().to_string()
}

/// The deterministic abstraction the mock backend emits: the redacted
/// summary as a single Concept statement, no proposed edges.
pub fn mock_candidate(summary: &str, known_user_ids: &[String]) -> CandidateSketch {
    CandidateSketch {
        statement: redact_summary(summary, known_user_ids),
        kind: NodeKind::Concept,
        edges: Vec::new(),
    }
}

/// Pulls every scheduled item out of the store for this cycle: flagged
/// residents (flags cleared in place) plus the eviction handoff queue.
/// Sorted by item id so cycle output is stream-order independent.
pub fn select_batch(store: &mut MtmStore) -> Vec<MemoryItem> {
    let mut batch: Vec<MemoryItem> = Vec::new();
    for item in store.iter_mut() {
        if item.consolidation_flag.is_scheduled() {
            batch.push(item.clone());
            item.consolidation_flag = ConsolidationFlag::None;
        }
    }
    batch.extend(store.drain_handoff());
    batch.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    batch
}

/// Abstracts a batch through the consolidator backend in one call.
/// Candidates align to items positionally when the counts match; otherwise
/// every candidate is attributed to the whole batch. Empty statements are
/// discarded here.
pub fn abstract_batch(
    items: &[MemoryItem],
    gateway: &Gateway,
    embedding: &EmbeddingConfig,
    now_ms: i64,
) -> Result<(Vec<KnowledgeCandidate>, Vec<DegradationEvent>)> {
    if items.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let known_user_ids: Vec<String> = items
        .iter()
        .map(|it| it.user_id.as_str().to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let payload = RolePayload::Consolidator {
        items: items
            .iter()
            .map(|it| EpisodeBrief {
                item_id: it.item_id.as_str().to_string(),
                user_id: it.user_id.as_str().to_string(),
                summary: it.summary.clone(),
            })
            .collect(),
        known_user_ids,
    };
    let reply = gateway.complete(Role::Consolidator, &payload)?;
    let sketches = match reply.parsed {
        Some(ParsedOutput::Candidates(sketches)) => sketches,
        _ => {
            return Ok((
                Vec::new(),
                vec![DegradationEvent {
                    component: "consolidator".into(),
                    reason: "backend degraded".into(),
                    detail: reply.detail.unwrap_or_else(|| "no parsed candidates".into()),
                    at_ms: now_ms,
                }],
            ))
        }
    };

    let aligned = sketches.len() == items.len();
    let all_ids: Vec<ItemId> = items.iter().map(|it| it.item_id.clone()).collect();
    let mut candidates = Vec::new();
    for (i, sketch) in sketches.into_iter().enumerate() {
        let statement = sketch.statement.trim().to_string();
        if statement.is_empty() {
            continue;
        }
        let vector = embed(&statement, embedding)?;
        candidates.push(KnowledgeCandidate {
            statement,
            embedding: vector,
            proposed_kind: sketch.kind,
            proposed_edges: sketch.edges,
            source_item_ids: if aligned {
                vec![all_ids[i].clone()]
            } else {
                all_ids.clone()
            },
        });
    }
    Ok((candidates, Vec::new()))
}

/// Single-episode abstraction, for callers outside the cycle loop.
pub fn abstract_episode(
    item: &MemoryItem,
    gateway: &Gateway,
    embedding: &EmbeddingConfig,
    now_ms: i64,
) -> Result<(Vec<KnowledgeCandidate>, Vec<DegradationEvent>)> {
    if item.summary.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    abstract_batch(std::slice::from_ref(item), gateway, embedding, now_ms)
}

/// Tracks merges already applied in the current batch so repeated
/// candidates reinforce a node at most once per cycle.
#[derive(Debug, Default)]
pub struct BatchState {
    merged_targets: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IntegrateOutcome {
    Inserted(NodeId),
    Merged(NodeId),
    Dropped,
}

/// Integrates one candidate: reinforce the best anchor above the merge
/// threshold, otherwise insert a new node linked to nearby anchors and to
/// any proposed targets that resolve by label.
pub fn integrate_candidate(
    candidate: &KnowledgeCandidate,
    graph: &mut LtmGraph,
    config: &ConsolidationConfig,
    state: &mut BatchState,
    now_ms: i64,
) -> Result<IntegrateOutcome> {
    if candidate.statement.trim().is_empty() {
        return Ok(IntegrateOutcome::Dropped);
    }
    let anchors = graph.nearest(&candidate.embedding, config.anchor_k)?;

    if let Some((anchor_id, score)) = anchors.first() {
        if *score >= config.merge_threshold {
            if state.merged_targets.contains(anchor_id) {
                return Ok(IntegrateOutcome::Dropped);
            }
            let node = graph
                .get_mut(anchor_id)
                .ok_or_else(|| Error::UnknownItem(anchor_id.as_str().to_string()))?;
            node.evidence_count += 1;
            node.confidence = (node.confidence + CONFIDENCE_MERGE_BUMP).min(1.0);
            node.updated_at = now_ms;
            state.merged_targets.insert(anchor_id.clone());
            return Ok(IntegrateOutcome::Merged(anchor_id.clone()));
        }
    }

    let node_id = graph.allocate_id();
    graph.insert_node(LtmNode {
        node_id: node_id.clone(),
        kind: candidate.proposed_kind,
        label: candidate.statement.clone(),
        embedding: candidate.embedding.clone(),
        confidence: INITIAL_CONFIDENCE,
        evidence_count: 1,
        created_at: now_ms,
        updated_at: now_ms,
    })?;
    for (anchor_id, score) in &anchors {
        if *score >= RELATED_LINK_THRESHOLD {
            graph.add_edge(LtmEdge {
                src: node_id.clone(),
                dst: anchor_id.clone(),
                relation: RelationKind::RelatedTo,
                confidence: *score,
            })?;
        }
    }
    for (relation, target_label) in &candidate.proposed_edges {
        // An unresolvable or self-referential target skips the edge, never
        // the node.
        if let Some(target) = graph.find_by_label(target_label) {
            let dst = target.node_id.clone();
            if dst == node_id {
                continue;
            }
            graph.add_edge(LtmEdge {
                src: node_id.clone(),
                dst,
                relation: *relation,
                confidence: INITIAL_CONFIDENCE,
            })?;
        }
    }
    Ok(IntegrateOutcome::Inserted(node_id))
}

/// One decay sweep: singly-evidenced nodes lose confidence by the decay
/// factor, anything under the floor is removed with its edges.
pub fn decay_and_forget(graph: &mut LtmGraph, config: &ConsolidationConfig) -> Vec<NodeId> {
    let singles: Vec<NodeId> = graph
        .nodes()
        .iter()
        .filter(|n| n.evidence_count == 1)
        .map(|n| n.node_id.clone())
        .collect();
    for id in &singles {
        if let Some(node) = graph.get_mut(id) {
            node.confidence *= config.decay_lambda;
        }
    }
    let doomed: Vec<NodeId> = graph
        .nodes()
        .iter()
        .filter(|n| n.confidence < config.drop_floor)
        .map(|n| n.node_id.clone())
        .collect();
    for id in &doomed {
        graph.remove_node(id);
    }
    doomed
}

/// Outcome counts for one cycle.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CycleReport {
    pub batch_size: usize,
    pub candidates: usize,
    pub inserted: usize,
    pub merged: usize,
    pub dropped: usize,
    pub removed_by_decay: Vec<NodeId>,
    #[serde(skip)]
    pub events: Vec<DegradationEvent>,
}

/// Abstraction, integration and decay for an already selected batch,
/// against a snapshot of the graph. Runs without touching the MTM store, so
/// a service can keep serving queries while the cycle works.
pub fn run_cycle_on_batch(
    batch: &[MemoryItem],
    graph: &LtmGraph,
    gateway: &Gateway,
    config: &ConsolidationConfig,
    embedding: &EmbeddingConfig,
    now_ms: i64,
) -> Result<(LtmGraph, CycleReport)> {
    config.validate()?;
    let (candidates, events) = abstract_batch(batch, gateway, embedding, now_ms)?;

    let mut next = graph.clone();
    let mut state = BatchState::default();
    let mut report = CycleReport {
        batch_size: batch.len(),
        candidates: candidates.len(),
        events,
        ..CycleReport::default()
    };
    for candidate in &candidates {
        match integrate_candidate(candidate, &mut next, config, &mut state, now_ms)? {
            IntegrateOutcome::Inserted(_) => report.inserted += 1,
            IntegrateOutcome::Merged(_) => report.merged += 1,
            IntegrateOutcome::Dropped => report.dropped += 1,
        }
    }
    report.removed_by_decay = decay_and_forget(&mut next, config);
    Ok((next, report))
}

/// Runs one full cycle against a snapshot of the graph. Returns the
/// replacement graph, or None when the batch was empty and nothing at all
/// may change. The caller owns the atomic publish.
pub fn run_cycle(
    mtm: &mut MtmStore,
    graph: &LtmGraph,
    gateway: &Gateway,
    config: &ConsolidationConfig,
    embedding: &EmbeddingConfig,
    now_ms: i64,
) -> Result<(Option<LtmGraph>, CycleReport)> {
    config.validate()?;
    let batch = select_batch(mtm);
    if batch.is_empty() {
        return Ok((None, CycleReport::default()));
    }
    let (next, report) = run_cycle_on_batch(&batch, graph, gateway, config, embedding, now_ms)?;
    Ok((Some(next), report))
}
