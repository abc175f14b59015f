//! Two-stage retrieval: a metadata-constrained coarse pass fans the plan's
//! queries out to their routed stores and pools up to 2K candidates; a
//! semantic filter then keeps at most K.
//!
//! The selector backend only ever selects. It sees candidate ids and text,
//! returns ids, and anything it says that is not an id from the pool is
//! dropped and logged.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embedding::cosine;
use crate::error::{Error, Result};
use crate::gateway::{CandidateBrief, DegradationEvent, Gateway, ParsedOutput, Role, RolePayload};
use crate::index::{rank_top_k, Ranked, StoreKind};
use crate::planner::RetrievalPlan;
use crate::store::{LtmGraph, MtmStore};
use crate::types::{ItemId, NodeId};

/// Reference into one of the two persistent stores.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemRef {
    Mtm(ItemId),
    Ltm(NodeId),
}

impl ItemRef {
    pub fn store(&self) -> StoreKind {
        match self {
            ItemRef::Mtm(_) => StoreKind::Mtm,
            ItemRef::Ltm(_) => StoreKind::Ltm,
        }
    }

    pub fn id_str(&self) -> &str {
        match self {
            ItemRef::Mtm(id) => id.as_str(),
            ItemRef::Ltm(id) => id.as_str(),
        }
    }
}

/// One pooled candidate, carrying enough of the source row that stage two
/// and prompt assembly never re-read the stores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub item: ItemRef,
    pub source_store: StoreKind,
    /// Index of the plan query this candidate answered first.
    pub source_hq_index: usize,
    pub coarse_score: f64,
    pub created_at: i64,
    pub summary: String,
    #[serde(skip)]
    pub embedding: Vec<f32>,
}

/// Stage-1 output: the deduplicated coarse pool, capped at `budget` = 2K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub entries: Vec<CandidateEntry>,
    pub budget: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedEntry {
    pub item: ItemRef,
    pub final_score: f64,
    /// Which plan query this item answers, as "hq<index>".
    pub justification_tag: String,
    pub summary: String,
}

/// Stage-2 output: at most k entries, always a subset of the pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedSet {
    pub entries: Vec<RetrievedEntry>,
    pub k: usize,
}

/// Stage-2 operating mode. Bypass keeps the top of the coarse pool as-is,
/// which exists so the filter's contribution can be measured, not skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage2Mode {
    Model,
    Fallback,
    Bypass,
}

impl std::str::FromStr for Stage2Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model" => Ok(Stage2Mode::Model),
            "fallback" => Ok(Stage2Mode::Fallback),
            "bypass" => Ok(Stage2Mode::Bypass),
            other => Err(Error::Config(format!(
                "stage2 must be model|fallback|bypass, got '{other}'"
            ))),
        }
    }
}

/// Everything one retrieval produced, including the latency fragment the
/// metrics log wants.
#[derive(Debug, Clone)]
pub struct RetrievalOutcome {
    pub retrieved: RetrievedSet,
    pub pool: CandidateSet,
    pub prompt: String,
    pub retrieval_micros: u128,
    pub events: Vec<DegradationEvent>,
}

/// Coarse pass: each query searches its routed store under the plan filter
/// with its own quota; the union is deduplicated (first query wins) and
/// truncated to 2K by score.
pub fn stage1_coarse(
    plan: &RetrievalPlan,
    mtm: &mut MtmStore,
    ltm: &LtmGraph,
    now_ms: i64,
) -> Result<CandidateSet> {
    plan.validate()?;
    let mut pool: BTreeMap<ItemRef, CandidateEntry> = BTreeMap::new();
    for (hq_index, hq) in plan.hqs.iter().enumerate() {
        match hq.route {
            StoreKind::Mtm => {
                let hits = mtm.search(&hq.embedding, &plan.filter, hq.quota, now_ms)?;
                for (id, score) in hits {
                    let item = mtm
                        .get(&plan.filter.user_id, &id)
                        .ok_or_else(|| Error::UnknownItem(id.as_str().to_string()))?;
                    pool.entry(ItemRef::Mtm(id.clone())).or_insert(CandidateEntry {
                        item: ItemRef::Mtm(id),
                        source_store: StoreKind::Mtm,
                        source_hq_index: hq_index,
                        coarse_score: score,
                        created_at: item.created_at,
                        summary: item.summary.clone(),
                        embedding: item.embedding.clone(),
                    });
                }
            }
            StoreKind::Ltm => {
                let hits = ltm.search(&hq.embedding, &plan.filter, hq.quota)?;
                for (id, score) in hits {
                    let node = ltm
                        .get(&id)
                        .ok_or_else(|| Error::UnknownItem(id.as_str().to_string()))?;
                    pool.entry(ItemRef::Ltm(id.clone())).or_insert(CandidateEntry {
                        item: ItemRef::Ltm(id),
                        source_store: StoreKind::Ltm,
                        source_hq_index: hq_index,
                        coarse_score: score,
                        created_at: node.created_at,
                        summary: node.label.clone(),
                        embedding: node.embedding.clone(),
                    });
                }
            }
        }
    }

    let budget = plan.pool_budget();
    let rows: Vec<Ranked<ItemRef>> = pool
        .values()
        .map(|e| Ranked {
            id: e.item.clone(),
            score: e.coarse_score,
            created_at: e.created_at,
        })
        .collect();
    let entries = rank_top_k(rows, budget)
        .into_iter()
        .map(|row| pool.remove(&row.id).expect("ranked id came from the pool"))
        .collect();
    Ok(CandidateSet { entries, budget })
}

/// Best cosine between a candidate and any plan query, with the index of
/// the query that achieved it.
fn fallback_score(plan: &RetrievalPlan, entry: &CandidateEntry) -> Result<(f64, usize)> {
    let mut best = f64::NEG_INFINITY;
    let mut best_hq = 0;
    for (i, hq) in plan.hqs.iter().enumerate() {
        let score = cosine(&entry.embedding, &hq.embedding)?;
        if score > best {
            best = score;
            best_hq = i;
        }
    }
    Ok((best, best_hq))
}

fn tag(hq_index: usize) -> String {
    format!("hq{hq_index}")
}

/// Ranks pool positions by fallback score under the global tie-break and
/// returns the first `k` in that order.
fn fallback_order(
    plan: &RetrievalPlan,
    pool: &CandidateSet,
    positions: &[usize],
    k: usize,
) -> Result<Vec<(usize, f64, usize)>> {
    let mut scored = Vec::with_capacity(positions.len());
    for &pos in positions {
        let entry = &pool.entries[pos];
        let (score, best_hq) = fallback_score(plan, entry)?;
        scored.push((pos, score, best_hq, entry.created_at, entry.item.clone()));
    }
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(b.3.cmp(&a.3))
            .then(a.4.cmp(&b.4))
    });
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(pos, score, best_hq, _, _)| (pos, score, best_hq))
        .collect())
}

/// Semantic filter down to at most k. Exactly one selector call happens in
/// model mode, none otherwise; every failure degrades to the cosine
/// fallback instead of losing the query.
pub fn stage2_filter(
    plan: &RetrievalPlan,
    pool: &CandidateSet,
    mode: Stage2Mode,
    gateway: &Gateway,
    now_ms: i64,
) -> Result<(RetrievedSet, Vec<DegradationEvent>)> {
    let k = plan.k;
    let mut events = Vec::new();

    let entries = match mode {
        Stage2Mode::Bypass => {
            // Pool order is already the coarse ranking.
            let mut kept = Vec::new();
            for entry in pool.entries.iter().take(k) {
                kept.push(RetrievedEntry {
                    item: entry.item.clone(),
                    final_score: entry.coarse_score,
                    justification_tag: tag(entry.source_hq_index),
                    summary: entry.summary.clone(),
                });
            }
            kept
        }
        Stage2Mode::Fallback => {
            let positions: Vec<usize> = (0..pool.entries.len()).collect();
            fallback_order(plan, pool, &positions, k)?
                .into_iter()
                .map(|(pos, score, best_hq)| {
                    let entry = &pool.entries[pos];
                    RetrievedEntry {
                        item: entry.item.clone(),
                        final_score: score,
                        justification_tag: tag(best_hq),
                        summary: entry.summary.clone(),
                    }
                })
                .collect()
        }
        Stage2Mode::Model => {
            let payload = RolePayload::Selector {
                hqs: plan.hqs.iter().map(|hq| hq.text.clone()).collect(),
                k,
                candidates: pool
                    .entries
                    .iter()
                    .map(|e| CandidateBrief {
                        id: e.item.id_str().to_string(),
                        store: e.source_store.as_str().to_string(),
                        text: e.summary.clone(),
                        created_at: e.created_at,
                    })
                    .collect(),
            };
            let reply = gateway.complete(Role::Selector, &payload)?;
            match reply.parsed {
                Some(ParsedOutput::Selection { keep_ids }) => {
                    let by_id: BTreeMap<&str, usize> = pool
                        .entries
                        .iter()
                        .enumerate()
                        .map(|(pos, e)| (e.item.id_str(), pos))
                        .collect();
                    let mut kept_positions = Vec::new();
                    let mut foreign = Vec::new();
                    for id in &keep_ids {
                        match by_id.get(id.as_str()) {
                            Some(&pos) if !kept_positions.contains(&pos) => {
                                kept_positions.push(pos)
                            }
                            Some(_) => {}
                            None => foreign.push(id.clone()),
                        }
                    }
                    if !foreign.is_empty() {
                        events.push(DegradationEvent {
                            component: "selector".into(),
                            reason: "ids outside candidate pool dropped".into(),
                            detail: foreign.join(","),
                            at_ms: now_ms,
                        });
                    }
                    if kept_positions.len() > k {
                        events.push(DegradationEvent {
                            component: "selector".into(),
                            reason: "selection exceeded budget".into(),
                            detail: format!("{} kept, budget {}", kept_positions.len(), k),
                            at_ms: now_ms,
                        });
                        fallback_order(plan, pool, &kept_positions, k)?
                            .into_iter()
                            .map(|(pos, score, best_hq)| {
                                let entry = &pool.entries[pos];
                                Ok(RetrievedEntry {
                                    item: entry.item.clone(),
                                    final_score: score,
                                    justification_tag: tag(best_hq),
                                    summary: entry.summary.clone(),
                                })
                            })
                            .collect::<Result<Vec<_>>>()?
                    } else {
                        let mut kept = Vec::new();
                        for pos in kept_positions {
                            let entry = &pool.entries[pos];
                            let (score, best_hq) = fallback_score(plan, entry)?;
                            kept.push(RetrievedEntry {
                                item: entry.item.clone(),
                                final_score: score,
                                justification_tag: tag(best_hq),
                                summary: entry.summary.clone(),
                            });
                        }
                        kept
                    }
                }
                _ => {
                    events.push(DegradationEvent {
                        component: "selector".into(),
                        reason: "backend degraded".into(),
                        detail: reply.detail.unwrap_or_else(|| "no parsed selection".into()),
                        at_ms: now_ms,
                    });
                    let positions: Vec<usize> = (0..pool.entries.len()).collect();
                    fallback_order(plan, pool, &positions, k)?
                        .into_iter()
                        .map(|(pos, score, best_hq)| {
                            let entry = &pool.entries[pos];
                            RetrievedEntry {
                                item: entry.item.clone(),
                                final_score: score,
                                justification_tag: tag(best_hq),
                                summary: entry.summary.clone(),
                            }
                        })
                        .collect()
                }
            }
        }
    };

    Ok((
        RetrievedSet { entries, k },
        events,
    ))
}

/// Renders the retrieved memories as the prompt block the answer model
/// sees. Deterministic: same set, same bytes.
pub fn build_prompt(retrieved: &RetrievedSet) -> String {
    if retrieved.entries.is_empty() {
        return "relevant memories: none".to_string();
    }
    let mut out = String::from("relevant memories:");
    for entry in &retrieved.entries {
        out.push_str("\n- [");
        out.push_str(&entry.justification_tag);
        out.push_str("] ");
        out.push_str(&entry.summary);
    }
    out
}

/// Full retrieval: coarse pool, semantic filter, prompt assembly. The
/// reported duration covers all three, generation excluded.
pub fn retrieve(
    plan: &RetrievalPlan,
    mtm: &mut MtmStore,
    ltm: &LtmGraph,
    mode: Stage2Mode,
    gateway: &Gateway,
    now_ms: i64,
) -> Result<RetrievalOutcome> {
    let started = Instant::now();
    let pool = stage1_coarse(plan, mtm, ltm, now_ms)?;
    let (retrieved, events) = stage2_filter(plan, &pool, mode, gateway, now_ms)?;
    let prompt = build_prompt(&retrieved);
    Ok(RetrievalOutcome {
        retrieved,
        pool,
        prompt,
        retrieval_micros: started.elapsed().as_micros(),
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{embed, EmbeddingConfig};
    use crate::gateway::{BackendKind, RoleConfig, ScriptedFixtures};
    use crate::index::MetadataFilter;
    use crate::planner::{HypotheticalQuery, Intent, Horizon, Personalization, RetrievalPlan};
    use crate::types::{LtmNode, MemoryItem, NodeKind};

    const DIM: usize = 32;

    fn ecfg() -> EmbeddingConfig {
        EmbeddingConfig::mock(DIM)
    }

    fn mtm_with(texts: &[&str]) -> MtmStore {
        let mut store = MtmStore::new(DIM);
        for (i, text) in texts.iter().enumerate() {
            let id = store.allocate_id();
            let item =
                MemoryItem::new(id, "u1", *text, embed(text, &ecfg()).unwrap(), i as i64);
            store.insert(item).unwrap();
        }
        store
    }

    fn ltm_with(labels: &[&str]) -> LtmGraph {
        let mut graph = LtmGraph::new(DIM);
        for (i, label) in labels.iter().enumerate() {
            let id = graph.allocate_id();
            graph
                .insert_node(LtmNode {
                    node_id: id,
                    kind: NodeKind::Concept,
                    label: (*label).into(),
                    embedding: embed(label, &ecfg()).unwrap(),
                    confidence: 0.5,
                    evidence_count: 1,
                    created_at: i as i64,
                    updated_at: i as i64,
                })
                .unwrap();
        }
        graph
    }

    fn plan_for(queries: &[(&str, StoreKind, usize)], k: usize) -> RetrievalPlan {
        RetrievalPlan {
            hqs: queries
                .iter()
                .map(|(text, route, quota)| HypotheticalQuery {
                    text: (*text).to_string(),
                    route: *route,
                    quota: *quota,
                    embedding: embed(text, &ecfg()).unwrap(),
                })
                .collect(),
            filter: MetadataFilter::for_user("u1"),
            k,
            intent: Intent {
                personalization: Personalization::High,
                horizon: Horizon::Mixed,
            },
        }
    }

    #[test]
    fn ample_store_fills_the_pool_to_twice_k() {
        let texts: Vec<String> = (0..20).map(|i| format!("distinct note number {i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let mut mtm = mtm_with(&refs);
        let ltm = LtmGraph::new(DIM);
        let plan = plan_for(
            &[
                ("note number three", StoreKind::Mtm, 5),
                ("note number seven", StoreKind::Mtm, 5),
            ],
            5,
        );
        let pool = stage1_coarse(&plan, &mut mtm, &ltm, 100).unwrap();
        assert_eq!(pool.budget, 10);
        assert!(pool.entries.len() <= 10);
        // Two disjoint-enough quotas over 20 distinct notes: dedup may drop
        // overlap, but the pool must stay meaningfully populated.
        assert!(pool.entries.len() >= 5, "got {}", pool.entries.len());
    }

    #[test]
    fn empty_stores_give_empty_pool_and_empty_result() {
        let mut mtm = MtmStore::new(DIM);
        let ltm = LtmGraph::new(DIM);
        let plan = plan_for(&[("anything at all", StoreKind::Mtm, 10)], 5);
        let outcome = retrieve(
            &plan,
            &mut mtm,
            &ltm,
            Stage2Mode::Fallback,
            &Gateway::mock(),
            0,
        )
        .unwrap();
        assert!(outcome.pool.entries.is_empty());
        assert!(outcome.retrieved.entries.is_empty());
        assert_eq!(outcome.prompt, "relevant memories: none");
    }

    // Set-union oracle: brute-force per-query scans unioned with min-index
    // attribution, then the global sort and cut.
    #[test]
    fn dedup_attributes_to_the_lowest_query_index() {
        let texts = [
            "casey prefers the color teal",
            "morgan collects jazz records",
            "rowan rides a green bicycle",
            "casey plays chess on sundays",
        ];
        let mut mtm = mtm_with(&texts);
        let snapshot: Vec<MemoryItem> = mtm.user_items(&"u1".into()).to_vec();
        let ltm = LtmGraph::new(DIM);
        // Same text for both queries: identical hit lists, full overlap.
        let plan = plan_for(
            &[
                ("which color does casey prefer", StoreKind::Mtm, 3),
                ("which color does casey prefer", StoreKind::Mtm, 3),
            ],
            3,
        );
        let pool = stage1_coarse(&plan, &mut mtm, &ltm, 50).unwrap();

        let mut oracle: BTreeMap<String, (usize, f64, i64)> = BTreeMap::new();
        for (hq_index, hq) in plan.hqs.iter().enumerate() {
            let mut scored: Vec<(f64, i64, String)> = snapshot
                .iter()
                .map(|item| {
                    (
                        cosine(&item.embedding, &hq.embedding).unwrap(),
                        item.created_at,
                        item.item_id.as_str().to_string(),
                    )
                })
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
            for (score, created, id) in scored.into_iter().take(hq.quota) {
                oracle.entry(id).or_insert((hq_index, score, created));
            }
        }
        let mut expected: Vec<(f64, i64, String, usize)> = oracle
            .into_iter()
            .map(|(id, (hq, score, created))| (score, created, id, hq))
            .collect();
        expected.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
        expected.truncate(plan.pool_budget());

        assert_eq!(pool.entries.len(), expected.len());
        for (entry, (score, _, id, hq)) in pool.entries.iter().zip(&expected) {
            assert_eq!(entry.item.id_str(), id);
            assert_eq!(entry.source_hq_index, *hq);
            assert_eq!(entry.source_hq_index, 0, "full overlap: first query wins");
            assert!((entry.coarse_score - score).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_truncates_to_budget_under_pressure() {
        // Three queries with disjoint hit families: quota ceiling puts the
        // union at up to 6 rows, one over the 2k = 4 budget.
        let mut texts = Vec::new();
        for family in ["alpha", "beta", "gamma"] {
            for i in 0..4 {
                texts.push(format!("{family} family note {i}"));
            }
        }
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let mut mtm = mtm_with(&refs);
        let ltm = LtmGraph::new(DIM);
        let plan = plan_for(
            &[
                ("alpha family", StoreKind::Mtm, 2),
                ("beta family", StoreKind::Mtm, 2),
                ("gamma family", StoreKind::Mtm, 2),
            ],
            2,
        );
        let pool = stage1_coarse(&plan, &mut mtm, &ltm, 50).unwrap();
        assert_eq!(pool.budget, 4);
        assert_eq!(pool.entries.len(), 4);
    }

    #[test]
    fn pool_spans_both_stores() {
        let mut mtm = mtm_with(&["casey prefers the color teal"]);
        let ltm = ltm_with(&["a user prefers the color teal"]);
        let plan = RetrievalPlan {
            hqs: vec![
                HypotheticalQuery {
                    text: "color casey prefers".into(),
                    route: StoreKind::Mtm,
                    quota: 5,
                    embedding: embed("color casey prefers", &ecfg()).unwrap(),
                },
                HypotheticalQuery {
                    text: "preferred colors".into(),
                    route: StoreKind::Ltm,
                    quota: 5,
                    embedding: embed("preferred colors", &ecfg()).unwrap(),
                },
            ],
            filter: MetadataFilter::for_user("u1"),
            k: 5,
            intent: Intent {
                personalization: Personalization::High,
                horizon: Horizon::Mixed,
            },
        };
        let pool = stage1_coarse(&plan, &mut mtm, &ltm, 0).unwrap();
        let stores: Vec<StoreKind> = pool.entries.iter().map(|e| e.source_store).collect();
        assert!(stores.contains(&StoreKind::Mtm));
        assert!(stores.contains(&StoreKind::Ltm));
    }

    #[test]
    fn small_pool_passes_through_stage_two() {
        let mut mtm = mtm_with(&["only note one", "only note two"]);
        let ltm = LtmGraph::new(DIM);
        let plan = plan_for(&[("only note", StoreKind::Mtm, 10)], 5);
        let outcome = retrieve(
            &plan,
            &mut mtm,
            &ltm,
            Stage2Mode::Fallback,
            &Gateway::mock(),
            0,
        )
        .unwrap();
        assert_eq!(outcome.retrieved.entries.len(), 2);
    }

    // Brute-force scoring oracle: max cosine against every query embedding,
    // recomputed longhand per candidate.
    #[test]
    fn fallback_selector_matches_max_cosine_oracle() {
        let texts: Vec<String> = (0..10).map(|i| format!("candidate text {i} about topic {}", i % 3)).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let mut mtm = mtm_with(&refs);
        let ltm = LtmGraph::new(DIM);
        let plan = plan_for(
            &[
                ("topic 0 overview", StoreKind::Mtm, 5),
                ("topic 1 overview", StoreKind::Mtm, 5),
            ],
            5,
        );
        let pool = stage1_coarse(&plan, &mut mtm, &ltm, 0).unwrap();
        let (result, events) =
            stage2_filter(&plan, &pool, Stage2Mode::Fallback, &Gateway::mock(), 0).unwrap();
        assert!(events.is_empty());
        assert_eq!(result.entries.len(), 5.min(pool.entries.len()));

        let mut oracle: Vec<(f64, i64, ItemRef)> = pool
            .entries
            .iter()
            .map(|e| {
                let best = plan
                    .hqs
                    .iter()
                    .map(|hq| cosine(&e.embedding, &hq.embedding).unwrap())
                    .fold(f64::NEG_INFINITY, f64::max);
                (best, e.created_at, e.item.clone())
            })
            .collect();
        oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
        let expected: Vec<ItemRef> = oracle.into_iter().take(5).map(|(_, _, r)| r).collect();
        let got: Vec<ItemRef> = result.entries.iter().map(|e| e.item.clone()).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn model_selector_keeps_the_planted_item_and_runs_once() {
        let mut texts = vec!["casey prefers the color teal".to_string()];
        for i in 0..15 {
            texts.push(format!("unrelated filler about gardening plot {i}"));
        }
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let mut mtm = mtm_with(&refs);
        let ltm = LtmGraph::new(DIM);
        let gateway = Gateway::mock();
        let plan = plan_for(&[("which color does casey prefer", StoreKind::Mtm, 10)], 5);
        let outcome = retrieve(&plan, &mut mtm, &ltm, Stage2Mode::Model, &gateway, 0).unwrap();
        assert_eq!(gateway.calls(Role::Selector), 1);
        assert!(outcome
            .retrieved
            .entries
            .iter()
            .any(|e| e.summary == "casey prefers the color teal"));
        assert!(outcome.retrieved.entries.len() <= 5);
        assert!(outcome.prompt.contains("casey prefers the color teal"));
        for entry in &outcome.retrieved.entries {
            assert!(entry.justification_tag.starts_with("hq"));
        }
    }

    fn scripted_selector(pool: &CandidateSet, plan: &RetrievalPlan, response: &str) -> Gateway {
        let payload = RolePayload::Selector {
            hqs: plan.hqs.iter().map(|hq| hq.text.clone()).collect(),
            k: plan.k,
            candidates: pool
                .entries
                .iter()
                .map(|e| CandidateBrief {
                    id: e.item.id_str().to_string(),
                    store: e.source_store.as_str().to_string(),
                    text: e.summary.clone(),
                    created_at: e.created_at,
                })
                .collect(),
        };
        let mut fixtures = ScriptedFixtures::default();
        fixtures.push(Role::Selector, &payload.hash(), response);
        Gateway::new([RoleConfig::new(Role::Selector, BackendKind::Scripted)])
            .unwrap()
            .with_fixtures(fixtures)
    }

    #[test]
    fn foreign_ids_are_dropped_and_logged() {
        let mut mtm = mtm_with(&["note alpha", "note beta"]);
        let ltm = LtmGraph::new(DIM);
        let plan = plan_for(&[("note", StoreKind::Mtm, 4)], 2);
        let pool = stage1_coarse(&plan, &mut mtm, &ltm, 0).unwrap();
        let real_id = pool.entries[0].item.id_str().to_string();
        let gateway = scripted_selector(
            &pool,
            &plan,
            &format!(r#"{{"keep_ids":["zz9","{real_id}"]}}"#),
        );
        let (result, events) =
            stage2_filter(&plan, &pool, Stage2Mode::Model, &gateway, 7).unwrap();
        assert_eq!(result.entries.len(), 1);
        assert_eq!(result.entries[0].item.id_str(), real_id);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].component, "selector");
        assert!(events[0].detail.contains("zz9"));
        assert_eq!(events[0].at_ms, 7);
    }

    #[test]
    fn oversized_selection_truncates_by_fallback_score() {
        let texts: Vec<String> = (0..8).map(|i| format!("pool note {i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let mut mtm = mtm_with(&refs);
        let ltm = LtmGraph::new(DIM);
        let plan = plan_for(&[("pool note three", StoreKind::Mtm, 8)], 4);
        let pool = stage1_coarse(&plan, &mut mtm, &ltm, 0).unwrap();
        let all_ids: Vec<String> = pool
            .entries
            .iter()
            .map(|e| format!("\"{}\"", e.item.id_str()))
            .collect();
        let gateway = scripted_selector(
            &pool,
            &plan,
            &format!(r#"{{"keep_ids":[{}]}}"#, all_ids.join(",")),
        );
        let (result, events) =
            stage2_filter(&plan, &pool, Stage2Mode::Model, &gateway, 0).unwrap();
        assert_eq!(result.entries.len(), 4);
        assert!(events.iter().any(|e| e.reason.contains("exceeded")));
        // Truncation used the fallback ordering: best cosine first.
        let (fallback, _) =
            stage2_filter(&plan, &pool, Stage2Mode::Fallback, &Gateway::mock(), 0).unwrap();
        let expected: Vec<&str> = fallback.entries.iter().map(|e| e.item.id_str()).collect();
        let got: Vec<&str> = result.entries.iter().map(|e| e.item.id_str()).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn degraded_selector_falls_back_with_event() {
        let mut mtm = mtm_with(&["note alpha", "note beta", "note gamma"]);
        let ltm = LtmGraph::new(DIM);
        let plan = plan_for(&[("note", StoreKind::Mtm, 6)], 3);
        let pool = stage1_coarse(&plan, &mut mtm, &ltm, 0).unwrap();
        let gateway = scripted_selector(&pool, &plan, "garbage response");
        let (result, events) =
            stage2_filter(&plan, &pool, Stage2Mode::Model, &gateway, 0).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].reason, "backend degraded");
        let (fallback, _) =
            stage2_filter(&plan, &pool, Stage2Mode::Fallback, &Gateway::mock(), 0).unwrap();
        assert_eq!(
            result.entries.iter().map(|e| e.item.id_str()).collect::<Vec<_>>(),
            fallback.entries.iter().map(|e| e.item.id_str()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn bypass_takes_the_coarse_head() {
        let texts: Vec<String> = (0..6).map(|i| format!("ranked note {i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let mut mtm = mtm_with(&refs);
        let ltm = LtmGraph::new(DIM);
        let plan = plan_for(&[("ranked note two", StoreKind::Mtm, 6)], 3);
        let pool = stage1_coarse(&plan, &mut mtm, &ltm, 0).unwrap();
        let (result, events) =
            stage2_filter(&plan, &pool, Stage2Mode::Bypass, &Gateway::mock(), 0).unwrap();
        assert!(events.is_empty());
        let expected: Vec<&str> = pool.entries[..3].iter().map(|e| e.item.id_str()).collect();
        let got: Vec<&str> = result.entries.iter().map(|e| e.item.id_str()).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn retrieval_bounds_hold_over_random_configurations() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(61);
        for round in 0..30 {
            let n_items = rng.gen_range(0..40usize);
            let texts: Vec<String> = (0..n_items)
                .map(|i| format!("note {i} about topic {}", i % 7))
                .collect();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let mut mtm = mtm_with(&refs);
            let ltm = ltm_with(&["a user reads maps", "a user prefers tea"]);
            let k = rng.gen_range(1..=8usize);
            let plan = RetrievalPlan {
                hqs: vec![
                    HypotheticalQuery {
                        text: "topic 3 notes".into(),
                        route: StoreKind::Mtm,
                        quota: k,
                        embedding: embed("topic 3 notes", &ecfg()).unwrap(),
                    },
                    HypotheticalQuery {
                        text: "tea preference".into(),
                        route: StoreKind::Ltm,
                        quota: k,
                        embedding: embed("tea preference", &ecfg()).unwrap(),
                    },
                ],
                filter: MetadataFilter::for_user("u1"),
                k,
                intent: Intent {
                    personalization: Personalization::High,
                    horizon: Horizon::Mixed,
                },
            };
            let mode = match round % 3 {
                0 => Stage2Mode::Model,
                1 => Stage2Mode::Fallback,
                _ => Stage2Mode::Bypass,
            };
            let pool = stage1_coarse(&plan, &mut mtm, &ltm, 0).unwrap();
            let (result, _) = stage2_filter(&plan, &pool, mode, &Gateway::mock(), 0).unwrap();
            assert!(pool.entries.len() <= 2 * k);
            assert!(result.entries.len() <= k);
            for entry in &result.entries {
                assert!(pool.entries.iter().any(|c| c.item == entry.item));
            }
        }
    }

    #[test]
    fn stage_two_never_mutates_stores_or_pool_content() {
        let mut mtm = mtm_with(&["note alpha", "note beta", "note gamma"]);
        let ltm = ltm_with(&["a user walks daily"]);
        let plan = plan_for(&[("note", StoreKind::Mtm, 6)], 3);
        let pool = stage1_coarse(&plan, &mut mtm, &ltm, 0).unwrap();
        let mtm_before = serde_json::to_string(mtm.user_items(&"u1".into())).unwrap();
        let ltm_before = serde_json::to_string(ltm.nodes()).unwrap();
        let pool_before = serde_json::to_string(&pool).unwrap();
        for mode in [Stage2Mode::Model, Stage2Mode::Fallback, Stage2Mode::Bypass] {
            stage2_filter(&plan, &pool, mode, &Gateway::mock(), 0).unwrap();
        }
        assert_eq!(serde_json::to_string(mtm.user_items(&"u1".into())).unwrap(), mtm_before);
        assert_eq!(serde_json::to_string(ltm.nodes()).unwrap(), ltm_before);
        assert_eq!(serde_json::to_string(&pool).unwrap(), pool_before);
    }

    // Golden determinism: rebuild the same 50-item store twice and compare
    // the full serialized result.
    #[test]
    fn fixture_store_retrieval_is_byte_identical_across_runs() {
        let run = || {
            let texts: Vec<String> = (0..50)
                .map(|i| format!("fixture note {i} about subject {}", i % 11))
                .collect();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let mut mtm = mtm_with(&refs);
            let ltm = ltm_with(&["a user studies subject 4"]);
            let plan = plan_for(
                &[
                    ("subject 4 notes", StoreKind::Mtm, 5),
                    ("subject 4 knowledge", StoreKind::Ltm, 5),
                ],
                5,
            );
            let outcome = retrieve(
                &plan,
                &mut mtm,
                &ltm,
                Stage2Mode::Model,
                &Gateway::mock(),
                1_234,
            )
            .unwrap();
            (
                serde_json::to_string(&outcome.retrieved).unwrap(),
                outcome.prompt,
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn planted_relevant_item_survives_both_stages() {
        let mut texts = vec!["casey prefers the color teal".to_string()];
        for i in 0..30 {
            texts.push(format!("filler about carpentry sessions number {i}"));
        }
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let mut mtm = mtm_with(&refs);
        let ltm = LtmGraph::new(DIM);
        let plan = plan_for(&[("which color does casey prefer", StoreKind::Mtm, 10)], 5);
        for mode in [Stage2Mode::Model, Stage2Mode::Fallback, Stage2Mode::Bypass] {
            let outcome =
                retrieve(&plan, &mut mtm, &ltm, mode, &Gateway::mock(), 0).unwrap();
            assert!(
                outcome
                    .retrieved
                    .entries
                    .iter()
                    .any(|e| e.summary == "casey prefers the color teal"),
                "mode {mode:?}"
            );
        }
    }
}
