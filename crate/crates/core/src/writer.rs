//! Turn summarization into the mid-term store plus the online maintenance
//! that keeps each user partition deduplicated, conflict-free, and inside
//! its capacity bound.

use serde::{Deserialize, Serialize};

use crate::embedding::cosine;
use crate::error::{Error, Result};
use crate::gateway::{DegradationEvent, Gateway, ParsedOutput, Role, RolePayload};
use crate::store::MtmStore;
use crate::textutil::{content_tokens, truncate_tokens};
use crate::types::{ConsolidationFlag, DialogueTurn, ItemId, MemoryItem, UserId};

pub const DEFAULT_CAPACITY_B: usize = 10_000;
pub const DEFAULT_MERGE_THRESHOLD: f64 = 0.9;
pub const DEFAULT_EVICTION_BATCH: usize = 64;

const SEVEN_DAYS_MS: f64 = 7.0 * 86_400_000.0;
const SUMMARY_TOKEN_CAP: usize = 30;

/// Words whose presence flips the polarity of a statement. Two
/// near-duplicate summaries that disagree on polarity are a conflict, not a
/// merge.
const NEGATION_WORDS: &[&str] = &[
    "not", "no", "never", "stopped", "quit", "anymore", "dislike", "dislikes", "hate", "hates",
];

/// Maintenance settings for the per-user mid-term partitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MtmConfig {
    /// Hard per-user size bound, enforced after every write.
    pub capacity_b: usize,
    /// Cosine at or above which an incoming summary merges with (or
    /// conflicts against) a resident item.
    pub merge_threshold: f64,
    /// Bound on the consolidation handoff queue; evictions past it are
    /// discarded outright.
    pub eviction_batch: usize,
}

impl Default for MtmConfig {
    fn default() -> Self {
        Self {
            capacity_b: DEFAULT_CAPACITY_B,
            merge_threshold: DEFAULT_MERGE_THRESHOLD,
            eviction_batch: DEFAULT_EVICTION_BATCH,
        }
    }
}

impl MtmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity_b == 0 {
            return Err(Error::Config("capacity_b must be at least 1".into()));
        }
        if !(self.merge_threshold > 0.0 && self.merge_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "merge_threshold {} outside (0, 1]",
                self.merge_threshold
            )));
        }
        if self.eviction_batch == 0 {
            return Err(Error::Config("eviction_batch must be at least 1".into()));
        }
        Ok(())
    }
}

/// Retention value of an item: log-damped access frequency plus
/// exponentially decaying recency, weighted evenly.
pub fn utility_score(access_count: u64, last_accessed: i64, now_ms: i64) -> f64 {
    let staleness = (now_ms - last_accessed).max(0) as f64;
    0.5 * (1.0 + access_count as f64).ln() + 0.5 * (-staleness / SEVEN_DAYS_MS).exp()
}

/// The deterministic summary shape the mock writer emits. User ids stay in
/// the text here; the consolidation path strips them later.
pub fn mock_summary(user_id: &str, input: &str, response: &str) -> String {
    format!(
        "user {} said: {} ; outcome: {}",
        user_id,
        truncate_tokens(input, SUMMARY_TOKEN_CAP),
        truncate_tokens(response, SUMMARY_TOKEN_CAP),
    )
}

fn has_negation(text: &str) -> bool {
    content_tokens(text)
        .iter()
        .any(|t| NEGATION_WORDS.contains(&t.as_str()) || t.ends_with("n't"))
}

/// True when exactly one of the two texts carries a negation marker.
pub fn negation_divergent(a: &str, b: &str) -> bool {
    has_negation(a) != has_negation(b)
}

/// What a single write did to the store.
#[derive(Debug, Clone, PartialEq)]
pub enum WriteAction {
    Appended(ItemId),
    Merged { into: ItemId },
    ConflictResolved { winner: ItemId, loser: ItemId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WriteOutcome {
    pub action: WriteAction,
    /// Ids removed by the capacity pass, in eviction order.
    pub evicted: Vec<ItemId>,
    /// Subset of `evicted` that reached the consolidation handoff queue.
    pub handed_off: Vec<ItemId>,
}

/// Summarizes one completed turn through the writer backend. A degraded
/// backend writes nothing and surfaces the event; it never fabricates a
/// summary.
pub fn summarize_turn(
    turn: &DialogueTurn,
    context_window: &str,
    gateway: &Gateway,
) -> Result<(Vec<String>, Vec<DegradationEvent>)> {
    let response = match turn.response_text.as_deref() {
        Some(r) if !r.trim().is_empty() => r,
        _ => return Err(Error::MissingResponse),
    };
    let payload = RolePayload::Writer {
        user_id: turn.user_id.as_str().to_string(),
        input_text: turn.input_text.clone(),
        response_text: response.to_string(),
        context_window: context_window.to_string(),
    };
    let reply = gateway.complete(Role::Writer, &payload)?;
    match reply.parsed {
        Some(ParsedOutput::Summaries(summaries)) => Ok((summaries, Vec::new())),
        _ => Ok((
            Vec::new(),
            vec![DegradationEvent {
                component: "writer".into(),
                reason: "backend degraded".into(),
                detail: reply.detail.unwrap_or_else(|| "no parsed summaries".into()),
                at_ms: turn.timestamp_ms,
            }],
        )),
    }
}

/// Appends one item and runs maintenance (merge, conflict, evict) on its
/// user partition. The item's `created_at` is the pass timestamp.
pub fn write_mtm(store: &mut MtmStore, item: MemoryItem, config: &MtmConfig) -> Result<WriteOutcome> {
    config.validate()?;
    if item.embedding.len() != store.dimension() {
        return Err(Error::DimensionMismatch {
            expected: store.dimension(),
            actual: item.embedding.len(),
        });
    }
    let now_ms = item.created_at;
    let user = item.user_id.clone();

    // Closest resident decides the path: above the threshold the incoming
    // item either merges or, on polarity divergence, fights.
    let mut best: Option<(ItemId, f64)> = None;
    for resident in store.user_items(&user) {
        let sim = cosine(&resident.embedding, &item.embedding)?;
        let better = match &best {
            Some((_, s)) => sim > *s,
            None => true,
        };
        if better {
            best = Some((resident.item_id.clone(), sim));
        }
    }

    let action = match best {
        Some((partner_id, sim)) if sim >= config.merge_threshold => {
            let partner = store
                .get(&user, &partner_id)
                .ok_or_else(|| Error::UnknownItem(partner_id.as_str().to_string()))?;
            if negation_divergent(&partner.summary, &item.summary) {
                let winner = resolve_conflict(partner, &item);
                if winner.item_id == partner_id {
                    let slot = store.get_mut(&user, &partner_id).unwrap();
                    *slot = winner;
                    WriteAction::ConflictResolved {
                        winner: partner_id,
                        loser: item.item_id,
                    }
                } else {
                    store.remove(&user, &partner_id);
                    let winner_id = winner.item_id.clone();
                    store.insert(winner)?;
                    WriteAction::ConflictResolved {
                        winner: winner_id,
                        loser: partner_id,
                    }
                }
            } else {
                let slot = store.get_mut(&user, &partner_id).unwrap();
                slot.access_count += item.access_count;
                slot.last_accessed = slot.last_accessed.max(item.last_accessed);
                WriteAction::Merged { into: partner_id }
            }
        }
        _ => {
            let id = item.item_id.clone();
            store.insert(item)?;
            WriteAction::Appended(id)
        }
    };

    let protect = match &action {
        WriteAction::Appended(id) => Some(id.clone()),
        WriteAction::ConflictResolved { winner, .. } => Some(winner.clone()),
        WriteAction::Merged { into } => Some(into.clone()),
    };
    let (evicted, handed_off) = evict(store, &user, config, now_ms, protect.as_ref());

    Ok(WriteOutcome {
        action,
        evicted,
        handed_off,
    })
}

/// Conflict resolution between two near-duplicate, polarity-divergent
/// items. Recency wins unless the older side has at least twice the
/// evidence. The loser's access stats fold into the winner and the winner's
/// evidence rises to max(inputs)+1.
pub fn resolve_conflict(existing: &MemoryItem, incoming: &MemoryItem) -> MemoryItem {
    let (newer, older) = if existing.created_at > incoming.created_at {
        (existing, incoming)
    } else {
        (incoming, existing)
    };
    let older_wins = older.evidence_strength >= 2.0 * newer.evidence_strength;
    let (source, loser) = if older_wins {
        (older, newer)
    } else {
        (newer, older)
    };
    let mut winner = source.clone();
    winner.access_count += loser.access_count;
    winner.last_accessed = winner.last_accessed.max(loser.last_accessed);
    winner.evidence_strength =
        existing.evidence_strength.max(incoming.evidence_strength) + 1.0;
    winner
}

/// Removes the lowest-utility items until the user partition fits the
/// capacity bound. Ties fall to the oldest `created_at`, then id. The item
/// named by `protect` is never evicted in this pass. Evictees with evidence
/// of at least two observations are flagged and queued for consolidation
/// while the handoff queue has room.
pub fn evict(
    store: &mut MtmStore,
    user: &UserId,
    config: &MtmConfig,
    now_ms: i64,
    protect: Option<&ItemId>,
) -> (Vec<ItemId>, Vec<ItemId>) {
    let population = store.user_len(user);
    if population <= config.capacity_b {
        return (Vec::new(), Vec::new());
    }
    let excess = population - config.capacity_b;

    let mut ranked: Vec<(f64, i64, ItemId)> = store
        .user_items(user)
        .iter()
        .filter(|it| Some(&it.item_id) != protect)
        .map(|it| {
            (
                utility_score(it.access_count, it.last_accessed, now_ms),
                it.created_at,
                it.item_id.clone(),
            )
        })
        .collect();
    ranked.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut evicted = Vec::new();
    let mut handed_off = Vec::new();
    for (_, _, id) in ranked.into_iter().take(excess) {
        if let Some(mut item) = store.remove(user, &id) {
            evicted.push(id.clone());
            if item.evidence_strength >= 2.0 {
                item.consolidation_flag = ConsolidationFlag::LowUtility;
                if store.queue_for_consolidation(item, config.eviction_batch) {
                    handed_off.push(id);
                }
            }
        }
    }
    (evicted, handed_off)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{embed, EmbeddingConfig};
    use crate::gateway::{BackendKind, RoleConfig, ScriptedFixtures};

    fn ecfg() -> EmbeddingConfig {
        EmbeddingConfig::mock(32)
    }

    fn item(store: &mut MtmStore, user: &str, summary: &str, at: i64) -> MemoryItem {
        let id = store.allocate_id();
        MemoryItem::new(id, user, summary, embed(summary, &ecfg()).unwrap(), at)
    }

    #[test]
    fn config_defaults_and_validation() {
        let config = MtmConfig::default();
        assert_eq!(config.capacity_b, 10_000);
        assert_eq!(config.merge_threshold, 0.9);
        assert_eq!(config.eviction_batch, 64);
        config.validate().unwrap();
        assert!(MtmConfig {
            capacity_b: 0,
            ..config
        }
        .validate()
        .is_err());
        assert!(MtmConfig {
            merge_threshold: 0.0,
            ..config
        }
        .validate()
        .is_err());
        assert!(MtmConfig {
            merge_threshold: 1.5,
            ..config
        }
        .validate()
        .is_err());
    }

    // Frozen against longhand evaluation of
    // 0.5·ln(1+a) + 0.5·exp(−Δt/7d).
    #[test]
    fn utility_matches_hand_computed_values() {
        assert!((utility_score(0, 0, 0) - 0.5).abs() < 1e-12);
        let seven_days = 7 * 86_400_000;
        let expected = 0.5 * 4.0f64.ln() + 0.5 * (-1.0f64).exp();
        assert!((utility_score(3, 0, seven_days) - expected).abs() < 1e-12);
        // Clock skew clamps to zero staleness; access term stays ln(1) = 0.
        assert_eq!(utility_score(0, 100, 0), 0.5);
    }

    #[test]
    fn utility_monotone_in_access_and_staleness() {
        for a in 0..20u64 {
            assert!(utility_score(a + 1, 0, 0) > utility_score(a, 0, 0));
        }
        for step in 1..20i64 {
            let dt = step * 3_600_000;
            assert!(utility_score(2, 0, dt) < utility_score(2, 0, dt - 3_600_000));
        }
        assert!(utility_score(0, 0, i64::MAX / 2) >= 0.0);
    }

    #[test]
    fn mock_summary_shape_and_truncation() {
        assert_eq!(
            mock_summary("u7", "I prefer vegetarian food", "Noted!"),
            "user u7 said: I prefer vegetarian food ; outcome: Noted!"
        );
        let long: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
        let summary = mock_summary("u1", &long.join(" "), "ok");
        assert!(summary.contains("w29"));
        assert!(!summary.contains("w30"));
    }

    #[test]
    fn negation_divergence_detector() {
        assert!(negation_divergent(
            "user u1 said: i like teal",
            "user u1 said: i do not like teal anymore"
        ));
        assert!(negation_divergent("likes jazz", "doesn't like jazz"));
        assert!(!negation_divergent("likes jazz", "likes loud jazz"));
        assert!(!negation_divergent("never jazz", "no jazz"));
    }

    fn turn(input: &str, response: Option<&str>) -> DialogueTurn {
        DialogueTurn::new("u7", 0, input, response.map(String::from), 1_000).unwrap()
    }

    #[test]
    fn mock_summarize_covers_the_preference_turn() {
        let (summaries, events) = summarize_turn(
            &turn("I prefer vegetarian food", Some("Noted!")),
            "",
            &Gateway::mock(),
        )
        .unwrap();
        assert!(events.is_empty());
        assert_eq!(summaries.len(), 1);
        assert!(summaries[0].contains("prefer vegetarian"));
    }

    #[test]
    fn missing_response_is_a_precondition_error() {
        let err = summarize_turn(&turn("hello", None), "", &Gateway::mock()).unwrap_err();
        assert!(matches!(err, Error::MissingResponse));
        let err = summarize_turn(&turn("hello", Some("  ")), "", &Gateway::mock()).unwrap_err();
        assert!(matches!(err, Error::MissingResponse));
    }

    #[test]
    fn scripted_summaries_pass_through_verbatim() {
        let t = turn("anything", Some("ok"));
        let payload = RolePayload::Writer {
            user_id: "u7".into(),
            input_text: "anything".into(),
            response_text: "ok".into(),
            context_window: String::new(),
        };
        let mut fixtures = ScriptedFixtures::default();
        fixtures.push(
            Role::Writer,
            &payload.hash(),
            r#"{"summaries":["alpha","beta"]}"#,
        );
        let gateway = Gateway::new([RoleConfig::new(Role::Writer, BackendKind::Scripted)])
            .unwrap()
            .with_fixtures(fixtures);
        let (summaries, events) = summarize_turn(&t, "", &gateway).unwrap();
        assert_eq!(summaries, vec!["alpha", "beta"]);
        assert!(events.is_empty());
    }

    #[test]
    fn degraded_writer_writes_nothing_and_reports() {
        let t = turn("anything", Some("ok"));
        let payload = RolePayload::Writer {
            user_id: "u7".into(),
            input_text: "anything".into(),
            response_text: "ok".into(),
            context_window: String::new(),
        };
        let mut fixtures = ScriptedFixtures::default();
        fixtures.push(Role::Writer, &payload.hash(), "not json at all");
        let gateway = Gateway::new([RoleConfig::new(Role::Writer, BackendKind::Scripted)])
            .unwrap()
            .with_fixtures(fixtures);
        let (summaries, events) = summarize_turn(&t, "", &gateway).unwrap();
        assert!(summaries.is_empty());
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].component, "writer");
    }

    #[test]
    fn write_into_empty_store_appends() {
        let mut store = MtmStore::new(32);
        let it = item(&mut store, "u1", "user u1 said: hello ; outcome: hi", 0);
        let outcome = write_mtm(&mut store, it, &MtmConfig::default()).unwrap();
        assert!(matches!(outcome.action, WriteAction::Appended(_)));
        assert_eq!(store.user_len(&"u1".into()), 1);
    }

    #[test]
    fn exact_duplicate_merges_summing_access_and_maxing_recency() {
        let mut store = MtmStore::new(32);
        let config = MtmConfig::default();
        let first = item(&mut store, "u1", "user u1 said: i like teal", 100);
        let first_id = first.item_id.clone();
        write_mtm(&mut store, first, &config).unwrap();

        let mut dup = item(&mut store, "u1", "user u1 said: i like teal", 500);
        dup.access_count = 3;
        let outcome = write_mtm(&mut store, dup, &config).unwrap();
        assert_eq!(
            outcome.action,
            WriteAction::Merged {
                into: first_id.clone()
            }
        );
        assert_eq!(store.user_len(&"u1".into()), 1);
        let merged = store.get(&"u1".into(), &first_id).unwrap();
        assert_eq!(merged.access_count, 3);
        assert_eq!(merged.last_accessed, 500);
        assert_eq!(merged.created_at, 100);
        assert_eq!(merged.evidence_strength, 1.0);
    }

    #[test]
    fn merging_is_idempotent_across_repeat_writes() {
        let config = MtmConfig::default();
        let build = |writes: usize| {
            let mut store = MtmStore::new(32);
            for _ in 0..writes {
                let it = item(&mut store, "u1", "user u1 said: i like teal", 700);
                write_mtm(&mut store, it, &config).unwrap();
            }
            serde_json::to_string(store.user_items(&"u1".into())).unwrap()
        };
        let twice = build(2);
        let thrice = build(3);
        assert_eq!(twice, thrice);
    }

    #[test]
    fn over_capacity_write_evicts_lowest_utility() {
        let mut store = MtmStore::new(32);
        let config = MtmConfig {
            capacity_b: 3,
            ..MtmConfig::default()
        };
        let day = 86_400_000;
        let oldest = item(&mut store, "u1", "note about gardening tools", 0);
        let oldest_id = oldest.item_id.clone();
        write_mtm(&mut store, oldest, &config).unwrap();
        let mid = item(&mut store, "u1", "note about cycling routes", 10 * day);
        write_mtm(&mut store, mid, &config).unwrap();
        let recent = item(&mut store, "u1", "note about jazz records", 20 * day);
        write_mtm(&mut store, recent, &config).unwrap();
        assert_eq!(store.user_len(&"u1".into()), 3);

        let fourth = item(&mut store, "u1", "note about soup recipes", 21 * day);
        let outcome = write_mtm(&mut store, fourth, &config).unwrap();
        assert_eq!(store.user_len(&"u1".into()), 3);
        assert_eq!(outcome.evicted, vec![oldest_id.clone()]);
        assert!(!store.contains(&oldest_id));
        // Evidence 1.0 stays below the handoff bar.
        assert!(outcome.handed_off.is_empty());
        assert_eq!(store.handoff_len(), 0);
    }

    #[test]
    fn just_written_item_survives_even_at_lowest_utility() {
        let mut store = MtmStore::new(32);
        let config = MtmConfig {
            capacity_b: 2,
            ..MtmConfig::default()
        };
        for (i, text) in ["resident gardening note", "resident cycling note"]
            .iter()
            .enumerate()
        {
            let mut it = item(&mut store, "u1", text, i as i64);
            it.access_count = 50;
            it.last_accessed = 1_000;
            store.insert(it).unwrap();
        }
        let incoming = item(&mut store, "u1", "fresh unrelated soup note", 1_000);
        let incoming_id = incoming.item_id.clone();
        let outcome = write_mtm(&mut store, incoming, &config).unwrap();
        assert!(store.contains(&incoming_id));
        assert_eq!(outcome.evicted.len(), 1);
        assert_ne!(outcome.evicted[0], incoming_id);
    }

    #[test]
    fn eviction_ties_drop_oldest_created_first() {
        let mut store = MtmStore::new(32);
        let config = MtmConfig {
            capacity_b: 3,
            ..MtmConfig::default()
        };
        let mut ids = Vec::new();
        for (i, text) in [
            "alpha gardening note",
            "beta cycling note",
            "gamma jazz note",
            "delta soup note",
            "epsilon chess note",
        ]
        .iter()
        .enumerate()
        {
            let mut it = item(&mut store, "u1", text, i as i64 * 1_000);
            // Same last_accessed and access_count: utility ties exactly.
            it.last_accessed = 10_000;
            ids.push(it.item_id.clone());
            store.insert(it).unwrap();
        }
        let (evicted, _) = evict(&mut store, &"u1".into(), &config, 10_000, None);
        assert_eq!(evicted, vec![ids[0].clone(), ids[1].clone()]);
    }

    // Sort-and-cut oracle: recompute every utility longhand, order by the
    // stated tie chain, and take the excess from the front.
    #[test]
    fn randomized_eviction_matches_sort_and_cut_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        let config = MtmConfig {
            capacity_b: 40,
            ..MtmConfig::default()
        };
        let now = 100 * 86_400_000;
        let mut store = MtmStore::new(32);
        let mut rows: Vec<(ItemId, u64, i64, i64)> = Vec::new();
        for i in 0..100 {
            let created = rng.gen_range(0..now);
            let mut it = item(&mut store, "u1", &format!("distinct note {i}"), created);
            it.access_count = rng.gen_range(0..6);
            it.last_accessed = rng.gen_range(created..=now);
            rows.push((
                it.item_id.clone(),
                it.access_count,
                it.last_accessed,
                it.created_at,
            ));
            store.insert(it).unwrap();
        }

        let mut expected: Vec<(f64, i64, ItemId)> = rows
            .iter()
            .map(|(id, access, last, created)| {
                let freshness = (-(((now - last).max(0)) as f64) / (7.0 * 86_400_000.0)).exp();
                let score = 0.5 * ((1 + access) as f64).ln() + 0.5 * freshness;
                (score, *created, id.clone())
            })
            .collect();
        expected.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let expected_ids: Vec<ItemId> =
            expected.into_iter().take(60).map(|(_, _, id)| id).collect();

        let (evicted, _) = evict(&mut store, &"u1".into(), &config, now, None);
        assert_eq!(evicted, expected_ids);
        assert_eq!(store.user_len(&"u1".into()), 40);
    }

    #[test]
    fn evicted_items_with_evidence_reach_the_handoff_queue() {
        let mut store = MtmStore::new(32);
        let config = MtmConfig {
            capacity_b: 1,
            eviction_batch: 1,
            ..MtmConfig::default()
        };
        let texts = [
            "alpha gardening note",
            "beta cycling note",
            "gamma jazz note",
        ];
        let mut ids = Vec::new();
        for (i, text) in texts.iter().enumerate() {
            let mut it = item(&mut store, "u1", text, i as i64);
            it.evidence_strength = 2.0;
            it.last_accessed = i as i64;
            ids.push(it.item_id.clone());
            store.insert(it).unwrap();
        }
        let (evicted, handed) = evict(&mut store, &"u1".into(), &config, 10, None);
        assert_eq!(evicted.len(), 2);
        // Queue capacity is one: the second qualifying evictee is dropped.
        assert_eq!(handed, vec![ids[0].clone()]);
        assert_eq!(store.handoff_len(), 1);
        let queued = store.drain_handoff();
        assert_eq!(queued[0].consolidation_flag, ConsolidationFlag::LowUtility);
    }

    #[test]
    fn conflict_prefers_newer_unless_older_has_double_evidence() {
        let mut store = MtmStore::new(32);
        let config = MtmConfig {
            merge_threshold: 0.3,
            ..MtmConfig::default()
        };
        let old = item(&mut store, "u1", "user u1 said: i like teal", 100);
        let old_id = old.item_id.clone();
        write_mtm(&mut store, old, &config).unwrap();

        let mut incoming = item(
            &mut store,
            "u1",
            "user u1 said: i do not like teal anymore",
            900,
        );
        incoming.access_count = 2;
        let incoming_id = incoming.item_id.clone();
        let outcome = write_mtm(&mut store, incoming, &config).unwrap();
        assert_eq!(
            outcome.action,
            WriteAction::ConflictResolved {
                winner: incoming_id.clone(),
                loser: old_id.clone()
            }
        );
        assert_eq!(store.user_len(&"u1".into()), 1);
        let winner = store.get(&"u1".into(), &incoming_id).unwrap();
        assert_eq!(winner.evidence_strength, 2.0);
        assert_eq!(winner.access_count, 2);
        assert!(!store.contains(&old_id));
    }

    #[test]
    fn entrenched_older_item_survives_conflict() {
        let mut store = MtmStore::new(32);
        let config = MtmConfig {
            merge_threshold: 0.3,
            ..MtmConfig::default()
        };
        let mut old = item(&mut store, "u1", "user u1 said: i like teal", 100);
        old.evidence_strength = 4.0;
        old.access_count = 7;
        let old_id = old.item_id.clone();
        store.insert(old).unwrap();

        let incoming = item(
            &mut store,
            "u1",
            "user u1 said: i do not like teal anymore",
            900,
        );
        let incoming_id = incoming.item_id.clone();
        let outcome = write_mtm(&mut store, incoming, &config).unwrap();
        assert_eq!(
            outcome.action,
            WriteAction::ConflictResolved {
                winner: old_id.clone(),
                loser: incoming_id.clone()
            }
        );
        let winner = store.get(&"u1".into(), &old_id).unwrap();
        assert_eq!(winner.evidence_strength, 5.0);
        assert_eq!(winner.last_accessed, 900);
        assert!(!store.contains(&incoming_id));
    }

    // Exhaustive policy table: every (recency order, evidence pair)
    // combination, winner and resulting evidence derived longhand.
    #[test]
    fn conflict_policy_matches_exhaustive_table() {
        let evidences = [1.0, 1.5, 2.0, 3.0, 4.0];
        let created_pairs = [(0i64, 10i64), (10, 0), (5, 5)];
        for &(existing_at, incoming_at) in &created_pairs {
            for &existing_ev in &evidences {
                for &incoming_ev in &evidences {
                    let mut existing = MemoryItem::new(
                        "ma",
                        "u1",
                        "likes teal",
                        vec![1.0, 0.0],
                        existing_at,
                    );
                    existing.evidence_strength = existing_ev;
                    existing.access_count = 1;
                    let mut incoming = MemoryItem::new(
                        "mb",
                        "u1",
                        "does not like teal",
                        vec![1.0, 0.0],
                        incoming_at,
                    );
                    incoming.evidence_strength = incoming_ev;
                    incoming.access_count = 2;

                    let (newer_ev, older_ev, newer_id, older_id) =
                        if existing_at > incoming_at {
                            (existing_ev, incoming_ev, "ma", "mb")
                        } else {
                            (incoming_ev, existing_ev, "mb", "ma")
                        };
                    let expect_id = if older_ev >= 2.0 * newer_ev {
                        older_id
                    } else {
                        newer_id
                    };
                    let expect_evidence = existing_ev.max(incoming_ev) + 1.0;

                    let winner = resolve_conflict(&existing, &incoming);
                    assert_eq!(winner.item_id.as_str(), expect_id);
                    assert_eq!(winner.evidence_strength, expect_evidence);
                    assert_eq!(winner.access_count, 3);
                }
            }
        }
    }

    #[test]
    fn maintenance_never_crosses_user_partitions() {
        let mut store = MtmStore::new(32);
        let config = MtmConfig {
            capacity_b: 2,
            ..MtmConfig::default()
        };
        let foreign = item(&mut store, "u2", "user u2 said: i like teal", 50);
        write_mtm(&mut store, foreign, &config).unwrap();
        let before = serde_json::to_string(store.user_items(&"u2".into())).unwrap();

        // Identical text for a different user must append, not merge.
        let own = item(&mut store, "u1", "user u2 said: i like teal", 60);
        let outcome = write_mtm(&mut store, own, &config).unwrap();
        assert!(matches!(outcome.action, WriteAction::Appended(_)));
        for i in 0..4 {
            let it = item(&mut store, "u1", &format!("filler note {i}"), 100 + i);
            write_mtm(&mut store, it, &config).unwrap();
        }
        assert_eq!(store.user_len(&"u1".into()), 2);
        let after = serde_json::to_string(store.user_items(&"u2".into())).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn capacity_bound_holds_under_random_write_streams() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let config = MtmConfig {
            capacity_b: 12,
            merge_threshold: 0.95,
            ..MtmConfig::default()
        };
        let embedding = EmbeddingConfig::mock(16);
        let mut store = MtmStore::new(16);
        let users = ["u1", "u2", "u3"];
        for step in 0..400 {
            let user = users[rng.gen_range(0..users.len())];
            let text = format!("note {} topic {}", rng.gen_range(0..30), user);
            let id = store.allocate_id();
            let it = MemoryItem::new(id, user, &*text, embed(&text, &embedding).unwrap(), step);
            write_mtm(&mut store, it, &config).unwrap();
            for u in &users {
                assert!(store.user_len(&(*u).into()) <= config.capacity_b);
            }
        }
    }

    #[test]
    fn wrong_dimension_rejected_before_any_mutation() {
        let mut store = MtmStore::new(32);
        let bad = MemoryItem::new("mx", "u1", "text", vec![1.0; 8], 0);
        let err = write_mtm(&mut store, bad, &MtmConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
        assert!(store.is_empty());
    }
}
