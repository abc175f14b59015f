//! Retrieval planning: rewrite the user message into routed, budgeted
//! hypothetical queries.
//!
//! The planner backend is pluggable. A model (or fixture) emits the wire
//! sketch; a rule table produces the same shape offline and doubles as the
//! fallback when the model degrades. Budget assignment and filter
//! materialization always happen locally, never in the model.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{embed, EmbeddingConfig};
use crate::error::{Error, Result};
use crate::gateway::{
    DegradationEvent, Gateway, HqSketch, ParsedOutput, PlanSketch, Role, RolePayload,
    RouteDecision,
};
use crate::index::{MetadataFilter, StoreKind, TargetStore};

use crate::textutil::{contains_marker, content_tokens, truncate_tokens};
use crate::types::UserId;

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_MAX_HQS: usize = 4;
/// Window applied when a vague time expression fires, in days.
pub const VAGUE_TIME_WINDOW_DAYS: u64 = 30;

const MS_PER_DAY: i64 = 86_400_000;

/// First- and second-person pronouns; any hit marks the query as
/// personalization-bearing.
const PERSONAL_PRONOUNS: &[&str] = &[
    "i", "me", "my", "mine", "we", "us", "our", "ours", "you", "your", "yours",
];

/// Triggers for the recommendation decomposition rule.
const RECOMMEND_MARKERS: &[&str] = &["recommend", "suggest"];

/// Filler stripped when deriving the topic of a recommendation request.
const TOPIC_FILLER: &[&str] = &[
    "recommend", "suggest", "please", "me", "a", "an", "the", "for", "some", "any", "good",
    "nice", "can", "you", "could", "i", "want", "need",
];

/// Marker lexicon backing the rule-table planner. Sections mirror the
/// on-disk format; see [`PlannerRules::parse`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerRules {
    /// Vague-reference markers that ask for context resolution.
    pub pronouns: Vec<String>,
    /// Vague time expressions; firing one narrows the filter window.
    pub time: Vec<String>,
    /// Preference verbs; firing one routes toward per-user memory.
    pub preference: Vec<String>,
    /// General-knowledge markers; firing one routes toward the graph.
    pub factual: Vec<String>,
}

impl Default for PlannerRules {
    fn default() -> Self {
        let list = |items: &[&str]| items.iter().map(|s| s.to_string()).collect();
        Self {
            pronouns: list(&["it", "that", "he", "she", "they", "the project"]),
            time: list(&["recently", "last time", "before"]),
            preference: list(&[
                "prefer", "prefers", "like", "likes", "love", "loves", "hate", "hates",
                "dislike", "dislikes", "favorite", "enjoy", "enjoys", "want", "wants",
            ]),
            factual: list(&[
                "what is", "who is", "where is", "when was", "capital", "definition",
                "meaning", "best", "top rated", "rated", "typically", "generally", "usually",
                "history", "fact",
            ]),
        }
    }
}

impl PlannerRules {
    /// Parses the plain-text lexicon format: `[section]` headers followed by
    /// one marker per line. Blank lines and `#` comments are skipped.
    /// Sections are `pronouns`, `time`, `preference`, and `factual`; a
    /// section left out keeps the built-in defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rules = Self::default();
        let mut current: Option<&mut Vec<String>> = None;
        let mut seen: std::collections::BTreeSet<String> = Default::default();
        for (i, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let slot = match name {
                    "pronouns" => &mut rules.pronouns,
                    "time" => &mut rules.time,
                    "preference" => &mut rules.preference,
                    "factual" => &mut rules.factual,
                    other => {
                        return Err(Error::Config(format!(
                            "line {}: unknown lexicon section '[{}]'",
                            i + 1,
                            other
                        )))
                    }
                };
                if seen.insert(name.to_string()) {
                    slot.clear();
                }
                current = Some(slot);
            } else {
                match current.as_deref_mut() {
                    Some(slot) => slot.push(line.to_lowercase()),
                    None => {
                        return Err(Error::Config(format!(
                            "line {}: marker '{}' appears before any section header",
                            i + 1,
                            line
                        )))
                    }
                }
            }
        }
        Ok(rules)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn any_match(markers: &[String], text: &str) -> bool {
        markers.iter().any(|m| contains_marker(text, m))
    }
}

/// Planner settings. `k` is the final retrieval budget; `max_hqs` caps how
/// many queries a backend may contribute.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    pub k: usize,
    pub max_hqs: usize,
    pub vague_window_days: u64,
    pub rules: PlannerRules,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            max_hqs: DEFAULT_MAX_HQS,
            vague_window_days: VAGUE_TIME_WINDOW_DAYS,
            rules: PlannerRules::default(),
        }
    }
}

/// One routed, budgeted query ready for the coarse stage.
#[derive(Debug, Clone, PartialEq)]
pub struct HypotheticalQuery {
    pub text: String,
    pub route: StoreKind,
    pub quota: usize,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Personalization {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Recent,
    LongTerm,
    Mixed,
}

/// Coarse intent summary carried alongside the queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intent {
    pub personalization: Personalization,
    pub horizon: Horizon,
}

/// Fully materialized retrieval plan for one turn.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalPlan {
    pub hqs: Vec<HypotheticalQuery>,
    pub filter: MetadataFilter,
    pub k: usize,
    pub intent: Intent,
}

impl RetrievalPlan {
    /// Validates the budget law: with every quota at ⌈2k/n⌉ (halved for
    /// store-duplicated queries), the total stays within
    /// [2k, 2k + |hqs| − 1].
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidPlan("k must be at least 1".into()));
        }
        if self.hqs.is_empty() {
            return Err(Error::InvalidPlan("plan has no queries".into()));
        }
        for hq in &self.hqs {
            if hq.text.trim().is_empty() {
                return Err(Error::InvalidPlan("query text is empty".into()));
            }
            if hq.quota == 0 {
                return Err(Error::InvalidPlan("query quota is zero".into()));
            }
        }
        let total: usize = self.hqs.iter().map(|hq| hq.quota).sum();
        let lo = 2 * self.k;
        let hi = 2 * self.k + self.hqs.len() - 1;
        if total < lo || total > hi {
            return Err(Error::InvalidPlan(format!(
                "quota total {total} outside [{lo}, {hi}] for {} queries",
                self.hqs.len()
            )));
        }
        Ok(())
    }

    /// The coarse-pool cap for this plan.
    pub fn pool_budget(&self) -> usize {
        2 * self.k
    }
}

/// Per-query coarse budget: n queries each get ⌈2k/n⌉ slots.
pub fn allocate_budget(n: usize, k: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidPlan("cannot budget zero queries".into()));
    }
    if k == 0 {
        return Err(Error::InvalidPlan("k must be at least 1".into()));
    }
    let quota = (2 * k).div_ceil(n);
    Ok(vec![quota; n])
}

/// Routing rule table: personalization markers pull toward per-user memory,
/// factual markers toward the graph, and ambiguity fans out to both.
pub fn route_hq(text: &str, rules: &PlannerRules) -> RouteDecision {
    let tokens = content_tokens(text);
    let personal = tokens.iter().any(|t| PERSONAL_PRONOUNS.contains(&t.as_str()))
        || PlannerRules::any_match(&rules.preference, text)
        || PlannerRules::any_match(&rules.time, text);
    let factual = PlannerRules::any_match(&rules.factual, text);
    match (personal, factual) {
        (true, false) => RouteDecision::Mtm,
        (false, true) => RouteDecision::Ltm,
        _ => RouteDecision::Both,
    }
}

/// Deterministic sketch of a plan from the rule table alone. This is both
/// the offline planner and the shape the mock backend emits.
pub fn rule_based_sketch(input: &str, context: &str, rules: &PlannerRules) -> PlanSketch {
    let vague_time = PlannerRules::any_match(&rules.time, input);
    let vague_ref = PlannerRules::any_match(&rules.pronouns, input);
    let tokens = content_tokens(input);

    let mut hqs: Vec<HqSketch> = Vec::new();
    if tokens
        .iter()
        .any(|t| RECOMMEND_MARKERS.contains(&t.as_str()))
    {
        // A recommendation needs the user's own constraints and general
        // options; split the request accordingly.
        let topic: Vec<&str> = tokens
            .iter()
            .map(String::as_str)
            .filter(|t| !TOPIC_FILLER.contains(t))
            .collect();
        let topic = if topic.is_empty() {
            "this request".to_string()
        } else {
            topic.join(" ")
        };
        hqs.push(HqSketch {
            text: format!("user preferences and dietary constraints relevant to {topic}"),
            route: RouteDecision::Mtm,
        });
        hqs.push(HqSketch {
            text: format!("well rated options for {topic}"),
            route: RouteDecision::Ltm,
        });
    } else {
        let text = if vague_ref {
            match last_user_input(context) {
                // The referent is probably in the recent window; pin the
                // query to it so the coarse stage has something concrete.
                Some(hint) => format!("{input} (about {})", truncate_tokens(&hint, 8)),
                None => input.to_string(),
            }
        } else {
            input.to_string()
        };
        let route = route_hq(input, rules);
        hqs.push(HqSketch { text, route });
    }

    PlanSketch {
        hqs,
        time_window_days: vague_time.then_some(VAGUE_TIME_WINDOW_DAYS),
        type_tags: Vec::new(),
    }
}

/// Pulls the most recent user utterance out of a rendered dialogue window.
fn last_user_input(context: &str) -> Option<String> {
    for line in context.lines().rev() {
        if let Some(rest) = line.split_once("user: ").map(|(_, r)| r) {
            let text = match rest.split_once(" / assistant:") {
                Some((user_part, _)) => user_part,
                None => rest,
            };
            let trimmed = text.trim();
            if !trimmed.is_empty() {
                return Some(trimmed.to_string());
            }
        }
    }
    None
}

/// Turns a wire sketch into an executable plan: caps the query count,
/// assigns quotas, expands store duplication, embeds query texts, and
/// derives the filter window from the sketch's relative days.
pub fn materialize_plan(
    sketch: &PlanSketch,
    user_id: &UserId,
    now_ms: i64,
    config: &PlannerConfig,
    embedding: &EmbeddingConfig,
) -> Result<RetrievalPlan> {
    if sketch.hqs.is_empty() {
        return Err(Error::InvalidPlan("sketch has no queries".into()));
    }
    let logical: Vec<&HqSketch> = sketch.hqs.iter().take(config.max_hqs).collect();
    let quotas = allocate_budget(logical.len(), config.k)?;

    let mut hqs = Vec::new();
    for (hq, quota) in logical.iter().zip(quotas) {
        let vector = embed(&hq.text, embedding)?;
        match hq.route {
            RouteDecision::Mtm => hqs.push(HypotheticalQuery {
                text: hq.text.clone(),
                route: StoreKind::Mtm,
                quota,
                embedding: vector,
            }),
            RouteDecision::Ltm => hqs.push(HypotheticalQuery {
                text: hq.text.clone(),
                route: StoreKind::Ltm,
                quota,
                embedding: vector,
            }),
            RouteDecision::Both => {
                let half = quota.div_ceil(2);
                for route in [StoreKind::Mtm, StoreKind::Ltm] {
                    hqs.push(HypotheticalQuery {
                        text: hq.text.clone(),
                        route,
                        quota: half,
                        embedding: vector.clone(),
                    });
                }
            }
        }
    }

    let time_window = match sketch.time_window_days {
        Some(days) => {
            let span = (days as i64).saturating_mul(MS_PER_DAY);
            Some((now_ms.saturating_sub(span), now_ms))
        }
        None => None,
    };
    let type_tags = if sketch.type_tags.is_empty() {
        None
    } else {
        Some(sketch.type_tags.iter().cloned().collect())
    };

    let has_mtm = hqs.iter().any(|hq| hq.route == StoreKind::Mtm);
    let has_ltm = hqs.iter().any(|hq| hq.route == StoreKind::Ltm);
    let target_store = match (has_mtm, has_ltm) {
        (true, true) => TargetStore::Both,
        (true, false) => TargetStore::Mtm,
        _ => TargetStore::Ltm,
    };
    let filter = MetadataFilter::new(user_id.clone(), time_window, type_tags, target_store)?;

    let personalization = if has_mtm {
        Personalization::High
    } else {
        Personalization::Low
    };
    let horizon = if time_window.is_some() {
        Horizon::Recent
    } else if !has_mtm {
        Horizon::LongTerm
    } else if has_ltm {
        Horizon::Mixed
    } else {
        Horizon::Mixed
    };

    let plan = RetrievalPlan {
        hqs,
        filter,
        k: config.k,
        intent: Intent {
            personalization,
            horizon,
        },
    };
    plan.validate()?;
    Ok(plan)
}

/// Builds the plan for one turn. The configured planner backend runs first;
/// a degraded or invalid response falls back to the rule table, and the
/// fallback is reported as a degradation event rather than hidden.
pub fn build_plan(
    input: &str,
    context: &str,
    user_id: &UserId,
    now_ms: i64,
    config: &PlannerConfig,
    gateway: &Gateway,
    embedding: &EmbeddingConfig,
) -> Result<(RetrievalPlan, Vec<DegradationEvent>)> {
    if input.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    let mut events = Vec::new();
    let payload = RolePayload::Planner {
        input_text: input.to_string(),
        context_window: context.to_string(),
    };
    let response = gateway.complete(Role::Planner, &payload)?;

    if let Some(ParsedOutput::Plan(sketch)) = response.parsed {
        match materialize_plan(&sketch, user_id, now_ms, config, embedding) {
            Ok(plan) => return Ok((plan, events)),
            Err(err) => events.push(DegradationEvent {
                component: "planner".into(),
                reason: "backend plan rejected".into(),
                detail: err.to_string(),
                at_ms: now_ms,
            }),
        }
    } else {
        events.push(DegradationEvent {
            component: "planner".into(),
            reason: "backend degraded".into(),
            detail: response
                .detail
                .unwrap_or_else(|| "no parsed plan".to_string()),
            at_ms: now_ms,
        });
    }

    let sketch = rule_based_sketch(input, context, &config.rules);
    let plan = materialize_plan(&sketch, user_id, now_ms, config, embedding)?;
    Ok((plan, events))
}
