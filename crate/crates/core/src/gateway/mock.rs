//! Deterministic rule-table backend.
//!
//! Produces the same wire-format JSON a remote model would, so the strict
//! parse path is exercised on every call. Rule tables live with the module
//! that owns the behavior (planner rules, writer summary shape, consolidator
//! redaction); this file only adapts them to the wire.

use serde_json::json;

use crate::consolidator;
use crate::planner::{self, PlannerRules};
use crate::textutil::overlap_count;
use crate::writer;

use super::{Role, RolePayload};

pub fn respond(role: Role, payload: &RolePayload, rules: &PlannerRules) -> String {
    match (role, payload) {
        (
            Role::Planner,
            RolePayload::Planner {
                input_text,
                context_window,
            },
        ) => {
            let sketch = planner::rule_based_sketch(input_text, context_window, rules);
            json!({
                "hqs": sketch.hqs,
                "filters": {
                    "time_window_days": sketch.time_window_days,
                    "type_tags": sketch.type_tags,
                },
            })
            .to_string()
        }
        (Role::Selector, RolePayload::Selector { hqs, k, candidates }) => {
            // Lexical verification: a candidate survives only if it shares
            // vocabulary with some query, ranked by the best overlap. Pool
            // order breaks ties so the coarse ranking still matters.
            let mut scored: Vec<(usize, usize)> = candidates
                .iter()
                .enumerate()
                .filter_map(|(pos, candidate)| {
                    let best = hqs
                        .iter()
                        .map(|hq| overlap_count(&candidate.text, hq))
                        .max()
                        .unwrap_or(0);
                    (best > 0).then_some((pos, best))
                })
                .collect();
            scored.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let keep_ids: Vec<&str> = scored
                .iter()
                .take(*k)
                .map(|(pos, _)| candidates[*pos].id.as_str())
                .collect();
            json!({ "keep_ids": keep_ids }).to_string()
        }
        (
            Role::Writer,
            RolePayload::Writer {
                user_id,
                input_text,
                response_text,
                ..
            },
        ) => {
            let summary = writer::mock_summary(user_id, input_text, response_text);
            json!({ "summaries": [summary] }).to_string()
        }
        (
            Role::Consolidator,
            RolePayload::Consolidator {
                items,
                known_user_ids,
            },
        ) => {
            let candidates: Vec<serde_json::Value> = items
                .iter()
                .map(|item| {
                    let sketch = consolidator::mock_candidate(&item.summary, known_user_ids);
                    let edges: Vec<serde_json::Value> = sketch
                        .edges
                        .iter()
                        .map(|(relation, target)| {
                            json!({ "relation": relation.as_str(), "target": target })
                        })
                        .collect();
                    json!({
                        "statement": sketch.statement,
                        "kind": match sketch.kind {
                            crate::types::NodeKind::Entity => "entity",
                            crate::types::NodeKind::Concept => "concept",
                        },
                        "edges": edges,
                    })
                })
                .collect();
            json!({ "candidates": candidates }).to_string()
        }
        // A role invoked with another role's payload is a programming error
        // in the caller; emit something the parser will reject loudly.
        _ => json!({ "error": "payload does not match role" }).to_string(),
    }
}
