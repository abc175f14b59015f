//! Strict parsing of backend output into typed records.
//!
//! Every schema violation names the offending JSON path, so a degraded
//! response in a log pinpoints what the model got wrong. Unknown fields are
//! ignored on purpose: models may annotate, but required structure is
//! non-negotiable.

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::types::{NodeKind, RelationKind};

use super::Role;

/// Store routing choice emitted by the planner, before budget assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteDecision {
    Mtm,
    Ltm,
    Both,
}

/// One hypothetical query as emitted on the wire.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HqSketch {
    pub text: String,
    pub route: RouteDecision,
}

/// Planner output: queries plus relative metadata filters. Absolute
/// timestamps are derived at plan-materialization time, never by the model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PlanSketch {
    pub hqs: Vec<HqSketch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_window_days: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub type_tags: Vec<String>,
}

/// Consolidator output for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSketch {
    pub statement: String,
    pub kind: NodeKind,
    pub edges: Vec<(RelationKind, String)>,
}

/// Typed view of a raw backend response.
#[derive(Debug, Clone, PartialEq)]
pub enum ParsedOutput {
    Plan(PlanSketch),
    Selection { keep_ids: Vec<String> },
    Summaries(Vec<String>),
    Candidates(Vec<CandidateSketch>),
}

fn invalid(path: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::StructuredOutput {
        path: path.into(),
        reason: reason.into(),
    }
}

fn as_object<'a>(value: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    value
        .as_object()
        .ok_or_else(|| invalid(path, "expected an object"))
}

fn require<'a>(map: &'a Map<String, Value>, key: &str, parent: &str) -> Result<&'a Value> {
    let path = join(parent, key);
    map.get(key)
        .ok_or_else(|| invalid(path, "missing required field"))
}

fn as_str<'a>(value: &'a Value, path: &str) -> Result<&'a str> {
    value
        .as_str()
        .ok_or_else(|| invalid(path, "expected a string"))
}

fn as_array<'a>(value: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    value
        .as_array()
        .ok_or_else(|| invalid(path, "expected an array"))
}

fn join(parent: &str, key: &str) -> String {
    if parent.is_empty() {
        key.to_string()
    } else {
        format!("{parent}.{key}")
    }
}

/// Validates `raw` against the role's output schema and returns the typed
/// record. The planner schema additionally rejects any attempt to answer
/// the user directly.
pub fn parse_structured(raw: &str, role: Role) -> Result<ParsedOutput> {
    let value: Value = serde_json::from_str(raw)
        .map_err(|e| invalid("", format!("invalid JSON: {e}")))?;
    match role {
        Role::Planner => parse_plan(&value),
        Role::Selector => parse_selection(&value),
        Role::Writer => parse_summaries(&value),
        Role::Consolidator => parse_candidates(&value),
    }
}

fn parse_plan(value: &Value) -> Result<ParsedOutput> {
    let map = as_object(value, "")?;
    if map.contains_key("answer") {
        return Err(invalid("answer", "planner must not answer the user"));
    }
    let hqs_value = require(map, "hqs", "")?;
    let hqs_arr = as_array(hqs_value, "hqs")?;
    if hqs_arr.is_empty() {
        return Err(invalid("hqs", "must contain at least one query"));
    }
    let mut hqs = Vec::with_capacity(hqs_arr.len());
    for (i, hq) in hqs_arr.iter().enumerate() {
        let path = format!("hqs[{i}]");
        let hq_map = as_object(hq, &path)?;
        let text_path = join(&path, "text");
        let text = as_str(require(hq_map, "text", &path)?, &text_path)?;
        if text.trim().is_empty() {
            return Err(invalid(text_path, "query text must be non-empty"));
        }
        let route_path = join(&path, "route");
        let route = match as_str(require(hq_map, "route", &path)?, &route_path)? {
            "mtm" => RouteDecision::Mtm,
            "ltm" => RouteDecision::Ltm,
            "both" => RouteDecision::Both,
            other => {
                return Err(invalid(
                    route_path,
                    format!("expected one of mtm|ltm|both, got '{other}'"),
                ))
            }
        };
        hqs.push(HqSketch {
            text: text.to_string(),
            route,
        });
    }

    let filters = as_object(require(map, "filters", "")?, "filters")?;
    let time_window_days = match filters.get("time_window_days") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_u64()
                .ok_or_else(|| invalid("filters.time_window_days", "expected a non-negative integer"))?,
        ),
    };
    let type_tags = match filters.get("type_tags") {
        None | Some(Value::Null) => Vec::new(),
        Some(v) => {
            let arr = as_array(v, "filters.type_tags")?;
            let mut tags = Vec::with_capacity(arr.len());
            for (i, tag) in arr.iter().enumerate() {
                tags.push(as_str(tag, &format!("filters.type_tags[{i}]"))?.to_string());
            }
            tags
        }
    };

    Ok(ParsedOutput::Plan(PlanSketch {
        hqs,
        time_window_days,
        type_tags,
    }))
}

fn parse_selection(value: &Value) -> Result<ParsedOutput> {
    let map = as_object(value, "")?;
    let ids_arr = as_array(require(map, "keep_ids", "")?, "keep_ids")?;
    let mut keep_ids = Vec::with_capacity(ids_arr.len());
    for (i, id) in ids_arr.iter().enumerate() {
        keep_ids.push(as_str(id, &format!("keep_ids[{i}]"))?.to_string());
    }
    Ok(ParsedOutput::Selection { keep_ids })
}

fn parse_summaries(value: &Value) -> Result<ParsedOutput> {
    let map = as_object(value, "")?;
    let arr = as_array(require(map, "summaries", "")?, "summaries")?;
    let mut summaries = Vec::with_capacity(arr.len());
    for (i, s) in arr.iter().enumerate() {
        summaries.push(as_str(s, &format!("summaries[{i}]"))?.to_string());
    }
    Ok(ParsedOutput::Summaries(summaries))
}

fn parse_candidates(value: &Value) -> Result<ParsedOutput> {
    let map = as_object(value, "")?;
    let arr = as_array(require(map, "candidates", "")?, "candidates")?;
    let mut candidates = Vec::with_capacity(arr.len());
    for (i, c) in arr.iter().enumerate() {
        let path = format!("candidates[{i}]");
        let c_map = as_object(c, &path)?;
        let statement_path = join(&path, "statement");
        let statement = as_str(require(c_map, "statement", &path)?, &statement_path)?.to_string();
        let kind_path = join(&path, "kind");
        let kind = match as_str(require(c_map, "kind", &path)?, &kind_path)? {
            "entity" => NodeKind::Entity,
            "concept" => NodeKind::Concept,
            other => {
                return Err(invalid(
                    kind_path,
                    format!("expected one of entity|concept, got '{other}'"),
                ))
            }
        };
        let mut edges = Vec::new();
        if let Some(edges_value) = c_map.get("edges") {
            if !edges_value.is_null() {
                let edges_path = join(&path, "edges");
                for (j, edge) in as_array(edges_value, &edges_path)?.iter().enumerate() {
                    let edge_path = format!("{edges_path}[{j}]");
                    let e_map = as_object(edge, &edge_path)?;
                    let rel_path = join(&edge_path, "relation");
                    let relation = match as_str(require(e_map, "relation", &edge_path)?, &rel_path)? {
                        "is_a" => RelationKind::IsA,
                        "has_property" => RelationKind::HasProperty,
                        "related_to" => RelationKind::RelatedTo,
                        "implies" => RelationKind::Implies,
                        other => {
                            return Err(invalid(
                                rel_path,
                                format!(
                                    "expected one of is_a|has_property|related_to|implies, got '{other}'"
                                ),
                            ))
                        }
                    };
                    let target_path = join(&edge_path, "target");
                    let target = as_str(require(e_map, "target", &edge_path)?, &target_path)?;
                    if target.trim().is_empty() {
                        return Err(invalid(target_path, "edge target must be non-empty"));
                    }
                    edges.push((relation, target.to_string()));
                }
            }
        }
        candidates.push(CandidateSketch {
            statement,
            kind,
            edges,
        });
    }
    Ok(ParsedOutput::Candidates(candidates))
}
