//! Backing-model gateway.
//!
//! Every model call in the pipeline goes through one funnel: a role, a typed
//! payload, a backend. Backends are swappable per role — deterministic rule
//! tables for tests and offline work, recorded fixtures for replay, or a
//! chat-completion endpoint over HTTP. Whatever the backend, output comes
//! back as a [`StructuredResponse`] whose `parsed` field is present exactly
//! when the raw text validates against the role's schema.

mod http;
mod mock;
pub mod parse;
mod scripted;
pub mod templates;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::planner::PlannerRules;

pub use parse::{parse_structured, CandidateSketch, HqSketch, ParsedOutput, PlanSketch, RouteDecision};
pub use scripted::ScriptedFixtures;

/// Environment variable naming the chat-completion endpoint.
pub const ENDPOINT_ENV: &str = "LIGHTMEM_MODEL_ENDPOINT";
/// Default environment variable holding the endpoint credential.
pub const API_KEY_ENV: &str = "LIGHTMEM_MODEL_KEY";

pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;
pub const DEFAULT_MAX_RETRIES: u32 = 2;
/// Base delay for exponential retry backoff.
pub const BACKOFF_BASE_MS: u64 = 200;

/// The four model roles in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Planner,
    Selector,
    Writer,
    Consolidator,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Planner, Role::Selector, Role::Writer, Role::Consolidator];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Planner => "planner",
            Role::Selector => "selector",
            Role::Writer => "writer",
            Role::Consolidator => "consolidator",
        }
    }

    fn index(self) -> usize {
        match self {
            Role::Planner => 0,
            Role::Selector => 1,
            Role::Writer => 2,
            Role::Consolidator => 3,
        }
    }

    pub fn default_template(self) -> &'static str {
        match self {
            Role::Planner => templates::PLANNER_TEMPLATE,
            Role::Selector => templates::SELECTOR_TEMPLATE,
            Role::Writer => templates::WRITER_TEMPLATE,
            Role::Consolidator => templates::CONSOLIDATOR_TEMPLATE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Scripted,
    Http,
}

/// Per-role backend configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleConfig {
    pub role: Role,
    pub backend: BackendKind,
    pub prompt_template: String,
    /// Explicit endpoint; falls back to `LIGHTMEM_MODEL_ENDPOINT`.
    pub endpoint_url: Option<String>,
    /// Name of the environment variable holding the credential.
    pub api_key_env: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
}

impl RoleConfig {
    pub fn new(role: Role, backend: BackendKind) -> Self {
        Self {
            role,
            backend,
            prompt_template: role.default_template().to_string(),
            endpoint_url: None,
            api_key_env: None,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt_template.trim().is_empty() {
            return Err(Error::Config(format!(
                "{} role has an empty prompt template",
                self.role.as_str()
            )));
        }
        if self.timeout_ms == 0 {
            return Err(Error::Config("timeout_ms must be positive".into()));
        }
        if self.backend == BackendKind::Http
            && self.endpoint_url.is_none()
            && std::env::var(ENDPOINT_ENV).is_err()
        {
            return Err(Error::Config(format!(
                "{} role uses the http backend but no endpoint is configured ({} unset)",
                self.role.as_str(),
                ENDPOINT_ENV
            )));
        }
        Ok(())
    }

    fn resolve_endpoint(&self) -> Result<String> {
        if let Some(url) = &self.endpoint_url {
            return Ok(url.clone());
        }
        std::env::var(ENDPOINT_ENV).map_err(|_| {
            Error::Config(format!(
                "no endpoint configured for role {} and {} unset",
                self.role.as_str(),
                ENDPOINT_ENV
            ))
        })
    }

    fn resolve_api_key(&self) -> Option<String> {
        let var = self.api_key_env.as_deref().unwrap_or(API_KEY_ENV);
        std::env::var(var).ok()
    }
}

/// Compact candidate view shown to the selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateBrief {
    pub id: String,
    pub store: String,
    pub text: String,
    pub created_at: i64,
}

/// Compact episode view shown to the consolidator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeBrief {
    pub item_id: String,
    pub user_id: String,
    pub summary: String,
}

/// Typed request body for one role invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum RolePayload {
    Planner {
        input_text: String,
        context_window: String,
    },
    Selector {
        hqs: Vec<String>,
        k: usize,
        candidates: Vec<CandidateBrief>,
    },
    Writer {
        user_id: String,
        input_text: String,
        response_text: String,
        context_window: String,
    },
    Consolidator {
        items: Vec<EpisodeBrief>,
        known_user_ids: Vec<String>,
    },
}

impl RolePayload {
    /// Canonical serialization: keys sorted, string whitespace collapsed.
    /// This is the hashing and replay surface, so it must never depend on
    /// construction order.
    pub fn canonical_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("payload serializes");
        normalize_strings(&mut value);
        value.to_string()
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_json().as_bytes());
        hex::encode(hasher.finalize())
    }
}

fn normalize_strings(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::String(s) => {
            let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ");
            *s = collapsed;
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(normalize_strings),
        serde_json::Value::Object(map) => map.values_mut().for_each(normalize_strings),
        _ => {}
    }
}

/// Outcome of one backend invocation. `parsed` is present exactly when
/// `raw` validates against the role's output schema; `degraded` marks
/// responses the caller must not trust (endpoint failure or schema
/// violation) together with a human-readable reason.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredResponse {
    pub raw: String,
    pub parsed: Option<ParsedOutput>,
    pub degraded: bool,
    pub detail: Option<String>,
    /// Transport attempts spent, retries included.
    pub attempts: u32,
}

impl StructuredResponse {
    fn ok(raw: String, parsed: ParsedOutput, attempts: u32) -> Self {
        Self {
            raw,
            parsed: Some(parsed),
            degraded: false,
            detail: None,
            attempts,
        }
    }

    fn degraded(raw: String, detail: String, attempts: u32) -> Self {
        Self {
            raw,
            parsed: None,
            degraded: true,
            detail: Some(detail),
            attempts,
        }
    }
}

/// A fallback or failure observed somewhere in the pipeline, kept for
/// operator visibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationEvent {
    pub component: String,
    pub reason: String,
    pub detail: String,
    pub at_ms: i64,
}

/// Role-multiplexing gateway. Cheap to share behind an `Arc`; call counters
/// make invocation budgets observable in tests.
#[derive(Debug)]
pub struct Gateway {
    configs: BTreeMap<Role, RoleConfig>,
    scripted: Option<parking_lot::Mutex<ScriptedFixtures>>,
    mock_rules: PlannerRules,
    calls: [AtomicU64; 4],
}

impl Gateway {
    /// All four roles on the deterministic rule-table backend.
    pub fn mock() -> Self {
        let configs = Role::ALL
            .iter()
            .map(|&role| (role, RoleConfig::new(role, BackendKind::Mock)))
            .collect();
        Self {
            configs,
            scripted: None,
            mock_rules: PlannerRules::default(),
            calls: Default::default(),
        }
    }

    pub fn new(configs: impl IntoIterator<Item = RoleConfig>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for config in configs {
            config.validate()?;
            map.insert(config.role, config);
        }
        for role in Role::ALL {
            map.entry(role)
                .or_insert_with(|| RoleConfig::new(role, BackendKind::Mock));
        }
        Ok(Self {
            configs: map,
            scripted: None,
            mock_rules: PlannerRules::default(),
            calls: Default::default(),
        })
    }

    pub fn with_fixtures(mut self, fixtures: ScriptedFixtures) -> Self {
        self.scripted = Some(parking_lot::Mutex::new(fixtures));
        self
    }

    pub fn with_planner_rules(mut self, rules: PlannerRules) -> Self {
        self.mock_rules = rules;
        self
    }

    pub fn config(&self, role: Role) -> &RoleConfig {
        &self.configs[&role]
    }

    pub fn planner_rules(&self) -> &PlannerRules {
        &self.mock_rules
    }

    /// Invocations of `role` since construction.
    pub fn calls(&self, role: Role) -> u64 {
        self.calls[role.index()].load(Ordering::Relaxed)
    }

    /// Runs one role invocation. Transport failures and schema violations
    /// come back as degraded responses for the caller's fallback path;
    /// exhausted replay fixtures are hard errors because they mean the test
    /// script itself is wrong.
    pub fn complete(&self, role: Role, payload: &RolePayload) -> Result<StructuredResponse> {
        let config = self.config(role);
        self.calls[role.index()].fetch_add(1, Ordering::Relaxed);
        let (raw, attempts) = match config.backend {
            BackendKind::Mock => (mock::respond(role, payload, &self.mock_rules), 1),
            BackendKind::Scripted => {
                let fixtures = self.scripted.as_ref().ok_or_else(|| {
                    Error::Config("scripted backend selected but no fixtures loaded".into())
                })?;
                (fixtures.lock().next(role, &payload.hash())?, 1)
            }
            BackendKind::Http => match http::call(config, payload) {
                Ok((raw, attempts)) => (raw, attempts),
                Err((err, attempts)) => {
                    return Ok(StructuredResponse::degraded(
                        String::new(),
                        err.to_string(),
                        attempts,
                    ))
                }
            },
        };
        match parse_structured(&raw, role) {
            Ok(parsed) => Ok(StructuredResponse::ok(raw, parsed, attempts)),
            Err(Error::StructuredOutput { path, reason }) => Ok(StructuredResponse::degraded(
                raw,
                format!("structured output invalid at {path}: {reason}"),
                attempts,
            )),
            Err(other) => Err(other),
        }
    }
}
