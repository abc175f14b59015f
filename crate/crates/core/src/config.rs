//! Key=value service configuration.
//!
//! One setting per line, `#` comments, later keys overriding earlier ones.
//! Every key is listed below; an unknown key is an error rather than a
//! silent ignore, since a typo here changes retrieval behavior.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::engine::{ClockMode, EngineConfig};
use crate::error::{Error, Result};
use crate::gateway::{BackendKind, Gateway, Role, RoleConfig, ScriptedFixtures};
use crate::planner::PlannerRules;
use crate::retrieval::Stage2Mode;

/// Parsed configuration, still unresolved: paths are not read and the
/// gateway is not built until [`ServiceConfig::build`].
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub engine: EngineConfig,
    pub backends: BTreeMap<Role, BackendKind>,
    pub endpoint: Option<String>,
    pub timeout_ms: Option<u64>,
    pub max_retries: Option<u32>,
    pub fixtures: Option<PathBuf>,
    pub rules: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            engine: EngineConfig::default(),
            backends: Role::ALL
                .iter()
                .map(|&role| (role, BackendKind::Mock))
                .collect(),
            endpoint: None,
            timeout_ms: None,
            max_retries: None,
            fixtures: None,
            rules: None,
        }
    }
}

fn bad(line: usize, detail: impl std::fmt::Display) -> Error {
    Error::Config(format!("config line {line}: {detail}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| bad(line, format!("key '{key}' got unparsable value '{value}'")))
}

fn parse_backend(value: &str, line: usize) -> Result<BackendKind> {
    match value {
        "mock" => Ok(BackendKind::Mock),
        "scripted" => Ok(BackendKind::Scripted),
        "http" => Ok(BackendKind::Http),
        other => Err(bad(line, format!("backend must be mock|scripted|http, got '{other}'"))),
    }
}

impl ServiceConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut clock_kind: Option<&str> = None;
        let mut clock_start_ms = 0i64;
        let mut clock_step_ms = 1_000i64;
        let mut stepping_set = false;

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| bad(line, format!("expected key = value, got '{trimmed}'")))?;
            let key = key.trim();
            let value = value.trim();
            if value.is_empty() {
                return Err(bad(line, format!("key '{key}' has an empty value")));
            }

            match key {
                "dimension" => config.engine.embedding.dimension = parse_num(key, value, line)?,
                "k" => config.engine.planner.k = parse_num(key, value, line)?,
                "max_hqs" => config.engine.planner.max_hqs = parse_num(key, value, line)?,
                "vague_window_days" => {
                    config.engine.planner.vague_window_days = parse_num(key, value, line)?
                }
                "capacity_b" => config.engine.mtm.capacity_b = parse_num(key, value, line)?,
                "merge_threshold" => {
                    config.engine.mtm.merge_threshold = parse_num(key, value, line)?
                }
                "eviction_batch" => {
                    config.engine.mtm.eviction_batch = parse_num(key, value, line)?
                }
                "trigger_interval_turns" => {
                    config.engine.consolidation.trigger_interval_turns =
                        parse_num(key, value, line)?
                }
                "anchor_k" => config.engine.consolidation.anchor_k = parse_num(key, value, line)?,
                "consolidation_merge_threshold" => {
                    config.engine.consolidation.merge_threshold = parse_num(key, value, line)?
                }
                "decay_lambda" => {
                    config.engine.consolidation.decay_lambda = parse_num(key, value, line)?
                }
                "drop_floor" => {
                    config.engine.consolidation.drop_floor = parse_num(key, value, line)?
                }
                "stage2" => {
                    config.engine.stage2 = value
                        .parse::<Stage2Mode>()
                        .map_err(|e| bad(line, e))?
                }
                "stm_max_turns" => config.engine.stm_max_turns = parse_num(key, value, line)?,
                "stm_max_tokens" => config.engine.stm_max_tokens = parse_num(key, value, line)?,
                "clock" => match value {
                    "system" | "logical" => clock_kind = Some(if value == "system" { "system" } else { "logical" }),
                    other => return Err(bad(line, format!("clock must be system|logical, got '{other}'"))),
                },
                "clock_start_ms" => {
                    clock_start_ms = parse_num(key, value, line)?;
                    stepping_set = true;
                }
                "clock_step_ms" => {
                    clock_step_ms = parse_num(key, value, line)?;
                    stepping_set = true;
                }
                "backend" => {
                    let kind = parse_backend(value, line)?;
                    for role in Role::ALL {
                        config.backends.insert(role, kind);
                    }
                }
                "planner_backend" => {
                    config.backends.insert(Role::Planner, parse_backend(value, line)?);
                }
                "selector_backend" => {
                    config.backends.insert(Role::Selector, parse_backend(value, line)?);
                }
                "writer_backend" => {
                    config.backends.insert(Role::Writer, parse_backend(value, line)?);
                }
                "consolidator_backend" => {
                    config
                        .backends
                        .insert(Role::Consolidator, parse_backend(value, line)?);
                }
                "endpoint" => config.endpoint = Some(value.to_string()),
                "timeout_ms" => config.timeout_ms = Some(parse_num(key, value, line)?),
                "max_retries" => config.max_retries = Some(parse_num(key, value, line)?),
                "fixtures" => config.fixtures = Some(PathBuf::from(value)),
                "rules" => config.rules = Some(PathBuf::from(value)),
                other => return Err(bad(line, format!("unknown key '{other}'"))),
            }
        }

        match clock_kind {
            Some("logical") => {
                config.engine.clock = ClockMode::Logical {
                    start_ms: clock_start_ms,
                    step_ms: clock_step_ms,
                };
            }
            Some(_) | None => {
                if stepping_set {
                    return Err(Error::Config(
                        "clock_start_ms/clock_step_ms require clock = logical".into(),
                    ));
                }
            }
        }
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Resolves paths and assembles the runtime pair. Planner rules, when
    /// given, feed both the rule-based fallback and the mock backend so the
    /// two planners never disagree on the lexicon.
    pub fn build(mut self) -> Result<(EngineConfig, Gateway)> {
        let mut gateway_rules = None;
        if let Some(path) = &self.rules {
            let rules = PlannerRules::load(path)?;
            self.engine.planner.rules = rules.clone();
            gateway_rules = Some(rules);
        }

        let mut roles = Vec::new();
        for (&role, &backend) in &self.backends {
            let mut rc = RoleConfig::new(role, backend);
            if let Some(endpoint) = &self.endpoint {
                rc.endpoint_url = Some(endpoint.clone());
            }
            if let Some(timeout) = self.timeout_ms {
                rc.timeout_ms = timeout;
            }
            if let Some(retries) = self.max_retries {
                rc.max_retries = retries;
            }
            roles.push(rc);
        }
        let mut gateway = Gateway::new(roles)?;
        if let Some(path) = &self.fixtures {
            gateway = gateway.with_fixtures(ScriptedFixtures::load(path)?);
        } else if self.backends.values().any(|&b| b == BackendKind::Scripted) {
            return Err(Error::Config(
                "a scripted backend is selected but no fixtures file is configured".into(),
            ));
        }
        if let Some(rules) = gateway_rules {
            gateway = gateway.with_planner_rules(rules);
        }

        self.engine.validate()?;
        Ok((self.engine, gateway))
    }
}
