//! Recorded-response backend: replay fixtures keyed by payload hash.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Role;

/// One recorded exchange. `payload_hash` is the canonical payload hash the
/// gateway computes for live calls, so recordings and replays line up.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fixture {
    pub role: Role,
    pub payload_hash: String,
    pub response: String,
}

/// Fixture queue per (role, payload hash). Repeated calls with the same
/// payload consume fixtures in file order.
#[derive(Debug, Default)]
pub struct ScriptedFixtures {
    queues: BTreeMap<(Role, String), VecDeque<String>>,
}

impl ScriptedFixtures {
    /// Loads a JSONL fixture file, one `Fixture` object per line. Blank
    /// lines are allowed; anything else that fails to parse names its line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path)?;
        let mut fixtures = Self::default();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fixture: Fixture = serde_json::from_str(line).map_err(|e| Error::Snapshot {
                file: path.display().to_string(),
                line: i + 1,
                reason: format!("invalid fixture: {e}"),
            })?;
            fixtures.push(fixture.role, &fixture.payload_hash, &fixture.response);
        }
        Ok(fixtures)
    }

    pub fn push(&mut self, role: Role, payload_hash: &str, response: &str) {
        self.queues
            .entry((role, payload_hash.to_string()))
            .or_default()
            .push_back(response.to_string());
    }

    pub fn len(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pops the next fixture for this role and payload.
    pub fn next(&mut self, role: Role, payload_hash: &str) -> Result<String> {
        self.queues
            .get_mut(&(role, payload_hash.to_string()))
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| Error::FixtureExhausted {
                role: role.as_str().to_string(),
                payload_hash: payload_hash.to_string(),
            })
    }
}
