//! Chat-completion backend over HTTP.
//!
//! Requests pin temperature to 0. Timeouts and 5xx responses are retried
//! with exponential backoff; anything else fails fast. Errors carry the
//! attempt count so degradation events can show how hard we tried.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::error::Error;

use super::{RoleConfig, RolePayload, BACKOFF_BASE_MS};

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

enum AttemptError {
    Retryable(String),
    Fatal(String),
}

/// Calls the configured endpoint; returns the assistant text and the number
/// of attempts spent. The error side also reports attempts.
pub fn call(config: &RoleConfig, payload: &RolePayload) -> Result<(String, u32), (Error, u32)> {
    let endpoint = config.resolve_endpoint().map_err(|e| (e, 0))?;
    let api_key = config.resolve_api_key();
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_millis(config.timeout_ms))
        .build()
        .map_err(|e| {
            (
                Error::Endpoint {
                    attempts: 0,
                    detail: format!("client build failed: {e}"),
                },
                0,
            )
        })?;

    let body = json!({
        "messages": [
            {"role": "system", "content": config.prompt_template},
            {"role": "user", "content": payload.canonical_json()},
        ],
        "temperature": 0,
    });

    let max_attempts = config.max_retries + 1;
    let mut last_detail = String::new();
    for attempt in 1..=max_attempts {
        match attempt_once(&client, &endpoint, api_key.as_deref(), &body) {
            Ok(content) => return Ok((content, attempt)),
            Err(AttemptError::Fatal(detail)) => {
                return Err((
                    Error::Endpoint {
                        attempts: attempt,
                        detail,
                    },
                    attempt,
                ))
            }
            Err(AttemptError::Retryable(detail)) => {
                last_detail = detail;
                if attempt < max_attempts {
                    let backoff = BACKOFF_BASE_MS << (attempt - 1);
                    std::thread::sleep(Duration::from_millis(backoff));
                }
            }
        }
    }
    Err((
        Error::Endpoint {
            attempts: max_attempts,
            detail: last_detail,
        },
        max_attempts,
    ))
}

fn attempt_once(
    client: &reqwest::blocking::Client,
    endpoint: &str,
    api_key: Option<&str>,
    body: &serde_json::Value,
) -> Result<String, AttemptError> {
    let mut request = client.post(endpoint).json(body);
    if let Some(key) = api_key {
        request = request.bearer_auth(key);
    }
    let response = request.send().map_err(|e| {
        // Connection refusals and timeouts are transient by assumption.
        AttemptError::Retryable(format!("transport error: {e}"))
    })?;
    let status = response.status();
    if status.is_server_error() {
        return Err(AttemptError::Retryable(format!(
            "endpoint returned status {status}"
        )));
    }
    if !status.is_success() {
        return Err(AttemptError::Fatal(format!(
            "endpoint returned status {status}"
        )));
    }
    let parsed: ChatResponse = response
        .json()
        .map_err(|e| AttemptError::Fatal(format!("invalid completion body: {e}")))?;
    parsed
        .choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or_else(|| AttemptError::Fatal("completion body has no choices".into()))
}
