//! Short-term buffer: the in-prompt dialogue window.
//!
//! Session-local and intentionally unserializable. The buffer is rendered
//! into the prompt on every query and is never persisted or searched.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::types::{DialogueTurn, UserId};

pub const DEFAULT_MAX_TURNS: usize = 20;
pub const DEFAULT_MAX_TOKENS: usize = 2048;

/// Sliding window of the most recent turns for one session.
///
/// Both bounds hold after every append: at most `max_turns` turns, and the
/// rendered window stays within `max_tokens` whitespace tokens.
#[derive(Debug, Clone)]
pub struct StmBuffer {
    user_id: UserId,
    turns: VecDeque<DialogueTurn>,
    max_turns: usize,
    max_tokens: usize,
}

impl StmBuffer {
    pub fn new(user_id: impl Into<UserId>, max_turns: usize, max_tokens: usize) -> Result<Self> {
        if max_turns == 0 || max_tokens == 0 {
            return Err(Error::Config(
                "stm bounds must be at least 1 turn and 1 token".into(),
            ));
        }
        Ok(Self {
            user_id: user_id.into(),
            turns: VecDeque::new(),
            max_turns,
            max_tokens,
        })
    }

    pub fn with_defaults(user_id: impl Into<UserId>) -> Self {
        Self::new(user_id, DEFAULT_MAX_TURNS, DEFAULT_MAX_TOKENS).expect("defaults are valid")
    }

    pub fn user_id(&self) -> &UserId {
        &self.user_id
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn turns(&self) -> impl Iterator<Item = &DialogueTurn> {
        self.turns.iter()
    }

    /// Appends a completed turn, then drops oldest turns until both the turn
    /// bound and the rendered token bound hold. A turn whose own rendering
    /// exceeds `max_tokens` is dropped outright.
    pub fn append(&mut self, turn: DialogueTurn) -> Result<()> {
        if turn.user_id != self.user_id {
            return Err(Error::SessionMismatch {
                expected: self.user_id.to_string(),
                got: turn.user_id.to_string(),
            });
        }
        if let Some(last) = self.turns.back() {
            if turn.turn_index <= last.turn_index {
                return Err(Error::NonMonotonicTurn {
                    last: last.turn_index,
                    got: turn.turn_index,
                });
            }
        }
        self.turns.push_back(turn);
        while self.turns.len() > self.max_turns
            || (!self.turns.is_empty() && token_count(&self.window()) > self.max_tokens)
        {
            self.turns.pop_front();
        }
        Ok(())
    }

    /// Renders the window oldest-first, one line per turn.
    pub fn window(&self) -> String {
        let mut out = String::new();
        for (i, turn) in self.turns.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&render_turn(turn));
        }
        out
    }
}

fn render_turn(turn: &DialogueTurn) -> String {
    format!(
        "[{}] user: {} / assistant: {}",
        turn.turn_index,
        turn.input_text,
        turn.response_text.as_deref().unwrap_or("")
    )
}

/// Whitespace token count; the unit for every prompt budget in this crate.
pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}
