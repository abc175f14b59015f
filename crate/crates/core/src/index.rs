//! Search primitives shared by both persistent stores.
//!
//! Retrieval is an exact linear scan by contract: scores are cosine against
//! every eligible row, never an approximation. The comparator lives here so
//! the mid-term store, the graph, and every oracle rank identically.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::UserId;

/// Which persistent tier a row lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreKind {
    Mtm,
    Ltm,
}

impl StoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StoreKind::Mtm => "mtm",
            StoreKind::Ltm => "ltm",
        }
    }
}

/// Store selector carried on a retrieval plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetStore {
    Mtm,
    Ltm,
    Both,
}

impl TargetStore {
    pub fn includes(self, kind: StoreKind) -> bool {
        matches!(
            (self, kind),
            (TargetStore::Both, _) | (TargetStore::Mtm, StoreKind::Mtm) | (TargetStore::Ltm, StoreKind::Ltm)
        )
    }
}

/// Metadata constraints applied during the coarse scan.
///
/// `user_id` partitions the mid-term store and is always enforced there; the
/// graph is de-identified so it carries no user constraint. The time window
/// is inclusive on both ends and filters on `created_at`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataFilter {
    pub user_id: UserId,
    pub time_window: Option<(i64, i64)>,
    pub type_tags: Option<BTreeSet<String>>,
    pub target_store: TargetStore,
}

impl MetadataFilter {
    pub fn new(
        user_id: impl Into<UserId>,
        time_window: Option<(i64, i64)>,
        type_tags: Option<BTreeSet<String>>,
        target_store: TargetStore,
    ) -> Result<Self> {
        if let Some((start, end)) = time_window {
            if start > end {
                return Err(Error::InvalidTimeWindow { start, end });
            }
        }
        Ok(Self {
            user_id: user_id.into(),
            time_window,
            type_tags,
            target_store,
        })
    }

    /// Unconstrained scan of one user's mid-term partition.
    pub fn for_user(user_id: impl Into<UserId>) -> Self {
        Self {
            user_id: user_id.into(),
            time_window: None,
            type_tags: None,
            target_store: TargetStore::Both,
        }
    }

    pub fn window_contains(&self, created_at: i64) -> bool {
        match self.time_window {
            Some((start, end)) => created_at >= start && created_at <= end,
            None => true,
        }
    }

    /// Tag constraint: at least one shared tag when the filter names any.
    pub fn tags_match(&self, tags: &BTreeSet<String>) -> bool {
        match &self.type_tags {
            Some(wanted) if !wanted.is_empty() => wanted.iter().any(|t| tags.contains(t)),
            _ => true,
        }
    }
}

/// One scored row before truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranked<T> {
    pub id: T,
    pub score: f64,
    pub created_at: i64,
}

/// Sorts descending by score, breaking ties by newer `created_at`, then by
/// lexicographically smaller id, and truncates to `k`. Every ranked surface
/// in the crate funnels through this one ordering.
pub fn rank_top_k<T: Ord + Clone>(mut rows: Vec<Ranked<T>>, k: usize) -> Vec<Ranked<T>> {
    rows.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| b.created_at.cmp(&a.created_at))
            .then_with(|| a.id.cmp(&b.id))
    });
    rows.truncate(k);
    rows
}
