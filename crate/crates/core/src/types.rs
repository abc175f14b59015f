//! Shared domain types for the three memory tiers.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! id_newtype {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

id_newtype!(
    /// Opaque identifier of a conversation participant. Partitions the
    /// mid-term store; never stored in the long-term graph.
    UserId
);
id_newtype!(
    /// Identifier of one mid-term memory item, unique within the store.
    ItemId
);
id_newtype!(
    /// Identifier of one long-term graph node.
    NodeId
);

/// One user/assistant exchange. Lives only in the short-term buffer and the
/// write path; deliberately carries no serde so it can never leak into a
/// snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueTurn {
    pub user_id: UserId,
    pub turn_index: u64,
    pub input_text: String,
    /// Absent until the assistant reply for this turn is known.
    pub response_text: Option<String>,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: i64,
}

impl DialogueTurn {
    pub fn new(
        user_id: impl Into<UserId>,
        turn_index: u64,
        input_text: impl Into<String>,
        response_text: Option<String>,
        timestamp_ms: i64,
    ) -> Result<Self> {
        let input_text = input_text.into();
        if input_text.is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(Self {
            user_id: user_id.into(),
            turn_index,
            input_text,
            response_text,
            timestamp_ms,
        })
    }
}

/// Lifecycle marker consumed by the offline consolidation pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConsolidationFlag {
    /// Not scheduled for consolidation.
    #[default]
    None,
    /// Written or rewritten since the last cycle.
    NewlyWritten,
    /// Retrieved since the last cycle after having been consolidated before.
    Reactivated,
    /// Evicted under capacity pressure but strong enough to keep as knowledge.
    LowUtility,
}

impl ConsolidationFlag {
    /// Whether the consolidator should pick this item up.
    pub fn is_scheduled(self) -> bool {
        self != ConsolidationFlag::None
    }
}

/// One episodic summary in the per-user mid-term store.
///
/// Field order is the canonical serialization order for snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryItem {
    pub item_id: ItemId,
    pub user_id: UserId,
    pub summary: String,
    pub embedding: Vec<f32>,
    pub created_at: i64,
    pub last_accessed: i64,
    pub access_count: u64,
    pub type_tags: BTreeSet<String>,
    /// Accumulated support for the statement; grows on conflict resolution.
    pub evidence_strength: f64,
    pub consolidation_flag: ConsolidationFlag,
}

impl MemoryItem {
    /// A fresh item as the writer produces it: never accessed, flagged for
    /// the next consolidation cycle, evidence of a single observation.
    pub fn new(
        item_id: impl Into<ItemId>,
        user_id: impl Into<UserId>,
        summary: impl Into<String>,
        embedding: Vec<f32>,
        created_at: i64,
    ) -> Self {
        Self {
            item_id: item_id.into(),
            user_id: user_id.into(),
            summary: summary.into(),
            embedding,
            created_at,
            last_accessed: created_at,
            access_count: 0,
            type_tags: BTreeSet::new(),
            evidence_strength: 1.0,
            consolidation_flag: ConsolidationFlag::NewlyWritten,
        }
    }

    pub fn with_tags<I, S>(mut self, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.type_tags = tags.into_iter().map(Into::into).collect();
        self
    }
}

/// Node kind in the long-term graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Entity,
    Concept,
}

/// De-identified knowledge node. Labels must never contain a user id;
/// the consolidator redacts before insertion and tests scan for leaks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtmNode {
    pub node_id: NodeId,
    pub kind: NodeKind,
    pub label: String,
    pub embedding: Vec<f32>,
    /// Belief strength in [0, 1]; decays while evidence is thin.
    pub confidence: f64,
    pub evidence_count: u32,
    pub created_at: i64,
    pub updated_at: i64,
}

/// Relation kinds the consolidator may emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    IsA,
    HasProperty,
    RelatedTo,
    Implies,
}

impl RelationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::IsA => "is_a",
            RelationKind::HasProperty => "has_property",
            RelationKind::RelatedTo => "related_to",
            RelationKind::Implies => "implies",
        }
    }
}

/// Directed edge between two graph nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtmEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub relation: RelationKind,
    pub confidence: f64,
}
