//! Embeddable tiered memory engine for conversational agents.
//!
//! Three tiers with different lifetimes and shapes:
//! - short-term: the verbatim in-prompt dialogue window, never persisted
//! - mid-term: per-user episodic summaries with embeddings and usage stats
//! - long-term: a de-identified knowledge graph shared across sessions
//!
//! Queries are rewritten into routed hypothetical queries, retrieved in two
//! budgeted stages, and answered from the winning memories; writes run
//! inline maintenance and a periodic offline cycle migrates episodes into
//! the graph.

pub mod bootstrap;
pub mod config;
pub mod consolidator;
pub mod embedding;
pub mod engine;
pub mod error;
pub mod gateway;
pub mod harness;
pub mod index;
pub mod metrics;
pub mod persistence;
pub mod planner;
pub mod retrieval;
pub mod stm;
pub mod store;
pub mod textutil;
pub mod types;
pub mod writer;

pub use error::{Error, Result};
pub use types::{
    ConsolidationFlag, DialogueTurn, ItemId, LtmEdge, LtmNode, MemoryItem, NodeId, NodeKind,
    RelationKind, UserId,
};
