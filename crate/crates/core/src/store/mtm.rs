//! Mid-term store: per-user partitions of episodic summaries.

use std::collections::{BTreeMap, BTreeSet};

use crate::embedding::cosine;
use crate::error::{Error, Result};
use crate::index::{rank_top_k, MetadataFilter, Ranked};
use crate::types::{ConsolidationFlag, ItemId, MemoryItem, UserId};

/// Episodic store. Rows never move between users; iteration order is the
/// partition key order plus insertion order within a partition, so every
/// scan over the store is deterministic.
#[derive(Debug, Clone, Default)]
pub struct MtmStore {
    dimension: usize,
    partitions: BTreeMap<UserId, Vec<MemoryItem>>,
    ids: BTreeSet<ItemId>,
    /// Evicted-but-worth-keeping items awaiting the next consolidation cycle.
    handoff: Vec<MemoryItem>,
    next_seq: u64,
}

impl MtmStore {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            ..Self::default()
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.partitions.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn user_len(&self, user: &UserId) -> usize {
        self.partitions.get(user).map_or(0, Vec::len)
    }

    pub fn users(&self) -> impl Iterator<Item = &UserId> {
        self.partitions.keys()
    }

    pub fn contains(&self, id: &ItemId) -> bool {
        self.ids.contains(id)
    }

    /// Next unused id in the store's own scheme.
    pub fn allocate_id(&mut self) -> ItemId {
        loop {
            self.next_seq += 1;
            let id = ItemId::new(format!("m{:06}", self.next_seq));
            if !self.ids.contains(&id) {
                return id;
            }
        }
    }

    /// Raw insert. Maintenance (merge, conflict, eviction) lives in the
    /// writer; this only guards the structural invariants.
    pub fn insert(&mut self, item: MemoryItem) -> Result<()> {
        if item.embedding.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: item.embedding.len(),
            });
        }
        if !self.ids.insert(item.item_id.clone()) {
            return Err(Error::DuplicateItem(item.item_id.to_string()));
        }
        self.partitions
            .entry(item.user_id.clone())
            .or_default()
            .push(item);
        Ok(())
    }

    pub fn get(&self, user: &UserId, id: &ItemId) -> Option<&MemoryItem> {
        self.partitions
            .get(user)?
            .iter()
            .find(|item| &item.item_id == id)
    }

    pub fn get_mut(&mut self, user: &UserId, id: &ItemId) -> Option<&mut MemoryItem> {
        self.partitions
            .get_mut(user)?
            .iter_mut()
            .find(|item| &item.item_id == id)
    }

    pub fn remove(&mut self, user: &UserId, id: &ItemId) -> Option<MemoryItem> {
        let partition = self.partitions.get_mut(user)?;
        let pos = partition.iter().position(|item| &item.item_id == id)?;
        let item = partition.remove(pos);
        self.ids.remove(id);
        if partition.is_empty() {
            self.partitions.remove(user);
        }
        Some(item)
    }

    pub fn user_items(&self, user: &UserId) -> &[MemoryItem] {
        self.partitions.get(user).map_or(&[], Vec::as_slice)
    }

    pub fn user_items_mut(&mut self, user: &UserId) -> Option<&mut Vec<MemoryItem>> {
        self.partitions.get_mut(user)
    }

    /// All items across partitions, in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = &MemoryItem> {
        self.partitions.values().flat_map(|p| p.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut MemoryItem> {
        self.partitions.values_mut().flat_map(|p| p.iter_mut())
    }

    /// Exact top-k scan over the filter's user partition.
    ///
    /// Side effects on every hit: access counter bump, `last_accessed`
    /// refresh, and items already consolidated get re-flagged so the next
    /// offline cycle sees the reactivation.
    pub fn search(
        &mut self,
        query: &[f32],
        filter: &MetadataFilter,
        k: usize,
        now_ms: i64,
    ) -> Result<Vec<(ItemId, f64)>> {
        if query.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: query.len(),
            });
        }
        let mut rows = Vec::new();
        if let Some(partition) = self.partitions.get(&filter.user_id) {
            for item in partition {
                if !filter.window_contains(item.created_at) || !filter.tags_match(&item.type_tags) {
                    continue;
                }
                let score = cosine(query, &item.embedding)?;
                rows.push(Ranked {
                    id: item.item_id.clone(),
                    score,
                    created_at: item.created_at,
                });
            }
        }
        let ranked = rank_top_k(rows, k);
        let user = filter.user_id.clone();
        let mut hits = Vec::with_capacity(ranked.len());
        for row in ranked {
            let item = self
                .get_mut(&user, &row.id)
                .expect("ranked id came from this partition");
            item.access_count += 1;
            item.last_accessed = now_ms;
            if item.consolidation_flag == ConsolidationFlag::None {
                item.consolidation_flag = ConsolidationFlag::Reactivated;
            }
            hits.push((row.id, row.score));
        }
        Ok(hits)
    }

    /// Queues an evicted item for the consolidator, dropping it instead when
    /// the queue already holds `cap` entries.
    pub fn queue_for_consolidation(&mut self, item: MemoryItem, cap: usize) -> bool {
        if self.handoff.len() >= cap {
            return false;
        }
        self.handoff.push(item);
        true
    }

    pub fn handoff_len(&self) -> usize {
        self.handoff.len()
    }

    pub fn handoff_items(&self) -> &[MemoryItem] {
        &self.handoff
    }

    pub fn drain_handoff(&mut self) -> Vec<MemoryItem> {
        std::mem::take(&mut self.handoff)
    }

    /// Allocator position, persisted so ids stay unique across restarts.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn restore_seq(&mut self, seq: u64) {
        self.next_seq = seq;
    }
}
