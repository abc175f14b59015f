//! Long-term store: a de-identified knowledge graph.

use std::collections::BTreeSet;

use crate::embedding::cosine;
use crate::error::{Error, Result};
use crate::index::{rank_top_k, MetadataFilter, Ranked};
use crate::types::{LtmEdge, LtmNode, NodeId, RelationKind};

/// Knowledge graph shared across users. Nodes keep insertion order; edges
/// are deduplicated on (src, dst, relation). The graph carries no per-user
/// access statistics, so reads never mutate it.
#[derive(Debug, Clone, Default)]
pub struct LtmGraph {
    dimension: usize,
    nodes: Vec<LtmNode>,
    ids: BTreeSet<NodeId>,
    edges: Vec<LtmEdge>,
    next_seq: u64,
}

impl LtmGraph {
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
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge_len(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[LtmNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[LtmEdge] {
        &self.edges
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.ids.contains(id)
    }

    pub fn get(&self, id: &NodeId) -> Option<&LtmNode> {
        self.nodes.iter().find(|n| &n.node_id == id)
    }

    pub fn get_mut(&mut self, id: &NodeId) -> Option<&mut LtmNode> {
        self.nodes.iter_mut().find(|n| &n.node_id == id)
    }

    pub fn find_by_label(&self, label: &str) -> Option<&LtmNode> {
        self.nodes.iter().find(|n| n.label == label)
    }

    pub fn allocate_id(&mut self) -> NodeId {
        loop {
            self.next_seq += 1;
            let id = NodeId::new(format!("n{:06}", self.next_seq));
            if !self.ids.contains(&id) {
                return id;
            }
        }
    }

    /// Allocator position, persisted so ids stay unique across restarts.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn restore_seq(&mut self, seq: u64) {
        self.next_seq = seq;
    }

    pub fn insert_node(&mut self, node: LtmNode) -> Result<()> {
        if node.embedding.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: node.embedding.len(),
            });
        }
        if !self.ids.insert(node.node_id.clone()) {
            return Err(Error::DuplicateItem(node.node_id.to_string()));
        }
        self.nodes.push(node);
        Ok(())
    }

    /// Removes a node and every edge touching it.
    pub fn remove_node(&mut self, id: &NodeId) -> Option<LtmNode> {
        let pos = self.nodes.iter().position(|n| &n.node_id == id)?;
        let node = self.nodes.remove(pos);
        self.ids.remove(id);
        self.edges.retain(|e| &e.src != id && &e.dst != id);
        Some(node)
    }

    /// Adds an edge between existing, distinct nodes. An exact duplicate on
    /// (src, dst, relation) is left as-is and reported as not added.
    pub fn add_edge(&mut self, edge: LtmEdge) -> Result<bool> {
        if edge.src == edge.dst {
            return Err(Error::SelfEdge(edge.src.to_string()));
        }
        if !self.ids.contains(&edge.src) {
            return Err(Error::UnknownItem(edge.src.to_string()));
        }
        if !self.ids.contains(&edge.dst) {
            return Err(Error::UnknownItem(edge.dst.to_string()));
        }
        let duplicate = self
            .edges
            .iter()
            .any(|e| e.src == edge.src && e.dst == edge.dst && e.relation == edge.relation);
        if duplicate {
            return Ok(false);
        }
        self.edges.push(edge);
        Ok(true)
    }

    pub fn edges_from<'a>(&'a self, id: &'a NodeId) -> impl Iterator<Item = &'a LtmEdge> {
        self.edges.iter().filter(move |e| &e.src == id)
    }

    pub fn relation_count(&self, relation: RelationKind) -> usize {
        self.edges.iter().filter(|e| e.relation == relation).count()
    }

    /// Exact top-k scan. The user constraint does not apply here; only the
    /// time window filters rows. Reads are side-effect free.
    pub fn search(
        &self,
        query: &[f32],
        filter: &MetadataFilter,
        k: usize,
    ) -> Result<Vec<(NodeId, f64)>> {
        if query.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: query.len(),
            });
        }
        let mut rows = Vec::new();
        for node in &self.nodes {
            if !filter.window_contains(node.created_at) {
                continue;
            }
            let score = cosine(query, &node.embedding)?;
            rows.push(Ranked {
                id: node.node_id.clone(),
                score,
                created_at: node.created_at,
            });
        }
        Ok(rank_top_k(rows, k)
            .into_iter()
            .map(|r| (r.id, r.score))
            .collect())
    }

    /// Unfiltered nearest nodes; the consolidator's anchor probe.
    pub fn nearest(&self, query: &[f32], k: usize) -> Result<Vec<(NodeId, f64)>> {
        self.search(query, &MetadataFilter::for_user(""), k)
    }
}
