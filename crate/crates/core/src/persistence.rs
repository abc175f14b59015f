//! JSONL snapshots of the two durable stores.
//!
//! A snapshot directory holds three files, each starting with a one-line
//! header carrying the format version, the store dimension and allocator
//! position, and the exact line count that must follow. Every record is one
//! compact JSON line in canonical field order, so snapshots diff cleanly
//! and a corrupted line is reported by number. The short-term buffer has no
//! serialization surface and never appears here.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{LtmGraph, MtmStore};
use crate::types::{LtmEdge, LtmNode, MemoryItem};

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;
pub const MTM_FILE: &str = "mtm_items.jsonl";
pub const LTM_NODES_FILE: &str = "ltm_nodes.jsonl";
pub const LTM_EDGES_FILE: &str = "ltm_edges.jsonl";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    file: String,
    /// Embedding dimension for item and node files, 0 for edges.
    dimension: usize,
    /// Allocator position for item and node files, 0 for edges.
    next_seq: u64,
    count: usize,
}

/// Live rows sit in a user partition; handoff rows were evicted and are
/// waiting for the next consolidation cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Slot {
    Live,
    Handoff,
}

#[derive(Debug, Serialize, Deserialize)]
struct ItemLine {
    slot: Slot,
    #[serde(flatten)]
    item: MemoryItem,
}

fn corrupt(file: &str, line: usize, reason: impl ToString) -> Error {
    Error::Snapshot {
        file: file.to_string(),
        line,
        reason: reason.to_string(),
    }
}

fn write_jsonl(path: &Path, file: &str, header: &Header, lines: Vec<String>) -> Result<()> {
    let mut out = serde_json::to_string(header)?;
    out.push('\n');
    for line in lines {
        out.push_str(&line);
        out.push('\n');
    }
    fs::write(path.join(file), out)?;
    Ok(())
}

/// Reads one snapshot file: version-checked header plus exactly
/// `header.count` body lines.
fn read_jsonl<T: serde::de::DeserializeOwned>(dir: &Path, file: &str) -> Result<(Header, Vec<T>)> {
    let text = fs::read_to_string(dir.join(file))?;
    let mut lines = text.lines();
    let first = lines
        .next()
        .ok_or_else(|| corrupt(file, 1, "missing header"))?;
    let value: serde_json::Value =
        serde_json::from_str(first).map_err(|e| corrupt(file, 1, e))?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| corrupt(file, 1, "header has no format_version"))?;
    if found != u64::from(SNAPSHOT_FORMAT_VERSION) {
        return Err(Error::SnapshotVersion {
            expected: SNAPSHOT_FORMAT_VERSION,
            found: found as u32,
        });
    }
    let header: Header = serde_json::from_str(first).map_err(|e| corrupt(file, 1, e))?;
    if header.file != file.trim_end_matches(".jsonl") {
        return Err(corrupt(
            file,
            1,
            format!("header names file '{}'", header.file),
        ));
    }

    let mut rows = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if rows.len() == header.count {
            return Err(corrupt(file, line_no, "trailing data past declared count"));
        }
        rows.push(serde_json::from_str(line).map_err(|e| corrupt(file, line_no, e))?);
    }
    if rows.len() != header.count {
        return Err(corrupt(
            file,
            rows.len() + 2,
            format!("expected {} record lines, found {}", header.count, rows.len()),
        ));
    }
    Ok((header, rows))
}

/// Writes both stores under `dir`, creating it if needed.
pub fn save_snapshot(dir: &Path, mtm: &MtmStore, ltm: &LtmGraph) -> Result<()> {
    fs::create_dir_all(dir)?;

    let mut item_lines = Vec::with_capacity(mtm.len() + mtm.handoff_len());
    for item in mtm.iter() {
        item_lines.push(serde_json::to_string(&ItemLine {
            slot: Slot::Live,
            item: item.clone(),
        })?);
    }
    for item in mtm.handoff_items() {
        item_lines.push(serde_json::to_string(&ItemLine {
            slot: Slot::Handoff,
            item: item.clone(),
        })?);
    }
    write_jsonl(
        dir,
        MTM_FILE,
        &Header {
            format_version: SNAPSHOT_FORMAT_VERSION,
            file: "mtm_items".into(),
            dimension: mtm.dimension(),
            next_seq: mtm.next_seq(),
            count: item_lines.len(),
        },
        item_lines,
    )?;

    let node_lines = ltm
        .nodes()
        .iter()
        .map(serde_json::to_string)
        .collect::<serde_json::Result<Vec<_>>>()?;
    write_jsonl(
        dir,
        LTM_NODES_FILE,
        &Header {
            format_version: SNAPSHOT_FORMAT_VERSION,
            file: "ltm_nodes".into(),
            dimension: ltm.dimension(),
            next_seq: ltm.next_seq(),
            count: node_lines.len(),
        },
        node_lines,
    )?;

    let edge_lines = ltm
        .edges()
        .iter()
        .map(serde_json::to_string)
        .collect::<serde_json::Result<Vec<_>>>()?;
    write_jsonl(
        dir,
        LTM_EDGES_FILE,
        &Header {
            format_version: SNAPSHOT_FORMAT_VERSION,
            file: "ltm_edges".into(),
            dimension: 0,
            next_seq: 0,
            count: edge_lines.len(),
        },
        edge_lines,
    )
}

/// Rebuilds both stores from `dir`. Structural violations (duplicate ids,
/// dimension drift, dangling edges) surface as corruption errors naming the
/// offending line.
pub fn load_snapshot(dir: &Path) -> Result<(MtmStore, LtmGraph)> {
    let (mtm_header, item_lines) =
        read_jsonl::<ItemLine>(dir, MTM_FILE)?;
    let mut mtm = MtmStore::new(mtm_header.dimension);
    for (i, line) in item_lines.into_iter().enumerate() {
        let result = match line.slot {
            Slot::Live => mtm.insert(line.item),
            Slot::Handoff => {
                mtm.queue_for_consolidation(line.item, usize::MAX);
                Ok(())
            }
        };
        result.map_err(|e| corrupt(MTM_FILE, i + 2, e))?;
    }
    mtm.restore_seq(mtm_header.next_seq);

    let (node_header, nodes) =
        read_jsonl::<LtmNode>(dir, LTM_NODES_FILE)?;
    let mut ltm = LtmGraph::new(node_header.dimension);
    for (i, node) in nodes.into_iter().enumerate() {
        ltm.insert_node(node)
            .map_err(|e| corrupt(LTM_NODES_FILE, i + 2, e))?;
    }
    ltm.restore_seq(node_header.next_seq);

    let (_, edges) = read_jsonl::<LtmEdge>(dir, LTM_EDGES_FILE)?;
    for (i, edge) in edges.into_iter().enumerate() {
        ltm.add_edge(edge)
            .map_err(|e| corrupt(LTM_EDGES_FILE, i + 2, e))?;
    }

    Ok((mtm, ltm))
}
