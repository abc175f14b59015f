//! Answer-quality metrics and latency percentiles.
//!
//! All scoring here is pure text arithmetic over whitespace tokens, so
//! report numbers are reproducible on any machine. Embedding similarity is
//! the one exception and it only depends on the deterministic embedder.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::embedding::{cosine, embed, EmbeddingConfig};
use crate::error::{Error, Result};

/// One scored prediction/reference pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub f1: f64,
    pub bleu1: f64,
    pub rouge_l: f64,
    pub embed_sim: f64,
}

impl MetricSet {
    pub fn zero() -> Self {
        Self {
            f1: 0.0,
            bleu1: 0.0,
            rouge_l: 0.0,
            embed_sim: 0.0,
        }
    }
}

fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

fn counts(tokens: &[String]) -> BTreeMap<&str, usize> {
    let mut map = BTreeMap::new();
    for t in tokens {
        *map.entry(t.as_str()).or_insert(0) += 1;
    }
    map
}

/// Multiset intersection size, the shared numerator of precision and recall.
fn overlap(pred: &[String], reference: &[String]) -> usize {
    let p = counts(pred);
    let r = counts(reference);
    p.iter()
        .map(|(t, c)| c.min(r.get(t).unwrap_or(&0)))
        .sum()
}

/// Harmonic mean of token precision and recall; 0 when either side is empty
/// or nothing overlaps.
pub fn token_f1(pred: &str, reference: &str) -> f64 {
    let p = tokens(pred);
    let r = tokens(reference);
    if p.is_empty() || r.is_empty() {
        return 0.0;
    }
    let shared = overlap(&p, &r) as f64;
    if shared == 0.0 {
        return 0.0;
    }
    let precision = shared / p.len() as f64;
    let recall = shared / r.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Clipped unigram precision times the brevity penalty
/// exp(min(0, 1 - r/c)).
pub fn bleu1(pred: &str, reference: &str) -> f64 {
    let p = tokens(pred);
    let r = tokens(reference);
    if p.is_empty() || r.is_empty() {
        return 0.0;
    }
    let clipped = overlap(&p, &r) as f64 / p.len() as f64;
    let brevity = (1.0 - r.len() as f64 / p.len() as f64).min(0.0).exp();
    clipped * brevity
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure with precision and recall weighted equally.
pub fn rouge_l(pred: &str, reference: &str) -> f64 {
    let p = tokens(pred);
    let r = tokens(reference);
    if p.is_empty() || r.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&p, &r) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let precision = lcs / p.len() as f64;
    let recall = lcs / r.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Scores one answer against its reference. Overlap metrics are 0 for empty
/// input; embedding similarity falls back to 0 when a side cannot be
/// embedded rather than failing the report.
pub fn score_answer(pred: &str, reference: &str, embedding: &EmbeddingConfig) -> MetricSet {
    if tokens(pred).is_empty() || tokens(reference).is_empty() {
        return MetricSet::zero();
    }
    let embed_sim = match (embed(pred, embedding), embed(reference, embedding)) {
        (Ok(a), Ok(b)) => cosine(&a, &b).unwrap_or(0.0),
        _ => 0.0,
    };
    MetricSet {
        f1: token_f1(pred, reference),
        bleu1: bleu1(pred, reference),
        rouge_l: rouge_l(pred, reference),
        embed_sim,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyPercentiles {
    pub p50: f64,
    pub p95: f64,
}

/// Nearest-rank index (1-based) into an ascending sort of n samples.
/// q*n sits within float noise of an integer exactly when it is one, so the
/// snap below cannot misfire at realistic sample counts.
fn nearest_rank_index(q: f64, n: usize) -> usize {
    let raw = q * n as f64;
    let rounded = raw.round();
    let idx = if (raw - rounded).abs() < 1e-9 {
        rounded
    } else {
        raw.ceil()
    };
    (idx as usize).clamp(1, n)
}

/// Value at the q-quantile of `sorted` (ascending), nearest-rank method.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    sorted[nearest_rank_index(q, sorted.len()) - 1]
}

/// P50/P95 of a latency sample set.
pub fn latency_percentiles(samples: &[f64]) -> Result<LatencyPercentiles> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(LatencyPercentiles {
        p50: nearest_rank(&sorted, 0.50),
        p95: nearest_rank(&sorted, 0.95),
    })
}
