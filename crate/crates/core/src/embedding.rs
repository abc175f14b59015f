//! Text embeddings and cosine similarity.
//!
//! The default backend hashes character trigrams into a fixed-dimension
//! signed bag and L2-normalizes. It is a pure function of the text, so every
//! seeded test and golden fixture in the workspace reproduces bit-for-bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DIMENSION: usize = 384;

/// Fixed seed folded into the trigram hash; part of the embedding contract.
const HASH_SEED: u64 = 0x4c49_4748_544d_454d;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EmbeddingBackend {
    DeterministicMock,
    HttpEndpoint { url: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub dimension: usize,
    pub backend: EmbeddingBackend,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
            backend: EmbeddingBackend::DeterministicMock,
        }
    }
}

impl EmbeddingConfig {
    pub fn mock(dimension: usize) -> Self {
        Self {
            dimension,
            backend: EmbeddingBackend::DeterministicMock,
        }
    }
}

/// Embeds non-empty text into a unit vector of `config.dimension`.
pub fn embed(text: &str, config: &EmbeddingConfig) -> Result<Vec<f32>> {
    if text.is_empty() {
        return Err(Error::EmptyText);
    }
    if config.dimension == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    match &config.backend {
        EmbeddingBackend::DeterministicMock => Ok(mock_embed(text, config.dimension)),
        EmbeddingBackend::HttpEndpoint { url } => http_embed(text, config.dimension, url),
    }
}

fn mock_embed(text: &str, dim: usize) -> Vec<f32> {
    // Lowercase and collapse whitespace so trivial formatting differences
    // do not move the vector.
    let mut normalized: Vec<char> = Vec::with_capacity(text.len() + 2);
    normalized.push('\u{2}');
    let mut last_was_space = false;
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !last_was_space {
                normalized.push(' ');
                last_was_space = true;
            }
        } else {
            for low in ch.to_lowercase() {
                normalized.push(low);
            }
            last_was_space = false;
        }
    }
    normalized.push('\u{3}');

    let mut acc = vec![0.0f64; dim];
    let mut buf = [0u8; 4];
    for gram in normalized.windows(3) {
        let mut h = HASH_SEED ^ 0xcbf2_9ce4_8422_2325;
        for &ch in gram {
            for byte in ch.encode_utf8(&mut buf).as_bytes() {
                h ^= u64::from(*byte);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        let bucket = (h % dim as u64) as usize;
        let sign = if h >> 63 == 1 { 1.0 } else { -1.0 };
        acc[bucket] += sign;
    }

    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        acc[0] = 1.0;
        return acc.iter().map(|v| *v as f32).collect();
    }
    acc.iter().map(|v| (*v / norm) as f32).collect()
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: [&'a str; 1],
    dimension: usize,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f32>>,
}

fn http_embed(text: &str, dim: usize, url: &str) -> Result<Vec<f32>> {
    let client = reqwest::blocking::Client::new();
    let response = client
        .post(url)
        .json(&EmbedRequest {
            texts: [text],
            dimension: dim,
        })
        .send()
        .map_err(|e| Error::Endpoint {
            attempts: 1,
            detail: e.to_string(),
        })?;
    let status = response.status();
    if !status.is_success() {
        return Err(Error::Endpoint {
            attempts: 1,
            detail: format!("embedding endpoint returned status {status}"),
        });
    }
    let body: EmbedResponse = response.json().map_err(|e| Error::Endpoint {
        attempts: 1,
        detail: format!("embedding endpoint returned invalid body: {e}"),
    })?;
    let vector = body.embeddings.into_iter().next().ok_or(Error::Endpoint {
        attempts: 1,
        detail: "embedding endpoint returned no vectors".into(),
    })?;
    if vector.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: vector.len(),
        });
    }
    Ok(vector)
}

/// Cosine similarity in f64. Rejects mismatched dimensions and zero vectors
/// rather than guessing a value.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embed_is_deterministic() {
        let cfg = EmbeddingConfig::default();
        let a = embed("hello world", &cfg).unwrap();
        let b = embed("hello world", &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 384);
    }

    // Norm oracle: recompute the L2 norm from scratch in f64.
    #[test]
    fn embed_output_is_unit_norm() {
        let cfg = EmbeddingConfig::mock(64);
        for text in ["a", "hello", "the quick brown fox", "züricher straße 12"] {
            let v = embed(text, &cfg).unwrap();
            let norm: f64 = v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "norm {norm} for {text:?}");
        }
    }

    #[test]
    fn embed_rejects_empty_text() {
        let err = embed("", &EmbeddingConfig::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyText));
    }

    #[test]
    fn embed_distinguishes_texts() {
        let cfg = EmbeddingConfig::mock(128);
        let a = embed("alpha", &cfg).unwrap();
        let b = embed("omega", &cfg).unwrap();
        assert!(cosine(&a, &b).unwrap() < 0.99);
    }

    #[test]
    fn near_spellings_stay_close() {
        let cfg = EmbeddingConfig::mock(128);
        let a = embed("casey prefers the color teal", &cfg).unwrap();
        let b = embed("casey prefers the color mauve", &cfg).unwrap();
        let c = embed("completely unrelated gardening schedule", &cfg).unwrap();
        assert!(cosine(&a, &b).unwrap() > cosine(&a, &c).unwrap());
    }

    #[test]
    fn whitespace_runs_do_not_move_the_vector() {
        let cfg = EmbeddingConfig::mock(64);
        let a = embed("hello   world", &cfg).unwrap();
        let b = embed("hello world", &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cosine_self_is_one() {
        let cfg = EmbeddingConfig::mock(96);
        let v = embed("self similarity", &cfg).unwrap();
        let sim = cosine(&v, &v).unwrap();
        assert!((sim - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cosine_rejects_mismatch_and_zero() {
        assert!(matches!(
            cosine(&[1.0, 0.0], &[1.0]).unwrap_err(),
            Error::DimensionMismatch { .. }
        ));
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]).unwrap_err(),
            Error::ZeroNorm
        ));
    }

    // Brute-force oracle: dot product and norms written out longhand.
    // Components are dyadic fractions, exact in both f32 and f64, so the
    // decimal literals below carry no representation error.
    #[test]
    fn cosine_matches_longhand_computation() {
        let a = [0.5f32, -0.25, 0.75, 0.0];
        let b = [0.125f32, 0.5, -0.375, 0.25];
        let dot: f64 = (0.5 * 0.125) + (-0.25 * 0.5) + (0.75 * -0.375) + 0.0;
        let na: f64 = (0.25f64 + 0.0625 + 0.5625).sqrt();
        let nb: f64 = (0.015625f64 + 0.25 + 0.140625 + 0.0625).sqrt();
        let expected = dot / (na * nb);
        let got = cosine(&a, &b).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }
}
