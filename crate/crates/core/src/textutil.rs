//! Small text helpers shared by the rule-table backends.
//!
//! These are for marker matching and lexical overlap only. Scoring metrics
//! deliberately do not use them; their tokenization contract is stricter.

/// Lowercased tokens with punctuation trimmed from both ends and a cheap
/// plural/verb stem: a trailing 's' is dropped from tokens longer than 3
/// characters ("prefers" and "prefer" should collide).
pub fn content_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let trimmed: String = raw
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase();
            if trimmed.is_empty() {
                return None;
            }
            Some(stem(&trimmed))
        })
        .collect()
}

fn stem(token: &str) -> String {
    if token.len() > 3 {
        if let Some(body) = token.strip_suffix('s') {
            return body.to_string();
        }
    }
    token.to_string()
}

/// Whether `marker` occurs in `text` on word boundaries. Markers may span
/// several words ("last time"). Matching is stem-insensitive on both sides.
pub fn contains_marker(text: &str, marker: &str) -> bool {
    let tokens = content_tokens(text);
    let marker_tokens = content_tokens(marker);
    if marker_tokens.is_empty() || tokens.len() < marker_tokens.len() {
        return false;
    }
    tokens
        .windows(marker_tokens.len())
        .any(|w| w == marker_tokens.as_slice())
}

/// Count of distinct stemmed tokens shared by the two texts.
pub fn overlap_count(a: &str, b: &str) -> usize {
    let left: std::collections::BTreeSet<String> = content_tokens(a).into_iter().collect();
    let right: std::collections::BTreeSet<String> = content_tokens(b).into_iter().collect();
    left.intersection(&right).count()
}

/// First `max_tokens` whitespace tokens of `text`, rejoined with single
/// spaces.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> String {
    text.split_whitespace()
        .take(max_tokens)
        .collect::<Vec<_>>()
        .join(" ")
}
