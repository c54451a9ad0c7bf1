//! String similarity primitives and the character n-gram features shared by
//! the embedding matcher and attribute clustering.

use std::collections::BTreeMap;

use crate::model::{normalize_name, SourceAttribute, TargetAttribute};

pub const NGRAM: usize = 3;
pub const SAMPLED_VALUES: usize = 20;

/// `1 - lev(a, b) / max(|a|, |b|)` on already-normalized strings.
pub fn levenshtein_similarity(a: &str, b: &str) -> f64 {
    if a == b {
        return 1.0;
    }
    let longest = a.chars().count().max(b.chars().count());
    1.0 - strsim::levenshtein(a, b) as f64 / longest as f64
}

/// Best similarity of the shorter string against any equal-length window of
/// the longer one, in the spirit of RapidFuzz's `partial_ratio`.
pub fn partial_similarity(a: &str, b: &str) -> f64 {
    let (short, long): (Vec<char>, Vec<char>) = if a.chars().count() <= b.chars().count() {
        (a.chars().collect(), b.chars().collect())
    } else {
        (b.chars().collect(), a.chars().collect())
    };
    if short.is_empty() {
        return if long.is_empty() { 1.0 } else { 0.0 };
    }
    let short_str: String = short.iter().collect();
    let mut best = 0.0f64;
    for window in long.windows(short.len()) {
        let w: String = window.iter().collect();
        best = best.max(levenshtein_similarity(&short_str, &w));
        if best == 1.0 {
            break;
        }
    }
    best
}

/// Similarity between two cell values used for value mapping: the better of
/// whole-string similarity and a discounted substring alignment, so
/// `IA` lines up with `Stage IA`.
pub fn value_similarity(a: &str, b: &str) -> f64 {
    let (a, b) = (normalize_name(a), normalize_name(b));
    let whole = levenshtein_similarity(&a, &b);
    if whole == 1.0 {
        return 1.0;
    }
    whole.max(0.9 * partial_similarity(&a, &b))
}

/// Padded character n-grams of one text piece.
pub fn char_ngrams(piece: &str, n: usize) -> Vec<String> {
    if piece.is_empty() {
        return Vec::new();
    }
    let padded: Vec<char> = std::iter::once(' ')
        .chain(piece.chars())
        .chain(std::iter::once(' '))
        .collect();
    if padded.len() < n {
        return vec![padded.iter().collect()];
    }
    padded.windows(n).map(|w| w.iter().collect()).collect()
}

/// Up to `n` values, most frequent first.
pub fn sample_source_values(source: &SourceAttribute, n: usize) -> Vec<String> {
    source
        .profile
        .values_by_frequency()
        .into_iter()
        .take(n)
        .map(str::to_string)
        .collect()
}

pub fn sample_target_values(target: &TargetAttribute, n: usize) -> Vec<String> {
    match &target.profile {
        Some(p) => p
            .values_by_frequency()
            .into_iter()
            .take(n)
            .map(str::to_string)
            .collect(),
        None => target.values().iter().take(n).cloned().collect(),
    }
}

/// Text pieces describing an attribute: its normalized name, description
/// words, and sampled normalized values.
pub fn attribute_pieces(name: &str, description: &str, values: &[String]) -> Vec<String> {
    let mut pieces = Vec::new();
    let name = normalize_name(name);
    if !name.is_empty() {
        pieces.push(name);
    }
    pieces.extend(
        normalize_name(description)
            .split('_')
            .filter(|w| !w.is_empty())
            .map(str::to_string),
    );
    pieces.extend(
        values
            .iter()
            .map(|v| normalize_name(v))
            .filter(|v| !v.is_empty()),
    );
    pieces
}

pub fn source_pieces(source: &SourceAttribute) -> Vec<String> {
    attribute_pieces(&source.name, "", &sample_source_values(source, SAMPLED_VALUES))
}

pub fn target_pieces(target: &TargetAttribute) -> Vec<String> {
    attribute_pieces(
        &target.name,
        &target.description,
        &sample_target_values(target, SAMPLED_VALUES),
    )
}

/// Term-frequency map of the padded n-grams of all pieces.
pub fn ngram_counts(pieces: &[String], n: usize) -> BTreeMap<String, f64> {
    let mut counts = BTreeMap::new();
    for piece in pieces {
        for gram in char_ngrams(piece, n) {
            *counts.entry(gram).or_insert(0.0) += 1.0;
        }
    }
    counts
}

/// Cosine of two sparse vectors. Two empty vectors are treated as identical.
pub fn sparse_cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let dot: f64 = a
        .iter()
        .filter_map(|(k, x)| b.get(k).map(|y| x * y))
        .sum();
    let na: f64 = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// 64-bit FNV-1a, stable across platforms and runs.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}
