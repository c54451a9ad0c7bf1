//! Matcher abstraction, the four built-in matchers, subprocess plugins, and
//! easy-match detection.

use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{normalize_name, SourceAttribute, SourceDataset, TargetAttribute, TargetSchema};
use crate::par::{self, Execution};
use crate::text;

pub const NAME_FUZZY: &str = "name_fuzzy";
pub const TOKEN_JACCARD: &str = "token_jaccard";
pub const VALUE_JACCARD: &str = "value_jaccard";
pub const NGRAM_EMBEDDING: &str = "ngram_embedding";

/// Source values considered per attribute when computing value similarity.
pub const EASY_MATCH_VALUE_SAMPLE: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatcherError {
    #[error("matcher id `{0}` is already registered")]
    DuplicateMatcherId(String),
    #[error("unknown matcher `{0}`")]
    UnknownMatcher(String),
    #[error("plugin `{id}` failed: {reason}")]
    PluginFailed { id: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatcherKind {
    Builtin,
    Plugin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatcherDescriptor {
    pub id: String,
    pub display_name: String,
    pub kind: MatcherKind,
}

impl MatcherDescriptor {
    pub fn builtin(id: &str, display_name: &str) -> Self {
        Self {
            id: id.to_string(),
            display_name: display_name.to_string(),
            kind: MatcherKind::Builtin,
        }
    }

    pub fn plugin(id: &str, display_name: &str) -> Self {
        Self {
            id: id.to_string(),
            display_name: display_name.to_string(),
            kind: MatcherKind::Plugin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchScore {
    pub matcher_id: String,
    pub score: f64,
}

/// Raised when a matcher produced a score outside `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreWarning {
    pub matcher_id: String,
    pub source: String,
    pub target: String,
    pub raw: String,
    pub clamped_to: f64,
}

pub fn clamp_score(raw: f64) -> (f64, bool) {
    if raw.is_nan() {
        (0.0, true)
    } else if !(0.0..=1.0).contains(&raw) {
        (raw.clamp(0.0, 1.0), true)
    } else {
        (raw, false)
    }
}

/// A similarity function between a source and a target attribute.
pub trait Scorer: Send + Sync {
    fn score(&self, source: &SourceAttribute, target: &TargetAttribute) -> Result<f64, MatcherError>;

    /// Scores one source against every target. Plugins override this to
    /// batch work into a single invocation.
    fn score_targets(
        &self,
        source: &SourceAttribute,
        targets: &[TargetAttribute],
    ) -> Result<Vec<f64>, MatcherError> {
        targets.iter().map(|t| self.score(source, t)).collect()
    }

    /// Scores every source against every target, indexed `[source][target]`.
    /// Matchers with per-attribute features override this to build them once.
    fn score_all(
        &self,
        sources: &[SourceAttribute],
        targets: &[TargetAttribute],
        exec: Execution,
    ) -> Result<Vec<Vec<f64>>, MatcherError> {
        par::map_with(exec, sources, |s| self.score_targets(s, targets))
            .into_iter()
            .collect()
    }
}

impl<F> Scorer for F
where
    F: Fn(&SourceAttribute, &TargetAttribute) -> f64 + Send + Sync,
{
    fn score(&self, source: &SourceAttribute, target: &TargetAttribute) -> Result<f64, MatcherError> {
        Ok(self(source, target))
    }
}

/// Normalized Levenshtein similarity of normalized names.
pub fn name_fuzzy_score(a: &str, b: &str) -> f64 {
    text::levenshtein_similarity(&normalize_name(a), &normalize_name(b))
}

fn tokens(name: &str) -> BTreeSet<String> {
    normalize_name(name)
        .split('_')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

pub fn token_jaccard_score(a: &str, b: &str) -> f64 {
    jaccard(&tokens(a), &tokens(b))
}

fn normalized_value_set<S: AsRef<str>>(values: &[S]) -> BTreeSet<String> {
    values
        .iter()
        .map(|v| normalize_name(v.as_ref()))
        .filter(|v| !v.is_empty())
        .collect()
}

/// Jaccard similarity of normalized unique values; 0 when either side is empty.
pub fn value_jaccard_score<S: AsRef<str>, T: AsRef<str>>(source: &[S], target: &[T]) -> f64 {
    let (a, b) = (normalized_value_set(source), normalized_value_set(target));
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    jaccard(&a, &b)
}

/// Cosine of character-trigram count vectors, rescaled from `[-1, 1]` to `[0, 1]`.
pub fn ngram_embedding_score(source: &SourceAttribute, target: &TargetAttribute) -> f64 {
    let a = text::ngram_counts(&text::source_pieces(source), text::NGRAM);
    let b = text::ngram_counts(&text::target_pieces(target), text::NGRAM);
    (text::sparse_cosine(&a, &b) + 1.0) / 2.0
}

pub struct NameFuzzy;
pub struct TokenJaccard;
pub struct ValueJaccard;
pub struct NgramEmbedding;

impl Scorer for NameFuzzy {
    fn score(&self, s: &SourceAttribute, t: &TargetAttribute) -> Result<f64, MatcherError> {
        Ok(name_fuzzy_score(&s.name, &t.name))
    }
}

impl Scorer for TokenJaccard {
    fn score(&self, s: &SourceAttribute, t: &TargetAttribute) -> Result<f64, MatcherError> {
        Ok(token_jaccard_score(&s.name, &t.name))
    }
}

impl Scorer for ValueJaccard {
    fn score(&self, s: &SourceAttribute, t: &TargetAttribute) -> Result<f64, MatcherError> {
        Ok(value_jaccard_score(&s.profile.unique_values, t.values()))
    }

    fn score_all(
        &self,
        sources: &[SourceAttribute],
        targets: &[TargetAttribute],
        exec: Execution,
    ) -> Result<Vec<Vec<f64>>, MatcherError> {
        let t_sets = par::map_with(exec, targets, |t| normalized_value_set(t.values()));
        Ok(par::map_with(exec, sources, |s| {
            let a = normalized_value_set(&s.profile.unique_values);
            t_sets
                .iter()
                .map(|b| if a.is_empty() || b.is_empty() { 0.0 } else { jaccard(&a, b) })
                .collect()
        }))
    }
}

/// Trigram counts with grams interned in lexicographic order, so merged dot
/// products sum in the same order as [`text::sparse_cosine`].
struct InternedCounts {
    entries: Vec<(u32, f64)>,
    norm: f64,
}

fn intern_all(maps: Vec<std::collections::BTreeMap<String, f64>>) -> Vec<InternedCounts> {
    let vocab: BTreeSet<&str> = maps.iter().flat_map(|m| m.keys().map(String::as_str)).collect();
    let ids: std::collections::HashMap<&str, u32> = vocab.into_iter().enumerate().map(|(i, g)| (g, i as u32)).collect();
    maps.iter()
        .map(|m| InternedCounts {
            entries: m.iter().map(|(g, c)| (ids[g.as_str()], *c)).collect(),
            norm: m.values().map(|x| x * x).sum::<f64>().sqrt(),
        })
        .collect()
}

fn interned_cosine(a: &InternedCounts, b: &InternedCounts) -> f64 {
    if a.entries.is_empty() && b.entries.is_empty() {
        return 1.0;
    }
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    while i < a.entries.len() && j < b.entries.len() {
        match a.entries[i].0.cmp(&b.entries[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a.entries[i].1 * b.entries[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    if a.norm == 0.0 || b.norm == 0.0 {
        return 0.0;
    }
    (dot / (a.norm * b.norm)).clamp(-1.0, 1.0)
}

impl Scorer for NgramEmbedding {
    fn score(&self, s: &SourceAttribute, t: &TargetAttribute) -> Result<f64, MatcherError> {
        Ok(ngram_embedding_score(s, t))
    }

    fn score_all(
        &self,
        sources: &[SourceAttribute],
        targets: &[TargetAttribute],
        exec: Execution,
    ) -> Result<Vec<Vec<f64>>, MatcherError> {
        let mut maps = par::map_with(exec, sources, |s| text::ngram_counts(&text::source_pieces(s), text::NGRAM));
        maps.extend(par::map_with(exec, targets, |t| {
            text::ngram_counts(&text::target_pieces(t), text::NGRAM)
        }));
        let interned = intern_all(maps);
        let (src, tgt) = interned.split_at(sources.len());
        Ok(par::map_with(exec, src, |a| {
            tgt.iter().map(|b| (interned_cosine(a, b) + 1.0) / 2.0).collect()
        }))
    }
}

/// A plugin run as an external process. Each call writes one JSON line per
/// (source, target) pair to stdin and expects one real score per line on stdout.
#[derive(Debug, Clone)]
pub struct SubprocessScorer {
    pub id: String,
    pub command: Vec<String>,
}

#[derive(Serialize)]
struct PluginSourceRecord<'a> {
    name: &'a str,
    inferred_type: crate::model::ValueType,
    values: Vec<&'a str>,
}

#[derive(Serialize)]
struct PluginTargetRecord<'a> {
    name: &'a str,
    supercategory: &'a str,
    category: &'a str,
    description: &'a str,
    value_type: crate::model::ValueType,
    values: &'a [String],
}

#[derive(Serialize)]
struct PluginPair<'a> {
    source: &'a PluginSourceRecord<'a>,
    target: PluginTargetRecord<'a>,
}

impl SubprocessScorer {
    pub fn new(id: impl Into<String>, command: Vec<String>) -> Self {
        Self {
            id: id.into(),
            command,
        }
    }

    fn failed(&self, reason: impl Into<String>) -> MatcherError {
        MatcherError::PluginFailed {
            id: self.id.clone(),
            reason: reason.into(),
        }
    }

    fn request_lines(source: &SourceAttribute, targets: &[TargetAttribute]) -> String {
        let src = PluginSourceRecord {
            name: &source.name,
            inferred_type: source.profile.inferred_type,
            values: source
                .profile
                .unique_values
                .iter()
                .take(EASY_MATCH_VALUE_SAMPLE)
                .map(String::as_str)
                .collect(),
        };
        let mut out = String::new();
        for t in targets {
            let pair = PluginPair {
                source: &src,
                target: PluginTargetRecord {
                    name: &t.name,
                    supercategory: &t.supercategory,
                    category: &t.category,
                    description: &t.description,
                    value_type: t.value_type,
                    values: t.values(),
                },
            };
            out.push_str(&serde_json::to_string(&pair).expect("plain records serialize"));
            out.push('\n');
        }
        out
    }
}

impl Scorer for SubprocessScorer {
    fn score(&self, source: &SourceAttribute, target: &TargetAttribute) -> Result<f64, MatcherError> {
        self.score_targets(source, std::slice::from_ref(target))
            .map(|v| v[0])
    }

    fn score_targets(
        &self,
        source: &SourceAttribute,
        targets: &[TargetAttribute],
    ) -> Result<Vec<f64>, MatcherError> {
        let (program, args) = self
            .command
            .split_first()
            .ok_or_else(|| self.failed("empty command"))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| self.failed(format!("spawn: {e}")))?;

        let input = Self::request_lines(source, targets);
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || {
            // The plugin may exit early; a broken pipe surfaces as a bad exit or short output.
            let _ = stdin.write_all(input.as_bytes());
        });

        let stdout = child.stdout.take().expect("piped stdout");
        let mut scores = Vec::with_capacity(targets.len());
        for line in BufReader::new(stdout).lines() {
            let line = line.map_err(|e| self.failed(format!("read: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let value: f64 = line
                .trim()
                .parse()
                .map_err(|_| self.failed(format!("unparsable score line `{line}`")))?;
            scores.push(value);
        }
        let _ = writer.join();
        let status = child.wait().map_err(|e| self.failed(format!("wait: {e}")))?;
        if !status.success() {
            return Err(self.failed(format!("exit status {status}")));
        }
        if scores.len() != targets.len() {
            return Err(self.failed(format!(
                "expected {} scores, got {}",
                targets.len(),
                scores.len()
            )));
        }
        Ok(scores)
    }
}

#[derive(Clone)]
pub struct RegisteredMatcher {
    pub descriptor: MatcherDescriptor,
    pub scorer: Arc<dyn Scorer>,
}

impl std::fmt::Debug for RegisteredMatcher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegisteredMatcher")
            .field("descriptor", &self.descriptor)
            .finish_non_exhaustive()
    }
}

/// Ordered set of matchers taking part in the ensemble.
#[derive(Debug, Clone, Default)]
pub struct MatcherRegistry {
    matchers: Vec<RegisteredMatcher>,
}

impl MatcherRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        let mut reg = Self::default();
        let builtins: [(&str, &str, Arc<dyn Scorer>); 4] = [
            (NAME_FUZZY, "Name fuzzy (Levenshtein)", Arc::new(NameFuzzy)),
            (TOKEN_JACCARD, "Name token Jaccard", Arc::new(TokenJaccard)),
            (VALUE_JACCARD, "Value Jaccard", Arc::new(ValueJaccard)),
            (NGRAM_EMBEDDING, "Character n-gram embedding", Arc::new(NgramEmbedding)),
        ];
        for (id, name, scorer) in builtins {
            reg.matchers.push(RegisteredMatcher {
                descriptor: MatcherDescriptor::builtin(id, name),
                scorer,
            });
        }
        reg
    }

    pub fn register(
        &mut self,
        descriptor: MatcherDescriptor,
        scorer: Arc<dyn Scorer>,
    ) -> Result<(), MatcherError> {
        if self.contains(&descriptor.id) {
            return Err(MatcherError::DuplicateMatcherId(descriptor.id));
        }
        self.matchers.push(RegisteredMatcher { descriptor, scorer });
        Ok(())
    }

    pub fn remove(&mut self, id: &str) -> Option<RegisteredMatcher> {
        let idx = self.matchers.iter().position(|m| m.descriptor.id == id)?;
        Some(self.matchers.remove(idx))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.matchers.iter().any(|m| m.descriptor.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.matchers.iter().map(|m| m.descriptor.id.clone()).collect()
    }

    pub fn descriptors(&self) -> Vec<MatcherDescriptor> {
        self.matchers.iter().map(|m| m.descriptor.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&RegisteredMatcher> {
        self.matchers.iter().find(|m| m.descriptor.id == id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &RegisteredMatcher> {
        self.matchers.iter()
    }

    pub fn len(&self) -> usize {
        self.matchers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matchers.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EasyMatch {
    pub source: String,
    pub target: String,
    pub name_score: f64,
    pub value_score: f64,
}

fn sampled_normalized_values(values: &[String], cap: usize) -> Vec<String> {
    let set: BTreeSet<String> = values
        .iter()
        .map(|v| normalize_name(v))
        .filter(|v| !v.is_empty())
        .collect();
    set.into_iter().take(cap).collect()
}

/// `V = mean over s of max over t of f(s, t)`, with `f` the normalized Levenshtein
/// similarity. Zero when either side has no values.
pub fn aggregate_value_similarity(source_values: &[String], target_values: &[String]) -> f64 {
    let s = sampled_normalized_values(source_values, EASY_MATCH_VALUE_SAMPLE);
    let t: Vec<String> = normalized_value_set(target_values).into_iter().collect();
    mean_best_similarity(&s, &t)
}

fn mean_best_similarity(s: &[String], t: &[String]) -> f64 {
    if s.is_empty() || t.is_empty() {
        return 0.0;
    }
    let exact: HashSet<&str> = t.iter().map(String::as_str).collect();
    let total: f64 = s
        .iter()
        .map(|sv| {
            if exact.contains(sv.as_str()) {
                1.0
            } else {
                t.iter()
                    .map(|tv| text::levenshtein_similarity(sv, tv))
                    .fold(0.0, f64::max)
            }
        })
        .sum();
    total / s.len() as f64
}

/// Every (source, target) pair whose name similarity exceeds `name_threshold`
/// and whose aggregate value similarity exceeds `value_threshold`.
/// Sorted by source name, then target name.
pub fn detect_easy_matches(
    source: &SourceDataset,
    target: &TargetSchema,
    name_threshold: f64,
    value_threshold: f64,
) -> Vec<EasyMatch> {
    let targets: Vec<(String, Vec<String>)> = target
        .attributes
        .iter()
        .map(|t| (t.normalized_name(), normalized_value_set(t.values()).into_iter().collect()))
        .collect();

    let per_source = par::map(&source.attributes, |s| {
        let s_name = s.normalized_name();
        let s_values = sampled_normalized_values(&s.profile.unique_values, EASY_MATCH_VALUE_SAMPLE);
        let mut found = Vec::new();
        for (t, (t_name, t_values)) in target.attributes.iter().zip(&targets) {
            let name_score = text::levenshtein_similarity(&s_name, t_name);
            if name_score <= name_threshold {
                continue;
            }
            let value_score = mean_best_similarity(&s_values, t_values);
            if value_score > value_threshold {
                found.push(EasyMatch {
                    source: s.name.clone(),
                    target: t.name.clone(),
                    name_score,
                    value_score,
                });
            }
        }
        found
    });

    let mut all: Vec<EasyMatch> = per_source.into_iter().flatten().collect();
    all.sort_by(|a, b| (&a.source, &a.target).cmp(&(&b.source, &b.target)));
    all
}
