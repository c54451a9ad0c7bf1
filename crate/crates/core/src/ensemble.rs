//! Weighted matcher ensemble: score matrices, ranked candidate lists, online
//! weight updates, and precision@k evaluation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matchers::{clamp_score, EasyMatch, MatchScore, MatcherError, MatcherRegistry, ScoreWarning};
use crate::model::{normalize_name, SourceDataset, TargetSchema};
use crate::par::{self, Execution};

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_BETA: f64 = 0.1;
pub const DEFAULT_W_MIN: f64 = 0.0;
pub const DEFAULT_W_MAX: f64 = 2.0;
pub const DEFAULT_INITIAL_WEIGHT: f64 = 1.0;
pub const DEFAULT_K: usize = 10;

/// Ensemble scores are snapped to this grid so rankings do not depend on
/// last-bit rounding of the weighted mean.
const SCORE_GRID: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("no matchers registered")]
    NoMatchersRegistered,
    #[error("invalid weight: {0}")]
    InvalidWeight(String),
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("ground truth parse error: {0}")]
    GroundTruthParse(String),
    #[error(transparent)]
    Matcher(#[from] MatcherError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    Suggested,
    Accepted,
    Rejected,
    EasyAccepted,
    Shadowed,
}

impl CandidateStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CandidateStatus::Suggested => "suggested",
            CandidateStatus::Accepted => "accepted",
            CandidateStatus::Rejected => "rejected",
            CandidateStatus::EasyAccepted => "easy_accepted",
            CandidateStatus::Shadowed => "shadowed",
        }
    }

    pub fn parse(raw: &str) -> Option<Self> {
        Some(match raw {
            "suggested" => CandidateStatus::Suggested,
            "accepted" => CandidateStatus::Accepted,
            "rejected" => CandidateStatus::Rejected,
            "easy_accepted" => CandidateStatus::EasyAccepted,
            "shadowed" => CandidateStatus::Shadowed,
            _ => return None,
        })
    }

    pub fn is_match(self) -> bool {
        matches!(self, CandidateStatus::Accepted | CandidateStatus::EasyAccepted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub source: String,
    pub target: String,
    pub per_matcher: Vec<MatchScore>,
    pub ensemble_score: f64,
    pub rank: usize,
    pub status: CandidateStatus,
    /// Detected by the easy-match heuristic (score pinned to 1).
    pub easy: bool,
    /// Matchers whose own top-k list for this source contains the target.
    pub supported_by: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateList {
    pub source: String,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherWeights {
    pub weights: BTreeMap<String, f64>,
    pub alpha: f64,
    pub beta: f64,
    pub w_min: f64,
    pub w_max: f64,
}

impl MatcherWeights {
    pub fn equal<I: IntoIterator<Item = String>>(ids: I) -> Self {
        Self {
            weights: ids.into_iter().map(|id| (id, DEFAULT_INITIAL_WEIGHT)).collect(),
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            w_min: DEFAULT_W_MIN,
            w_max: DEFAULT_W_MAX,
        }
    }

    pub fn with_rates(mut self, alpha: f64, beta: f64, w_min: f64, w_max: f64) -> Self {
        self.alpha = alpha;
        self.beta = beta;
        self.w_min = w_min;
        self.w_max = w_max;
        self
    }

    pub fn get(&self, id: &str) -> f64 {
        self.weights.get(id).copied().unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        if self.weights.is_empty() {
            DEFAULT_INITIAL_WEIGHT
        } else {
            self.weights.values().sum::<f64>() / self.weights.len() as f64
        }
    }

    /// Rank-discounted step `rate * score / rank`.
    pub fn step(rate: f64, score: f64, rank: usize) -> f64 {
        rate * score * (1.0 / rank as f64)
    }

    /// `w <- w + alpha * s / r` for each supporting matcher, clamped to `w_max`.
    pub fn reward(&mut self, supporters: &[String], score: f64, rank: usize) {
        let delta = Self::step(self.alpha, score, rank);
        for id in supporters {
            if let Some(w) = self.weights.get_mut(id) {
                *w = (*w + delta).clamp(self.w_min, self.w_max);
            }
        }
    }

    /// `w <- w - beta * s / r` for each supporting matcher, clamped to `w_min`.
    pub fn penalize(&mut self, supporters: &[String], score: f64, rank: usize) {
        let delta = Self::step(self.beta, score, rank);
        for id in supporters {
            if let Some(w) = self.weights.get_mut(id) {
                *w = (*w - delta).clamp(self.w_min, self.w_max);
            }
        }
    }

    /// Validates and merges manual weight settings.
    pub fn set(&mut self, updates: &BTreeMap<String, f64>) -> Result<(), EnsembleError> {
        let mut next = self.weights.clone();
        for (id, w) in updates {
            if !next.contains_key(id) {
                return Err(EnsembleError::InvalidWeight(format!("unknown matcher `{id}`")));
            }
            if !w.is_finite() || *w < self.w_min || *w > self.w_max {
                return Err(EnsembleError::InvalidWeight(format!(
                    "{id} = {w} outside [{}, {}]",
                    self.w_min, self.w_max
                )));
            }
            next.insert(id.clone(), *w);
        }
        if !next.values().any(|w| *w > 0.0) {
            return Err(EnsembleError::InvalidWeight("at least one weight must be positive".into()));
        }
        self.weights = next;
        Ok(())
    }

    /// Weighted mean `sum(w s) / sum(w)`, falling back to the plain mean when
    /// every participating weight is zero. The result is clamped into the
    /// range of the inputs.
    pub fn combine(&self, scores: &[(&str, f64)]) -> f64 {
        if scores.is_empty() {
            return 0.0;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (id, s) in scores {
            let w = self.get(id);
            num += w * s;
            den += w;
        }
        let raw = if den > 0.0 {
            num / den
        } else {
            scores.iter().map(|(_, s)| s).sum::<f64>() / scores.len() as f64
        };
        let lo = scores.iter().map(|(_, s)| *s).fold(f64::INFINITY, f64::min);
        let hi = scores.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
        snap(raw).clamp(lo, hi)
    }
}

fn snap(x: f64) -> f64 {
    (x * SCORE_GRID).round() / SCORE_GRID
}

/// Per-matcher scores for every (source, target) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub source_names: Vec<String>,
    pub target_names: Vec<String>,
    matcher_ids: Vec<String>,
    /// `scores[matcher][source][target]`
    scores: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default)]
pub struct ScoringReport {
    pub warnings: Vec<ScoreWarning>,
    pub failures: Vec<MatcherError>,
}

impl ScoreMatrix {
    pub fn compute(
        source: &SourceDataset,
        target: &TargetSchema,
        registry: &MatcherRegistry,
        exec: Execution,
    ) -> (Self, ScoringReport) {
        let mut matrix = ScoreMatrix {
            source_names: source.attributes.iter().map(|a| a.name.clone()).collect(),
            target_names: target.attributes.iter().map(|a| a.name.clone()).collect(),
            matcher_ids: Vec::new(),
            scores: Vec::new(),
        };
        let mut report = ScoringReport::default();
        for m in registry.iter() {
            match Self::score_one(source, target, m, exec) {
                Ok((column, warnings)) => {
                    matrix.matcher_ids.push(m.descriptor.id.clone());
                    matrix.scores.push(column);
                    report.warnings.extend(warnings);
                }
                Err(e) => report.failures.push(e),
            }
        }
        (matrix, report)
    }

    /// Scores a single matcher over all pairs.
    pub fn score_one(
        source: &SourceDataset,
        target: &TargetSchema,
        matcher: &crate::matchers::RegisteredMatcher,
        exec: Execution,
    ) -> Result<(Vec<Vec<f64>>, Vec<ScoreWarning>), MatcherError> {
        let rows = matcher
            .scorer
            .score_all(&source.attributes, &target.attributes, exec)?;
        if rows.len() != source.attributes.len() {
            return Err(MatcherError::PluginFailed {
                id: matcher.descriptor.id.clone(),
                reason: "score row count does not match source count".into(),
            });
        }
        let mut column = Vec::with_capacity(rows.len());
        let mut warnings = Vec::new();
        for (s, row) in source.attributes.iter().zip(rows) {
            if row.len() != target.attributes.len() {
                return Err(MatcherError::PluginFailed {
                    id: matcher.descriptor.id.clone(),
                    reason: "score count does not match target count".into(),
                });
            }
            let mut clamped = Vec::with_capacity(row.len());
            for (t, raw) in target.attributes.iter().zip(row) {
                let (value, out_of_range) = clamp_score(raw);
                if out_of_range {
                    warnings.push(ScoreWarning {
                        matcher_id: matcher.descriptor.id.clone(),
                        source: s.name.clone(),
                        target: t.name.clone(),
                        raw: raw.to_string(),
                        clamped_to: value,
                    });
                }
                clamped.push(value);
            }
            column.push(clamped);
        }
        Ok((column, warnings))
    }

    pub fn add_matcher(&mut self, id: String, column: Vec<Vec<f64>>) {
        self.matcher_ids.push(id);
        self.scores.push(column);
    }

    pub fn remove_matcher(&mut self, id: &str) {
        if let Some(idx) = self.matcher_ids.iter().position(|m| m == id) {
            self.matcher_ids.remove(idx);
            self.scores.remove(idx);
        }
    }

    pub fn matcher_ids(&self) -> &[String] {
        &self.matcher_ids
    }

    pub fn score(&self, matcher: usize, source: usize, target: usize) -> f64 {
        self.scores[matcher][source][target]
    }

    pub fn per_matcher(&self, source: usize, target: usize) -> Vec<MatchScore> {
        self.matcher_ids
            .iter()
            .enumerate()
            .map(|(m, id)| MatchScore {
                matcher_id: id.clone(),
                score: self.scores[m][source][target],
            })
            .collect()
    }

    pub fn ensemble(&self, weights: &MatcherWeights, source: usize, target: usize) -> f64 {
        let scores: Vec<(&str, f64)> = self
            .matcher_ids
            .iter()
            .enumerate()
            .map(|(m, id)| (id.as_str(), self.scores[m][source][target]))
            .collect();
        weights.combine(&scores)
    }

    /// Targets of one matcher's own top-k for `source`, skipping `excluded`.
    pub fn matcher_top_k(
        &self,
        matcher: usize,
        source: usize,
        k: usize,
        excluded: &BTreeSet<usize>,
    ) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.target_names.len())
            .filter(|t| !excluded.contains(t))
            .collect();
        let row = &self.scores[matcher][source];
        order.sort_by(|a, b| {
            row[*b]
                .total_cmp(&row[*a])
                .then_with(|| self.target_names[*a].cmp(&self.target_names[*b]))
        });
        order.truncate(k);
        order
    }
}

/// Easy matches split into auto-accepted singletons and ambiguous pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EasySet {
    pub matches: Vec<EasyMatch>,
    pub auto_accept: bool,
}

impl EasySet {
    pub fn new(matches: Vec<EasyMatch>, auto_accept: bool) -> Self {
        Self { matches, auto_accept }
    }

    pub fn targets_of(&self, source: &str) -> Vec<&str> {
        self.matches
            .iter()
            .filter(|m| m.source == source)
            .map(|m| m.target.as_str())
            .collect()
    }

    pub fn contains(&self, source: &str, target: &str) -> bool {
        self.matches.iter().any(|m| m.source == source && m.target == target)
    }

    /// Auto-accepted pair for `source`: present only when unambiguous.
    pub fn accepted_target(&self, source: &str) -> Option<&str> {
        if !self.auto_accept {
            return None;
        }
        match self.targets_of(source).as_slice() {
            [only] => Some(only),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accepted,
    Rejected,
}

/// Explicit user decisions keyed by (source, target).
pub type Decisions = BTreeMap<(String, String), Decision>;

/// Status of a pair derived from easy matches and explicit decisions.
pub fn derive_status(easy: &EasySet, decisions: &Decisions, source: &str, target: &str) -> CandidateStatus {
    let key = (source.to_string(), target.to_string());
    match decisions.get(&key) {
        Some(Decision::Accepted) => return CandidateStatus::Accepted,
        Some(Decision::Rejected) => return CandidateStatus::Rejected,
        None => {}
    }
    let explicit_accept = decisions
        .range((source.to_string(), String::new())..)
        .take_while(|((s, _), _)| s == source)
        .any(|(_, d)| *d == Decision::Accepted);
    if explicit_accept {
        return CandidateStatus::Shadowed;
    }
    match easy.accepted_target(source) {
        Some(t) if t == target => CandidateStatus::EasyAccepted,
        Some(t) if decisions.get(&(source.to_string(), t.to_string())) != Some(&Decision::Rejected) => {
            CandidateStatus::Shadowed
        }
        _ => CandidateStatus::Suggested,
    }
}

/// One source's complete target ordering.
#[derive(Debug, Clone)]
pub struct SourceRanking {
    /// (target index, ensemble score) in rank order.
    pub order: Vec<(usize, f64)>,
    /// Target indices pinned by the easy-match heuristic.
    pub easy_targets: BTreeSet<usize>,
}

impl SourceRanking {
    pub fn rank_of(&self, target: usize) -> Option<usize> {
        self.order.iter().position(|(t, _)| *t == target).map(|p| p + 1)
    }

    pub fn score_of(&self, target: usize) -> Option<f64> {
        self.order.iter().find(|(t, _)| *t == target).map(|(_, s)| *s)
    }
}

/// Everything needed to rank candidates for a session snapshot.
pub struct RankingContext<'a> {
    pub matrix: &'a ScoreMatrix,
    pub weights: &'a MatcherWeights,
    pub easy: &'a EasySet,
    pub decisions: &'a Decisions,
    pub k: usize,
}

impl RankingContext<'_> {
    pub fn rank_source(&self, source: usize) -> SourceRanking {
        let m = self.matrix;
        let source_name = &m.source_names[source];
        let easy_targets: BTreeSet<usize> = self
            .easy
            .targets_of(source_name)
            .into_iter()
            .filter_map(|t| m.target_names.iter().position(|n| n == t))
            .collect();
        let mut order: Vec<(usize, f64)> = (0..m.target_names.len())
            .map(|t| {
                let score = if easy_targets.contains(&t) {
                    1.0
                } else {
                    m.ensemble(self.weights, source, t)
                };
                (t, score)
            })
            .collect();
        order.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| m.target_names[a.0].cmp(&m.target_names[b.0]))
        });
        SourceRanking { order, easy_targets }
    }

    /// Each matcher's own top-k for `source`, easy targets excluded.
    pub fn matcher_tops(&self, source: usize, ranking: &SourceRanking) -> Vec<Vec<usize>> {
        (0..self.matrix.matcher_ids.len())
            .map(|mi| self.matrix.matcher_top_k(mi, source, self.k, &ranking.easy_targets))
            .collect()
    }

    /// Matchers whose own top-k (easy targets excluded) contains `target`.
    pub fn supporters(&self, source: usize, target: usize, ranking: &SourceRanking) -> Vec<String> {
        supporters_from(self.matrix, &self.matcher_tops(source, ranking), target, ranking)
    }

    /// Top-k by score plus any decided pairs that fell outside it.
    pub fn candidate_list(&self, source: usize) -> CandidateList {
        let ranking = self.rank_source(source);
        let tops = self.matcher_tops(source, &ranking);
        let source_name = &self.matrix.source_names[source];
        let decided: BTreeSet<&str> = self
            .decisions
            .range((source_name.clone(), String::new())..)
            .take_while(|((s, _), _)| s == source_name)
            .map(|((_, t), _)| t.as_str())
            .collect();
        let candidates: Vec<Candidate> = ranking
            .order
            .iter()
            .enumerate()
            .filter(|(pos, (t, _))| *pos < self.k || decided.contains(self.matrix.target_names[*t].as_str()))
            .enumerate()
            .map(|(list_pos, (_, (t, score)))| {
                let target_name = &self.matrix.target_names[*t];
                Candidate {
                    source: source_name.clone(),
                    target: target_name.clone(),
                    per_matcher: self.matrix.per_matcher(source, *t),
                    ensemble_score: *score,
                    rank: list_pos + 1,
                    status: derive_status(self.easy, self.decisions, source_name, target_name),
                    easy: ranking.easy_targets.contains(t),
                    supported_by: supporters_from(self.matrix, &tops, *t, &ranking),
                }
            })
            .collect();
        CandidateList {
            source: source_name.clone(),
            candidates,
        }
    }

    pub fn candidate_lists(&self, exec: Execution) -> Vec<CandidateList> {
        let sources: Vec<usize> = (0..self.matrix.source_names.len()).collect();
        par::map_with(exec, &sources, |s| self.candidate_list(*s))
    }
}

fn supporters_from(matrix: &ScoreMatrix, tops: &[Vec<usize>], target: usize, ranking: &SourceRanking) -> Vec<String> {
    if ranking.easy_targets.contains(&target) {
        return Vec::new();
    }
    matrix
        .matcher_ids
        .iter()
        .zip(tops)
        .filter(|(_, top)| top.contains(&target))
        .map(|(id, _)| id.clone())
        .collect()
}

/// One-shot candidate generation with the given registry and weights.
pub fn generate_candidates(
    source: &SourceDataset,
    target: &TargetSchema,
    registry: &MatcherRegistry,
    weights: &MatcherWeights,
    easy: &EasySet,
    k: usize,
    exec: Execution,
) -> Result<Vec<CandidateList>, EnsembleError> {
    if registry.is_empty() {
        return Err(EnsembleError::NoMatchersRegistered);
    }
    if k == 0 {
        return Err(EnsembleError::InvalidK);
    }
    let (matrix, report) = ScoreMatrix::compute(source, target, registry, exec);
    if matrix.matcher_ids().is_empty() {
        return Err(report
            .failures
            .into_iter()
            .next()
            .map(EnsembleError::Matcher)
            .unwrap_or(EnsembleError::NoMatchersRegistered));
    }
    let decisions = Decisions::new();
    let ctx = RankingContext {
        matrix: &matrix,
        weights,
        easy,
        decisions: &decisions,
        k,
    };
    Ok(ctx.candidate_lists(exec))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub pairs: BTreeSet<(String, String)>,
}

impl GroundTruth {
    pub fn new<I: IntoIterator<Item = (String, String)>>(pairs: I) -> Self {
        Self {
            pairs: pairs.into_iter().collect(),
        }
    }

    /// Two-column delimited text (source, target); a header row is optional.
    pub fn parse(bytes: &[u8]) -> Result<Self, EnsembleError> {
        let text = std::str::from_utf8(bytes).map_err(|e| EnsembleError::GroundTruthParse(e.to_string()))?;
        let delimiter = if text.lines().next().is_some_and(|l| l.contains('\t')) {
            b'\t'
        } else if text.lines().next().is_some_and(|l| l.contains(';') && !l.contains(',')) {
            b';'
        } else {
            b','
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .delimiter(delimiter)
            .from_reader(text.as_bytes());
        let mut pairs = BTreeSet::new();
        for (idx, record) in reader.records().enumerate() {
            let record = record.map_err(|e| EnsembleError::GroundTruthParse(e.to_string()))?;
            if record.len() < 2 {
                return Err(EnsembleError::GroundTruthParse(format!(
                    "line {} has fewer than two columns",
                    idx + 1
                )));
            }
            let (s, t) = (record[0].trim(), record[1].trim());
            if idx == 0 && is_header_cell(s) && is_header_cell(t) {
                continue;
            }
            pairs.insert((s.to_string(), t.to_string()));
        }
        Ok(Self { pairs })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("source_attribute,target_attribute\n");
        let mut writer = csv::Writer::from_writer(Vec::new());
        for (s, t) in &self.pairs {
            writer.write_record([s, t]).expect("in-memory write");
        }
        out.push_str(std::str::from_utf8(&writer.into_inner().expect("flush")).expect("utf8"));
        out
    }

    pub fn sources(&self) -> BTreeSet<&str> {
        self.pairs.iter().map(|(s, _)| s.as_str()).collect()
    }
}

fn is_header_cell(cell: &str) -> bool {
    matches!(
        normalize_name(cell).as_str(),
        "source" | "target" | "source_attribute" | "target_attribute" | "source_column" | "target_column"
    )
}

/// Source → targets in rank order.
pub type RankedLists = BTreeMap<String, Vec<String>>;

pub fn ranked_lists(lists: &[CandidateList]) -> RankedLists {
    lists
        .iter()
        .map(|l| {
            let mut c: Vec<&Candidate> = l.candidates.iter().collect();
            c.sort_by_key(|c| c.rank);
            (l.source.clone(), c.into_iter().map(|c| c.target.clone()).collect())
        })
        .collect()
}

/// Fraction of each ground-truth source's true targets found in its top-k,
/// averaged over the sources that appear in the ground truth.
pub fn precision_at_k(lists: &RankedLists, truth: &GroundTruth, k: usize) -> Result<f64, EnsembleError> {
    if k == 0 {
        return Err(EnsembleError::InvalidK);
    }
    if truth.pairs.is_empty() {
        return Err(EnsembleError::EmptyGroundTruth);
    }
    let mut per_source: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (s, t) in &truth.pairs {
        per_source.entry(s).or_default().push(t);
    }
    let total: f64 = per_source
        .iter()
        .map(|(source, targets)| {
            let top: BTreeSet<&str> = lists
                .get(*source)
                .map(|l| l.iter().take(k).map(String::as_str).collect())
                .unwrap_or_default();
            targets.iter().filter(|t| top.contains(**t)).count() as f64 / targets.len() as f64
        })
        .sum();
    Ok(total / per_source.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRow {
    pub configuration: String,
    pub k: usize,
    pub precision: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrecisionTable {
    pub rows: Vec<PrecisionRow>,
}

impl PrecisionTable {
    pub fn evaluate(
        configurations: &BTreeMap<String, RankedLists>,
        truth: &GroundTruth,
        ks: &[usize],
    ) -> Result<Self, EnsembleError> {
        let mut rows = Vec::new();
        for (name, lists) in configurations {
            for k in ks {
                rows.push(PrecisionRow {
                    configuration: name.clone(),
                    k: *k,
                    precision: precision_at_k(lists, truth, *k)?,
                });
            }
        }
        Ok(Self { rows })
    }

    pub fn get(&self, configuration: &str, k: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.configuration == configuration && r.k == k)
            .map(|r| r.precision)
    }

    /// Aligned text: one row per configuration, one column per k.
    pub fn to_text(&self) -> String {
        let ks: BTreeSet<usize> = self.rows.iter().map(|r| r.k).collect();
        let mut configs: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !configs.contains(&r.configuration.as_str()) {
                configs.push(&r.configuration);
            }
        }
        let width = configs.iter().map(|c| c.len()).max().unwrap_or(0).max("configuration".len());
        let mut out = format!("{:<width$}", "configuration");
        for k in &ks {
            out.push_str(&format!("  {:>8}", format!("P@{k}")));
        }
        out.push('\n');
        for c in configs {
            out.push_str(&format!("{c:<width$}"));
            for k in &ks {
                match self.get(c, *k) {
                    Some(p) => out.push_str(&format!("  {p:>8.3}")),
                    None => out.push_str(&format!("  {:>8}", "-")),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// A matcher's own ranking, for per-matcher precision rows.
pub fn individual_lists(matrix: &ScoreMatrix, matcher: usize, k: usize) -> RankedLists {
    (0..matrix.source_names.len())
        .map(|s| {
            let top = matrix.matcher_top_k(matcher, s, k, &BTreeSet::new());
            (
                matrix.source_names[s].clone(),
                top.into_iter().map(|t| matrix.target_names[t].clone()).collect(),
            )
        })
        .collect()
}
