//! Curation session: the mutable state behind the API and the CLI.
//!
//! A session owns the score matrix, matcher weights, easy matches, explicit
//! decisions and value-mapping edits. Every mutation goes through
//! [`CurationSession::apply`], is recorded on the provenance timeline with a
//! minimal inverse, and can be undone, redone or jumped over.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, AgentError, AgentMemory, AgentVerdict, CandidateContext, Feedback, MemoryEntry};
use crate::clock::{Clock, SystemClock};
use crate::config::SessionConfig;
use crate::ensemble::{
    derive_status, Candidate, CandidateList, CandidateStatus, Decision, Decisions, EasySet, EnsembleError,
    MatcherWeights, RankingContext, ScoreMatrix, DEFAULT_INITIAL_WEIGHT,
};
use crate::matchers::{
    detect_easy_matches, EasyMatch, MatchScore, MatcherDescriptor, MatcherError, MatcherRegistry, RegisteredMatcher,
    ScoreWarning, Scorer, SubprocessScorer,
};
use crate::model::{ingest_source, ModelError, SourceDataset, TargetAttribute, TargetSchema, ValueProfile};
use crate::par::Execution;
use crate::provenance::{EventKind, Inverse, Payload, PriorDecision, ProvenanceError, ProvenanceEvent, Timeline};
use crate::semantics::{
    cluster_sources, compare_distributions, embed_sources, map_values_with_floor, ClusterAssignment,
    DistributionComparison, HashedNgramEmbedder, ValueMapping, ValuePair,
};
use crate::text::value_similarity;

pub const EXPORT_FORMAT: &str = "colmatch-session/1";
pub const CSV_HEADER: &str = "source_attribute,target_attribute,score,status";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Matcher(#[from] MatcherError),
    #[error(transparent)]
    Provenance(#[from] ProvenanceError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unknown source attribute `{0}`")]
    UnknownSource(String),
    #[error("unknown target attribute `{0}`")]
    UnknownTarget(String),
    #[error("`{source_name}` -> `{target}` is not a candidate")]
    UnknownPair { source_name: String, target: String },
    #[error("cannot {action} a candidate whose status is {status}")]
    InvalidTransition { action: &'static str, status: &'static str },
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("import failed: {0}")]
    Import(String),
}

/// A user action. This is the wire format of the actions endpoint and of CLI
/// action scripts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    Accept {
        source: String,
        target: String,
    },
    Reject {
        source: String,
        target: String,
    },
    SetWeights {
        weights: BTreeMap<String, f64>,
    },
    SetThresholds {
        #[serde(default)]
        name_threshold: Option<f64>,
        #[serde(default)]
        value_threshold: Option<f64>,
    },
    Undo,
    Redo,
    JumpTo {
        seq: u64,
    },
    Feedback {
        key: String,
        feedback: Option<Feedback>,
    },
    EditValueMapping {
        source: String,
        target: String,
        source_value: String,
        target_value: Option<String>,
    },
    RegisterMatcher {
        id: String,
        #[serde(default)]
        display_name: Option<String>,
        command: Vec<String>,
    },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Accept { .. } => "accept",
            Action::Reject { .. } => "reject",
            Action::SetWeights { .. } => "set_weights",
            Action::SetThresholds { .. } => "set_thresholds",
            Action::Undo => "undo",
            Action::Redo => "redo",
            Action::JumpTo { .. } => "jump_to",
            Action::Feedback { .. } => "feedback",
            Action::EditValueMapping { .. } => "edit_value_mapping",
            Action::RegisterMatcher { .. } => "register_matcher",
        }
    }
}

/// Shared collaborators a session runs with.
#[derive(Clone)]
pub struct SessionContext {
    pub agent: Arc<Agent>,
    pub clock: Arc<dyn Clock>,
    pub exec: Execution,
}

impl Default for SessionContext {
    fn default() -> Self {
        Self {
            agent: Arc::new(Agent::offline()),
            clock: Arc::new(SystemClock),
            exec: Execution::default(),
        }
    }
}

impl std::fmt::Debug for SessionContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionContext").field("exec", &self.exec).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub suggested: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub easy_accepted: usize,
    pub shadowed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub source_name: String,
    pub target_name: String,
    pub source_attributes: usize,
    pub target_attributes: usize,
    pub matchers: Vec<MatcherDescriptor>,
    pub weights: BTreeMap<String, f64>,
    pub easy_matches: usize,
    pub ambiguous_easy_sources: usize,
    pub candidates: usize,
    pub status_counts: StatusCounts,
    pub timeline_length: usize,
    pub cursor: usize,
    pub warnings: usize,
    pub config: SessionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationOutcome {
    pub action: String,
    /// Sequence number of the event recorded by this action, if any.
    pub seq: Option<u64>,
    pub cursor: usize,
    pub weights: BTreeMap<String, f64>,
    /// Recomputed list of the source the action touched.
    pub affected: Option<CandidateList>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateFilter {
    pub min_score: Option<f64>,
    pub supercategory: Option<String>,
    pub category: Option<String>,
    pub cluster: Option<usize>,
    pub status: Option<CandidateStatus>,
    pub query: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
    pub pages: usize,
}

impl<T: Clone> Page<T> {
    /// One-based page of `all`.
    pub fn of(all: &[T], page: usize, page_size: usize) -> Result<Self, SessionError> {
        if page == 0 || page_size == 0 {
            return Err(SessionError::InvalidAction("page and page_size must be at least 1".into()));
        }
        let start = (page - 1).saturating_mul(page_size).min(all.len());
        let end = start.saturating_add(page_size).min(all.len());
        Ok(Self {
            items: all[start..end].to_vec(),
            total: all.len(),
            page,
            page_size,
            pages: all.len().div_ceil(page_size),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDetail {
    pub source: String,
    pub target: String,
    pub status: CandidateStatus,
    pub easy: bool,
    pub ensemble_score: f64,
    pub rank: usize,
    pub per_matcher: Vec<MatchScore>,
    pub supported_by: Vec<String>,
    pub source_profile: ValueProfile,
    pub target_attribute: TargetAttribute,
    pub distribution: DistributionComparison,
    pub value_mapping: ValueMapping,
    pub agent_verdict: Option<AgentVerdict>,
    pub verdict_cached: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agent_error: Option<String>,
}

/// The part of a session that undo must restore exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub weights: MatcherWeights,
    pub decisions: Decisions,
    pub easy: EasySet,
    pub name_threshold: f64,
    pub value_threshold: f64,
    pub matchers: Vec<String>,
    pub value_edits: BTreeMap<(String, String), BTreeMap<String, Option<String>>>,
    pub feedback: BTreeMap<String, Feedback>,
    pub lists: Vec<CandidateList>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingRow {
    pub source: String,
    pub target: String,
    pub score: f64,
    pub status: CandidateStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherExport {
    #[serde(flatten)]
    pub descriptor: MatcherDescriptor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairValueMapping {
    pub source: String,
    pub target: String,
    pub mapping: ValueMapping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceExport {
    pub name: String,
    pub table: String,
}

/// Full JSON export; also the import format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionExport {
    pub format: String,
    pub source: SourceExport,
    pub target: TargetSchema,
    pub config: SessionConfig,
    pub matchers: Vec<MatcherExport>,
    pub weights: MatcherWeights,
    pub easy_matches: Vec<EasyMatch>,
    pub mappings: Vec<MappingRow>,
    pub value_mappings: Vec<PairValueMapping>,
    pub timeline: Timeline,
    pub memory: Vec<MemoryEntry>,
}

/// A matcher removed by undo, kept so redo does not rescore.
struct ParkedMatcher {
    matcher: RegisteredMatcher,
    column: Vec<Vec<f64>>,
}

pub struct CurationSession {
    source: SourceDataset,
    target: TargetSchema,
    config: SessionConfig,
    ctx: SessionContext,
    registry: MatcherRegistry,
    commands: BTreeMap<String, Vec<String>>,
    parked: BTreeMap<String, ParkedMatcher>,
    matrix: ScoreMatrix,
    weights: MatcherWeights,
    easy: EasySet,
    decisions: Decisions,
    value_edits: BTreeMap<(String, String), BTreeMap<String, Option<String>>>,
    timeline: Timeline,
    warnings: Vec<ScoreWarning>,
    clusters: ClusterAssignment,
    lists: Vec<CandidateList>,
}

impl std::fmt::Debug for CurationSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CurationSession")
            .field("source", &self.source.name)
            .field("target", &self.target.name)
            .field("cursor", &self.timeline.cursor())
            .finish_non_exhaustive()
    }
}

type Applied = (EventKind, Inverse, Option<String>);

impl CurationSession {
    pub fn new(source: SourceDataset, target: TargetSchema, config: SessionConfig) -> Result<Self, SessionError> {
        Self::create(source, target, config, MatcherRegistry::builtin(), SessionContext::default())
    }

    pub fn create(
        source: SourceDataset,
        target: TargetSchema,
        config: SessionConfig,
        registry: MatcherRegistry,
        ctx: SessionContext,
    ) -> Result<Self, SessionError> {
        config.validate().map_err(SessionError::InvalidConfig)?;
        if registry.is_empty() {
            return Err(EnsembleError::NoMatchersRegistered.into());
        }
        for id in config.initial_weights.keys() {
            if !registry.contains(id) {
                return Err(SessionError::InvalidConfig(format!("initial weight for unknown matcher `{id}`")));
            }
        }
        let (matrix, report) = ScoreMatrix::compute(&source, &target, &registry, ctx.exec);
        if let Some(failure) = report.failures.into_iter().next() {
            return Err(failure.into());
        }
        let mut weights = MatcherWeights::equal(registry.ids()).with_rates(
            config.alpha,
            config.beta,
            config.w_min,
            config.w_max,
        );
        let initial: BTreeMap<String, f64> = registry
            .ids()
            .into_iter()
            .map(|id| {
                let w = config.initial_weights.get(&id).copied().unwrap_or(DEFAULT_INITIAL_WEIGHT);
                (id, w.clamp(config.w_min, config.w_max))
            })
            .collect();
        weights.set(&initial)?;
        let easy = EasySet::new(
            detect_easy_matches(&source, &target, config.name_threshold, config.value_threshold),
            config.auto_accept_easy,
        );
        let embeddings = embed_sources(&source.attributes, &HashedNgramEmbedder);
        let clusters = cluster_sources(&embeddings, config.n_neighbors, config.cluster_threshold);
        let mut session = Self {
            source,
            target,
            config,
            ctx,
            registry,
            commands: BTreeMap::new(),
            parked: BTreeMap::new(),
            matrix,
            weights,
            easy,
            decisions: Decisions::new(),
            value_edits: BTreeMap::new(),
            timeline: Timeline::default(),
            warnings: report.warnings,
            clusters,
            lists: Vec::new(),
        };
        session.refresh();
        Ok(session)
    }

    fn refresh(&mut self) {
        let ctx = self.ranking();
        self.lists = ctx.candidate_lists(self.ctx.exec);
    }

    fn ranking(&self) -> RankingContext<'_> {
        RankingContext {
            matrix: &self.matrix,
            weights: &self.weights,
            easy: &self.easy,
            decisions: &self.decisions,
            k: self.config.k,
        }
    }

    pub fn source(&self) -> &SourceDataset {
        &self.source
    }

    pub fn target(&self) -> &TargetSchema {
        &self.target
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn agent(&self) -> &Arc<Agent> {
        &self.ctx.agent
    }

    pub fn weights(&self) -> &MatcherWeights {
        &self.weights
    }

    pub fn registry(&self) -> &MatcherRegistry {
        &self.registry
    }

    pub fn easy_matches(&self) -> &EasySet {
        &self.easy
    }

    pub fn decisions(&self) -> &Decisions {
        &self.decisions
    }

    pub fn timeline(&self) -> &Timeline {
        &self.timeline
    }

    pub fn warnings(&self) -> &[ScoreWarning] {
        &self.warnings
    }

    pub fn clusters(&self) -> &ClusterAssignment {
        &self.clusters
    }

    pub fn matrix(&self) -> &ScoreMatrix {
        &self.matrix
    }

    pub fn candidate_lists(&self) -> &[CandidateList] {
        &self.lists
    }

    pub fn candidate_list(&self, source: &str) -> Option<&CandidateList> {
        self.lists.iter().find(|l| l.source == source)
    }

    pub fn status_of(&self, source: &str, target: &str) -> CandidateStatus {
        derive_status(&self.easy, &self.decisions, source, target)
    }

    pub fn state(&self) -> SessionState {
        SessionState {
            weights: self.weights.clone(),
            decisions: self.decisions.clone(),
            easy: self.easy.clone(),
            name_threshold: self.config.name_threshold,
            value_threshold: self.config.value_threshold,
            matchers: self.registry.ids(),
            value_edits: self.value_edits.clone(),
            feedback: self.ctx.agent.memory_snapshot().feedback_map(),
            lists: self.lists.clone(),
        }
    }

    pub fn summary(&self) -> SessionSummary {
        let mut counts = StatusCounts::default();
        let mut total = 0;
        for c in self.lists.iter().flat_map(|l| &l.candidates) {
            total += 1;
            match c.status {
                CandidateStatus::Suggested => counts.suggested += 1,
                CandidateStatus::Accepted => counts.accepted += 1,
                CandidateStatus::Rejected => counts.rejected += 1,
                CandidateStatus::EasyAccepted => counts.easy_accepted += 1,
                CandidateStatus::Shadowed => counts.shadowed += 1,
            }
        }
        let ambiguous = self
            .source
            .attributes
            .iter()
            .filter(|a| self.easy.targets_of(&a.name).len() > 1)
            .count();
        SessionSummary {
            source_name: self.source.name.clone(),
            target_name: self.target.name.clone(),
            source_attributes: self.source.attributes.len(),
            target_attributes: self.target.attributes.len(),
            matchers: self.registry.descriptors(),
            weights: self.weights.weights.clone(),
            easy_matches: self.easy.matches.len(),
            ambiguous_easy_sources: ambiguous,
            candidates: total,
            status_counts: counts,
            timeline_length: self.timeline.len(),
            cursor: self.timeline.cursor(),
            warnings: self.warnings.len(),
            config: self.config.clone(),
        }
    }

    fn source_index(&self, name: &str) -> Result<usize, SessionError> {
        self.source
            .position(name)
            .ok_or_else(|| SessionError::UnknownSource(name.to_string()))
    }

    fn target_index(&self, name: &str) -> Result<usize, SessionError> {
        self.target
            .position(name)
            .ok_or_else(|| SessionError::UnknownTarget(name.to_string()))
    }

    // ---- mutations -------------------------------------------------------

    /// Applies an action stamped with the session clock.
    pub fn apply(&mut self, action: Action) -> Result<MutationOutcome, SessionError> {
        let ts = self.ctx.clock.now_ms();
        self.apply_at(action, ts)
    }

    /// Applies an action with an explicit timestamp (used by log replay).
    pub fn apply_at(&mut self, action: Action, timestamp_ms: u64) -> Result<MutationOutcome, SessionError> {
        let name = action.name().to_string();
        let (seq, affected) = match action {
            Action::Undo => (None, self.undo()?),
            Action::Redo => (None, self.redo()?),
            Action::JumpTo { seq } => {
                self.jump_to(seq)?;
                (None, None)
            }
            other => {
                let (kind, payload) = self.payload_for(other)?;
                let (applied_kind, inverse, affected) = self.apply_payload(kind, &payload)?;
                debug_assert_eq!(applied_kind, kind);
                let seq = self.timeline.record(timestamp_ms, kind, payload, inverse).seq;
                (Some(seq), affected)
            }
        };
        Ok(MutationOutcome {
            action: name,
            seq,
            cursor: self.timeline.cursor(),
            weights: self.weights.weights.clone(),
            affected: affected.and_then(|s| self.candidate_list(&s).cloned()),
        })
    }

    pub fn accept(&mut self, source: &str, target: &str) -> Result<MutationOutcome, SessionError> {
        self.apply(Action::Accept {
            source: source.into(),
            target: target.into(),
        })
    }

    pub fn reject(&mut self, source: &str, target: &str) -> Result<MutationOutcome, SessionError> {
        self.apply(Action::Reject {
            source: source.into(),
            target: target.into(),
        })
    }

    pub fn set_weights(&mut self, weights: BTreeMap<String, f64>) -> Result<MutationOutcome, SessionError> {
        self.apply(Action::SetWeights { weights })
    }

    pub fn set_thresholds(&mut self, name_threshold: f64, value_threshold: f64) -> Result<MutationOutcome, SessionError> {
        self.apply(Action::SetThresholds {
            name_threshold: Some(name_threshold),
            value_threshold: Some(value_threshold),
        })
    }

    pub fn record_feedback(&mut self, key: &str, feedback: Option<Feedback>) -> Result<MutationOutcome, SessionError> {
        self.apply(Action::Feedback {
            key: key.into(),
            feedback,
        })
    }

    pub fn edit_value_mapping(
        &mut self,
        source: &str,
        target: &str,
        source_value: &str,
        target_value: Option<&str>,
    ) -> Result<MutationOutcome, SessionError> {
        self.apply(Action::EditValueMapping {
            source: source.into(),
            target: target.into(),
            source_value: source_value.into(),
            target_value: target_value.map(str::to_string),
        })
    }

    /// Registers an in-process plugin matcher. Its initial weight is the
    /// current mean weight. Such matchers cannot be rebuilt from an export.
    pub fn register_plugin(
        &mut self,
        descriptor: MatcherDescriptor,
        scorer: Arc<dyn Scorer>,
    ) -> Result<MutationOutcome, SessionError> {
        if self.registry.contains(&descriptor.id) {
            return Err(MatcherError::DuplicateMatcherId(descriptor.id).into());
        }
        self.parked.remove(&descriptor.id);
        self.stage_matcher(descriptor.clone(), scorer)?;
        let payload = Payload::Matcher {
            descriptor,
            command: None,
        };
        let (_, inverse, _) = self.apply_payload(EventKind::MatcherRegistered, &payload)?;
        let ts = self.ctx.clock.now_ms();
        let seq = self
            .timeline
            .record(ts, EventKind::MatcherRegistered, payload, inverse)
            .seq;
        Ok(MutationOutcome {
            action: "register_matcher".into(),
            seq: Some(seq),
            cursor: self.timeline.cursor(),
            weights: self.weights.weights.clone(),
            affected: None,
        })
    }

    /// Scores a matcher and parks it, ready for the registration event.
    fn stage_matcher(&mut self, descriptor: MatcherDescriptor, scorer: Arc<dyn Scorer>) -> Result<(), SessionError> {
        let matcher = RegisteredMatcher { descriptor, scorer };
        let (column, warnings) = ScoreMatrix::score_one(&self.source, &self.target, &matcher, self.ctx.exec)?;
        self.warnings.extend(warnings);
        self.parked
            .insert(matcher.descriptor.id.clone(), ParkedMatcher { matcher, column });
        Ok(())
    }

    fn payload_for(&mut self, action: Action) -> Result<(EventKind, Payload), SessionError> {
        Ok(match action {
            Action::Accept { source, target } => (EventKind::Accept, Payload::Pair { source, target }),
            Action::Reject { source, target } => (EventKind::Reject, Payload::Pair { source, target }),
            Action::SetWeights { weights } => (EventKind::WeightAdjusted, Payload::Weights { weights }),
            Action::SetThresholds {
                name_threshold,
                value_threshold,
            } => (
                EventKind::ThresholdChanged,
                Payload::Thresholds {
                    name_threshold: name_threshold.unwrap_or(self.config.name_threshold),
                    value_threshold: value_threshold.unwrap_or(self.config.value_threshold),
                },
            ),
            Action::Feedback { key, feedback } => (EventKind::FeedbackRecorded, Payload::Feedback { key, feedback }),
            Action::EditValueMapping {
                source,
                target,
                source_value,
                target_value,
            } => (
                EventKind::ValueMappingEdited,
                Payload::ValueMapping {
                    source,
                    target,
                    source_value,
                    target_value,
                },
            ),
            Action::RegisterMatcher {
                id,
                display_name,
                command,
            } => {
                if command.is_empty() {
                    return Err(SessionError::InvalidAction("matcher command is empty".into()));
                }
                if self.registry.contains(&id) {
                    return Err(MatcherError::DuplicateMatcherId(id).into());
                }
                let descriptor = MatcherDescriptor::plugin(&id, display_name.as_deref().unwrap_or(&id));
                self.parked.remove(&id);
                let scorer = Arc::new(SubprocessScorer::new(id.clone(), command.clone()));
                self.stage_matcher(descriptor.clone(), scorer)?;
                (
                    EventKind::MatcherRegistered,
                    Payload::Matcher {
                        descriptor,
                        command: Some(command),
                    },
                )
            }
            Action::Undo | Action::Redo | Action::JumpTo { .. } => unreachable!("handled by apply_at"),
        })
    }

    /// Validates and applies one event payload, returning its inverse. On
    /// error the state is unchanged.
    fn apply_payload(&mut self, kind: EventKind, payload: &Payload) -> Result<Applied, SessionError> {
        let applied = match (kind, payload) {
            (EventKind::Accept, Payload::Pair { source, target }) => self.do_decide(source, target, Decision::Accepted)?,
            (EventKind::Reject, Payload::Pair { source, target }) => self.do_decide(source, target, Decision::Rejected)?,
            (EventKind::WeightAdjusted, Payload::Weights { weights }) => {
                let prior = self.weights.weights.clone();
                self.weights.set(weights)?;
                (kind, Inverse::Weights { prior_weights: prior }, None)
            }
            (
                EventKind::ThresholdChanged,
                Payload::Thresholds {
                    name_threshold,
                    value_threshold,
                },
            ) => {
                for (label, v) in [("name_threshold", name_threshold), ("value_threshold", value_threshold)] {
                    if !(0.0..=1.0).contains(v) {
                        return Err(SessionError::InvalidAction(format!("{label} must be in [0, 1], got {v}")));
                    }
                }
                let inverse = Inverse::Thresholds {
                    prior_name_threshold: self.config.name_threshold,
                    prior_value_threshold: self.config.value_threshold,
                    prior_easy_matches: self.easy.matches.clone(),
                };
                self.config.name_threshold = *name_threshold;
                self.config.value_threshold = *value_threshold;
                self.easy.matches = detect_easy_matches(&self.source, &self.target, *name_threshold, *value_threshold);
                (kind, inverse, None)
            }
            (EventKind::MatcherRegistered, Payload::Matcher { descriptor, command }) => {
                if self.registry.contains(&descriptor.id) {
                    return Err(MatcherError::DuplicateMatcherId(descriptor.id.clone()).into());
                }
                if !self.parked.contains_key(&descriptor.id) {
                    let command = command.clone().ok_or_else(|| {
                        SessionError::InvalidAction(format!(
                            "matcher `{}` was registered in-process and cannot be rebuilt",
                            descriptor.id
                        ))
                    })?;
                    let scorer = Arc::new(SubprocessScorer::new(descriptor.id.clone(), command));
                    self.stage_matcher(descriptor.clone(), scorer)?;
                }
                let parked = self.parked.remove(&descriptor.id).expect("staged above");
                let prior = self.weights.weights.clone();
                let mean = self.weights.mean();
                self.registry
                    .register(parked.matcher.descriptor.clone(), parked.matcher.scorer.clone())?;
                self.matrix.add_matcher(descriptor.id.clone(), parked.column);
                self.weights.weights.insert(descriptor.id.clone(), mean);
                if let Some(cmd) = command {
                    self.commands.insert(descriptor.id.clone(), cmd.clone());
                }
                (
                    kind,
                    Inverse::Matcher {
                        remove_matcher: descriptor.id.clone(),
                        prior_weights: prior,
                    },
                    None,
                )
            }
            (
                EventKind::ValueMappingEdited,
                Payload::ValueMapping {
                    source,
                    target,
                    source_value,
                    target_value,
                },
            ) => {
                let (si, ti) = (self.source_index(source)?, self.target_index(target)?);
                let src = &self.source.attributes[si];
                if !src.profile.unique_values.iter().any(|v| v == source_value) {
                    return Err(SessionError::InvalidAction(format!(
                        "`{source_value}` is not a value of `{source}`"
                    )));
                }
                let pair_key = (source.clone(), target.clone());
                if let Some(t) = target_value {
                    if !self.target.attributes[ti].values().iter().any(|v| v == t) {
                        return Err(SessionError::InvalidAction(format!("`{t}` is not a value of `{target}`")));
                    }
                    let claimed = self.value_edits.get(&pair_key).is_some_and(|edits| {
                        edits
                            .iter()
                            .any(|(s, e)| s != source_value && e.as_deref() == Some(t.as_str()))
                    });
                    if claimed {
                        return Err(SessionError::InvalidAction(format!(
                            "`{t}` is already mapped by another edit"
                        )));
                    }
                }
                let edits = self.value_edits.entry(pair_key.clone()).or_default();
                let prior = edits.insert(source_value.clone(), target_value.clone());
                (
                    kind,
                    Inverse::ValueMapping {
                        had_edit: prior.is_some(),
                        prior_target_value: prior.flatten(),
                    },
                    Some(source.clone()),
                )
            }
            (EventKind::FeedbackRecorded, Payload::Feedback { key, feedback }) => {
                let prior = self.ctx.agent.record_feedback(key, *feedback)?;
                (kind, Inverse::Feedback { prior_feedback: prior }, None)
            }
            _ => {
                return Err(SessionError::InvalidAction(format!(
                    "payload does not fit event kind {}",
                    kind.as_str()
                )))
            }
        };
        self.refresh();
        Ok(applied)
    }

    fn do_decide(&mut self, source: &str, target: &str, decision: Decision) -> Result<Applied, SessionError> {
        let si = self.source_index(source)?;
        let ti = self.target_index(target)?;
        let status = self.status_of(source, target);
        let (action, allowed): (&'static str, &[CandidateStatus]) = match decision {
            Decision::Accepted => ("accept", &[CandidateStatus::Suggested, CandidateStatus::Shadowed]),
            Decision::Rejected => (
                "reject",
                &[
                    CandidateStatus::Suggested,
                    CandidateStatus::Shadowed,
                    CandidateStatus::EasyAccepted,
                ],
            ),
        };
        if !allowed.contains(&status) {
            return Err(SessionError::InvalidTransition {
                action,
                status: status.as_str(),
            });
        }
        let ctx = self.ranking();
        let ranking = ctx.rank_source(si);
        let rank = ranking.rank_of(ti).expect("every target is ranked");
        let score = ranking.score_of(ti).expect("every target is ranked");
        let supporters = ctx.supporters(si, ti, &ranking);

        let key = (source.to_string(), target.to_string());
        let mut prior_decisions = vec![PriorDecision {
            source: source.to_string(),
            target: target.to_string(),
            decision: self.decisions.get(&key).copied(),
        }];
        if decision == Decision::Accepted {
            let demoted: Vec<(String, String)> = self
                .decisions
                .range((source.to_string(), String::new())..)
                .take_while(|((s, _), _)| s == source)
                .filter(|((_, t), d)| t != target && **d == Decision::Accepted)
                .map(|(k, _)| k.clone())
                .collect();
            for k in demoted {
                self.decisions.remove(&k);
                prior_decisions.push(PriorDecision {
                    source: k.0,
                    target: k.1,
                    decision: Some(Decision::Accepted),
                });
            }
        }
        let prior_weights = self.weights.weights.clone();
        self.decisions.insert(key, decision);
        match decision {
            Decision::Accepted => self.weights.reward(&supporters, score, rank),
            // Rejecting an auto-accepted easy match leaves weights alone: no
            // matcher produced it.
            Decision::Rejected if status == CandidateStatus::EasyAccepted => {}
            Decision::Rejected => self.weights.penalize(&supporters, score, rank),
        }
        let kind = if decision == Decision::Accepted {
            EventKind::Accept
        } else {
            EventKind::Reject
        };
        Ok((
            kind,
            Inverse::Decisions {
                prior_weights,
                prior_decisions,
            },
            Some(source.to_string()),
        ))
    }

    fn revert(&mut self, event: &ProvenanceEvent) -> Result<Option<String>, SessionError> {
        let affected = match (&event.inverse_payload, &event.payload) {
            (
                Inverse::Decisions {
                    prior_weights,
                    prior_decisions,
                },
                Payload::Pair { source, .. },
            ) => {
                self.weights.weights = prior_weights.clone();
                for p in prior_decisions {
                    let key = (p.source.clone(), p.target.clone());
                    match p.decision {
                        Some(d) => self.decisions.insert(key, d),
                        None => self.decisions.remove(&key),
                    };
                }
                Some(source.clone())
            }
            (Inverse::Weights { prior_weights }, _) => {
                self.weights.weights = prior_weights.clone();
                None
            }
            (
                Inverse::Thresholds {
                    prior_name_threshold,
                    prior_value_threshold,
                    prior_easy_matches,
                },
                _,
            ) => {
                self.config.name_threshold = *prior_name_threshold;
                self.config.value_threshold = *prior_value_threshold;
                self.easy.matches = prior_easy_matches.clone();
                None
            }
            (
                Inverse::Matcher {
                    remove_matcher,
                    prior_weights,
                },
                _,
            ) => {
                let matcher = self
                    .registry
                    .remove(remove_matcher)
                    .ok_or_else(|| SessionError::InvalidAction(format!("matcher `{remove_matcher}` is not registered")))?;
                let idx = self
                    .matrix
                    .matcher_ids()
                    .iter()
                    .position(|m| m == remove_matcher)
                    .expect("registry and matrix agree");
                let column = (0..self.matrix.source_names.len())
                    .map(|s| {
                        (0..self.matrix.target_names.len())
                            .map(|t| self.matrix.score(idx, s, t))
                            .collect()
                    })
                    .collect();
                self.matrix.remove_matcher(remove_matcher);
                self.parked
                    .insert(remove_matcher.clone(), ParkedMatcher { matcher, column });
                self.commands.remove(remove_matcher);
                self.weights.weights = prior_weights.clone();
                None
            }
            (
                Inverse::ValueMapping {
                    had_edit,
                    prior_target_value,
                },
                Payload::ValueMapping {
                    source,
                    target,
                    source_value,
                    ..
                },
            ) => {
                let pair_key = (source.clone(), target.clone());
                let edits = self.value_edits.entry(pair_key.clone()).or_default();
                if *had_edit {
                    edits.insert(source_value.clone(), prior_target_value.clone());
                } else {
                    edits.remove(source_value);
                }
                if edits.is_empty() {
                    self.value_edits.remove(&pair_key);
                }
                Some(source.clone())
            }
            (Inverse::Feedback { prior_feedback }, Payload::Feedback { key, .. }) => {
                self.ctx.agent.record_feedback(key, *prior_feedback)?;
                None
            }
            _ => {
                return Err(SessionError::InvalidAction(format!(
                    "inverse does not fit event {}",
                    event.seq
                )))
            }
        };
        self.refresh();
        Ok(affected)
    }

    pub fn undo(&mut self) -> Result<Option<String>, SessionError> {
        let event = self.timeline.peek_undo()?.clone();
        let affected = self.revert(&event)?;
        self.timeline.step_back()?;
        Ok(affected)
    }

    pub fn redo(&mut self) -> Result<Option<String>, SessionError> {
        let event = self.timeline.peek_redo()?.clone();
        let (_, _, affected) = self.apply_payload(event.kind, &event.payload)?;
        self.timeline.step_forward()?;
        Ok(affected)
    }

    pub fn jump_to(&mut self, seq: u64) -> Result<(), SessionError> {
        let goal = self.timeline.check_seq(seq)?;
        while self.timeline.cursor() > goal {
            self.undo()?;
        }
        while self.timeline.cursor() < goal {
            self.redo()?;
        }
        Ok(())
    }

    // ---- queries ---------------------------------------------------------

    /// Candidates matching every given filter, in source order then rank.
    pub fn filter_candidates(&self, filter: &CandidateFilter) -> Vec<Candidate> {
        let query = filter.query.as_ref().map(|q| q.to_lowercase());
        let clusters: Option<BTreeSet<&str>> = filter.cluster.map(|c| {
            self.clusters
                .clusters
                .get(c)
                .map(|members| members.iter().map(String::as_str).collect())
                .unwrap_or_default()
        });
        self.lists
            .iter()
            .flat_map(|l| &l.candidates)
            .filter(|c| filter.min_score.is_none_or(|m| c.ensemble_score >= m))
            .filter(|c| filter.status.is_none_or(|s| c.status == s))
            .filter(|c| clusters.as_ref().is_none_or(|set| set.contains(c.source.as_str())))
            .filter(|c| {
                if filter.supercategory.is_none() && filter.category.is_none() {
                    return true;
                }
                let t = self.target.attribute(&c.target).expect("candidate targets resolve");
                filter.supercategory.as_ref().is_none_or(|s| &t.supercategory == s)
                    && filter.category.as_ref().is_none_or(|s| &t.category == s)
            })
            .filter(|c| {
                query.as_ref().is_none_or(|q| {
                    c.source.to_lowercase().contains(q.as_str()) || c.target.to_lowercase().contains(q.as_str())
                })
            })
            .cloned()
            .collect()
    }

    pub fn list_candidates(
        &self,
        filter: &CandidateFilter,
        page: usize,
        page_size: usize,
    ) -> Result<Page<Candidate>, SessionError> {
        Page::of(&self.filter_candidates(filter), page, page_size)
    }

    /// Value mapping for a pair with user edits applied.
    pub fn value_mapping(&self, source: &str, target: &str) -> Result<ValueMapping, SessionError> {
        let s = &self.source.attributes[self.source_index(source)?];
        let t = &self.target.attributes[self.target_index(target)?];
        let base = map_values_with_floor(&s.profile.unique_values, t.values(), self.config.value_mapping_floor);
        let Some(edits) = self.value_edits.get(&(source.to_string(), target.to_string())) else {
            return Ok(base);
        };
        let claimed: BTreeSet<&str> = edits.values().flatten().map(String::as_str).collect();
        let mut pairs: Vec<ValuePair> = base
            .pairs
            .into_iter()
            .filter(|p| !edits.contains_key(&p.source_value) && !claimed.contains(p.target_value.as_str()))
            .collect();
        for (sv, tv) in edits {
            if let Some(tv) = tv {
                pairs.push(ValuePair {
                    source_value: sv.clone(),
                    target_value: tv.clone(),
                    score: value_similarity(sv, tv),
                });
            }
        }
        pairs.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.source_value.cmp(&b.source_value))
                .then_with(|| a.target_value.cmp(&b.target_value))
        });
        let used_s: BTreeSet<&str> = pairs.iter().map(|p| p.source_value.as_str()).collect();
        let used_t: BTreeSet<&str> = pairs.iter().map(|p| p.target_value.as_str()).collect();
        let mut seen = BTreeSet::new();
        let unmapped_source = s
            .profile
            .unique_values
            .iter()
            .filter(|v| !used_s.contains(v.as_str()))
            .cloned()
            .collect();
        let unmapped_target = t
            .values()
            .iter()
            .filter(|v| seen.insert(v.as_str()) && !used_t.contains(v.as_str()))
            .cloned()
            .collect();
        Ok(ValueMapping {
            pairs,
            unmapped_source,
            unmapped_target,
        })
    }

    /// Everything about a candidate except the agent verdict, plus the
    /// context the agent needs. Splitting the two lets callers run the agent
    /// outside any session lock.
    pub fn detail_base(&self, source: &str, target: &str) -> Result<(CandidateDetail, CandidateContext), SessionError> {
        let si = self.source_index(source)?;
        let ti = self.target_index(target)?;
        let listed = self
            .candidate_list(source)
            .and_then(|l| l.candidates.iter().find(|c| c.target == target));
        if listed.is_none() && !self.easy.contains(source, target) {
            return Err(SessionError::UnknownPair {
                source_name: source.to_string(),
                target: target.to_string(),
            });
        }
        let (ensemble_score, rank, supported_by) = match listed {
            Some(c) => (c.ensemble_score, c.rank, c.supported_by.clone()),
            None => {
                let ctx = self.ranking();
                let ranking = ctx.rank_source(si);
                (
                    ranking.score_of(ti).expect("ranked"),
                    ranking.rank_of(ti).expect("ranked"),
                    ctx.supporters(si, ti, &ranking),
                )
            }
        };
        let s = &self.source.attributes[si];
        let t = &self.target.attributes[ti];
        let candidate = listed.cloned();
        let context = CandidateContext::build(s, t, candidate.as_ref());
        let detail = CandidateDetail {
            source: source.to_string(),
            target: target.to_string(),
            status: self.status_of(source, target),
            easy: self.easy.contains(source, target),
            ensemble_score,
            rank,
            per_matcher: self.matrix.per_matcher(si, ti),
            supported_by,
            source_profile: s.profile.clone(),
            target_attribute: t.clone(),
            distribution: compare_distributions(&s.profile, &t.value_profile()),
            value_mapping: self.value_mapping(source, target)?,
            agent_verdict: self.ctx.agent.cached_verdict(source, target),
            verdict_cached: false,
            agent_error: None,
        };
        Ok((detail, context))
    }

    /// Fills the agent verdict: cached when present, computed otherwise.
    pub fn complete_detail(agent: &Agent, mut detail: CandidateDetail, context: &CandidateContext) -> CandidateDetail {
        if detail.agent_verdict.is_some() {
            detail.verdict_cached = true;
            return detail;
        }
        match agent.explain(context) {
            Ok(v) => detail.agent_verdict = Some(v),
            Err(e) => detail.agent_error = Some(e.to_string()),
        }
        detail
    }

    pub fn candidate_detail(&self, source: &str, target: &str) -> Result<CandidateDetail, SessionError> {
        let (detail, context) = self.detail_base(source, target)?;
        Ok(Self::complete_detail(&self.ctx.agent, detail, &context))
    }

    // ---- export ----------------------------------------------------------

    /// Accepted and easy-accepted pairs, sorted by source then target.
    pub fn mappings(&self) -> Vec<MappingRow> {
        let mut rows = Vec::new();
        for (si, s) in self.source.attributes.iter().enumerate() {
            let mut ranking = None;
            for (ti, t) in self.target.attributes.iter().enumerate() {
                let status = self.status_of(&s.name, &t.name);
                if !status.is_match() {
                    continue;
                }
                let r = ranking.get_or_insert_with(|| self.ranking().rank_source(si));
                rows.push(MappingRow {
                    source: s.name.clone(),
                    target: t.name.clone(),
                    score: r.score_of(ti).expect("ranked"),
                    status,
                });
            }
        }
        rows.sort_by(|a, b| (&a.source, &a.target).cmp(&(&b.source, &b.target)));
        rows
    }

    pub fn export_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(CSV_HEADER.split(','))
            .expect("in-memory write");
        for row in self.mappings() {
            writer
                .write_record([
                    row.source.as_str(),
                    row.target.as_str(),
                    &row.score.to_string(),
                    row.status.as_str(),
                ])
                .expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("flush")).expect("utf8")
    }

    pub fn export(&self) -> SessionExport {
        let mappings = self.mappings();
        let value_mappings = mappings
            .iter()
            .map(|m| PairValueMapping {
                source: m.source.clone(),
                target: m.target.clone(),
                mapping: self.value_mapping(&m.source, &m.target).expect("mapped pairs resolve"),
            })
            .collect();
        SessionExport {
            format: EXPORT_FORMAT.into(),
            source: SourceExport {
                name: self.source.name.clone(),
                table: String::from_utf8_lossy(&self.source.to_delimited()).into_owned(),
            },
            target: self.target.clone(),
            config: self.config.clone(),
            matchers: self
                .registry
                .descriptors()
                .into_iter()
                .map(|d| MatcherExport {
                    command: self.commands.get(&d.id).cloned(),
                    descriptor: d,
                })
                .collect(),
            weights: self.weights.clone(),
            easy_matches: self.easy.matches.clone(),
            mappings,
            value_mappings,
            timeline: self.timeline.clone(),
            memory: self.ctx.agent.memory_snapshot().entries().cloned().collect(),
        }
    }

    pub fn export_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(&self.export()).expect("export serializes");
        out.push('\n');
        out
    }

    /// Rebuilds a session from a JSON export by replaying its timeline from
    /// the initial configuration.
    pub fn import_json(bytes: &[u8], ctx: SessionContext) -> Result<Self, SessionError> {
        let export: SessionExport = serde_json::from_slice(bytes).map_err(|e| SessionError::Import(e.to_string()))?;
        if export.format != EXPORT_FORMAT {
            return Err(SessionError::Import(format!("unsupported format `{}`", export.format)));
        }
        let source = ingest_source(export.source.table.as_bytes(), &export.source.name)?;
        let mut memory = AgentMemory::from_entries(export.memory);
        memory.reset_feedback();
        ctx.agent.set_memory(memory);

        // Thresholds in the exported config are the current ones; replay
        // starts from the initial values recorded by the first threshold event.
        let mut initial = export.config.clone();
        if let Some(Inverse::Thresholds {
            prior_name_threshold,
            prior_value_threshold,
            ..
        }) = export
            .timeline
            .events()
            .iter()
            .find(|e| e.kind == EventKind::ThresholdChanged)
            .map(|e| &e.inverse_payload)
        {
            initial.name_threshold = *prior_name_threshold;
            initial.value_threshold = *prior_value_threshold;
        } else if export.timeline.events().iter().any(|e| e.kind == EventKind::ThresholdChanged) {
            return Err(SessionError::Import("threshold event without threshold inverse".into()));
        }
        let builtin: Vec<String> = MatcherRegistry::builtin().ids();
        let mut registry = MatcherRegistry::builtin();
        for m in &export.matchers {
            if builtin.contains(&m.descriptor.id) {
                continue;
            }
            let registered_by_event = export.timeline.events().iter().any(|e| {
                matches!(&e.payload, Payload::Matcher { descriptor, .. } if descriptor.id == m.descriptor.id)
            });
            if !registered_by_event {
                let command = m.command.clone().ok_or_else(|| {
                    SessionError::Import(format!("matcher `{}` has no command", m.descriptor.id))
                })?;
                registry.register(
                    m.descriptor.clone(),
                    Arc::new(SubprocessScorer::new(m.descriptor.id.clone(), command)),
                )?;
            }
        }
        let mut session = Self::create(source, export.target, initial, registry, ctx)?;
        session.commands.extend(
            export
                .matchers
                .iter()
                .filter_map(|m| m.command.clone().map(|c| (m.descriptor.id.clone(), c))),
        );
        for event in export.timeline.events() {
            session.replay_event(event)?;
        }
        session.jump_to(export.timeline.cursor() as u64)?;
        if session.timeline != export.timeline {
            return Err(SessionError::Import("replayed timeline differs from the export".into()));
        }
        Ok(session)
    }

    fn replay_event(&mut self, event: &ProvenanceEvent) -> Result<(), SessionError> {
        let (_, inverse, _) = self.apply_payload(event.kind, &event.payload)?;
        self.timeline
            .record(event.timestamp_ms, event.kind, event.payload.clone(), inverse);
        Ok(())
    }
}
