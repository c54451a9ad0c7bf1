//! LLM-backed candidate validation with a keyed verdict memory and a
//! deterministic rule-based fallback for offline use.

mod memory;
mod parse;
mod prompt;
mod provider;

use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::ensemble::Candidate;
use crate::matchers::{name_fuzzy_score, token_jaccard_score, value_jaccard_score, MatchScore};
use crate::model::{NumericStats, SourceAttribute, TargetAttribute, ValueType};
use crate::semantics::{map_values, ValuePair};

pub use memory::{memory_key, AgentMemory, Feedback, MemoryEntry, MemoryRecord};
pub use parse::{extract_object, parse_verdict};
pub use prompt::{build_prompt, NO_PRIOR_DECISIONS, MAX_MEMORY_HITS};
pub use provider::{
    Exchange, HttpChatProvider, ModelProvider, ProviderError, RecordedTranscriptProvider, Transcript,
    ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL,
};

pub const FALLBACK_MODEL_ID: &str = "fallback-rules";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
pub const MAX_EXPLANATIONS: usize = 4;

const NAME_RULE: f64 = 0.85;
const TOKEN_RULE: f64 = 0.5;
const VALUE_RULE: f64 = 0.5;
const MIN_RULE_CONFIDENCE: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("no model configured and fallback disabled, or model unreachable: {0}")]
    ModelUnavailable(String),
    #[error("malformed model response: {0}")]
    MalformedModelResponse(String),
    #[error("model call timed out after {0:?}")]
    Timeout(Duration),
    #[error("unknown memory key `{0}`")]
    UnknownKey(String),
    #[error("memory log error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum ExplanationCategory {
    Semantic,
    Name,
    Token,
    Value,
    Pattern,
    History,
    Knowledge,
    Other,
}

impl ExplanationCategory {
    pub const ALL: [ExplanationCategory; 8] = [
        ExplanationCategory::Semantic,
        ExplanationCategory::Name,
        ExplanationCategory::Token,
        ExplanationCategory::Value,
        ExplanationCategory::Pattern,
        ExplanationCategory::History,
        ExplanationCategory::Knowledge,
        ExplanationCategory::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExplanationCategory::Semantic => "semantic",
            ExplanationCategory::Name => "name",
            ExplanationCategory::Token => "token",
            ExplanationCategory::Value => "value",
            ExplanationCategory::Pattern => "pattern",
            ExplanationCategory::History => "history",
            ExplanationCategory::Knowledge => "knowledge",
            ExplanationCategory::Other => "other",
        }
    }

    pub fn parse(raw: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == raw.trim().to_ascii_lowercase())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub is_match: bool,
    pub category: ExplanationCategory,
    pub reasoning: String,
    pub references: Vec<String>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentVerdict {
    pub explanations: Vec<Explanation>,
    pub final_decision: bool,
    pub model_id: String,
    pub from_fallback: bool,
}

/// Confidence-weighted vote over explanation flags; ties resolve to `false`.
pub fn synthesize_decision(explanations: &[Explanation]) -> bool {
    let (yes, no) = explanations.iter().fold((0.0, 0.0), |(y, n), e| {
        if e.is_match {
            (y + e.confidence, n)
        } else {
            (y, n + e.confidence)
        }
    });
    yes > no
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub inferred_type: ValueType,
    pub total_count: u64,
    pub null_count: u64,
    pub top_values: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub numeric_stats: Option<NumericStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub supercategory: String,
    pub category: String,
    pub description: String,
    pub value_type: ValueType,
    pub values: Vec<String>,
}

/// Everything the agent sees about one candidate pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateContext {
    pub source: String,
    pub target: String,
    pub source_profile: SourceSummary,
    pub target_attribute: TargetSummary,
    pub matcher_scores: Vec<MatchScore>,
    pub ensemble_score: Option<f64>,
    pub rank: Option<usize>,
    pub name_similarity: f64,
    pub token_overlap: f64,
    pub value_overlap: f64,
    pub value_mapping_preview: Vec<ValuePair>,
}

const PREVIEW_VALUES: usize = 10;

impl CandidateContext {
    pub fn build(source: &SourceAttribute, target: &TargetAttribute, candidate: Option<&Candidate>) -> Self {
        let target_values = target.values();
        let mut preview = map_values(&source.profile.unique_values, target_values).pairs;
        preview.truncate(PREVIEW_VALUES);
        Self {
            source: source.name.clone(),
            target: target.name.clone(),
            source_profile: SourceSummary {
                inferred_type: source.profile.inferred_type,
                total_count: source.profile.total_count,
                null_count: source.profile.null_count,
                top_values: source
                    .profile
                    .values_by_frequency()
                    .into_iter()
                    .take(PREVIEW_VALUES)
                    .map(str::to_string)
                    .collect(),
                numeric_stats: source.profile.numeric_stats.clone(),
            },
            target_attribute: TargetSummary {
                supercategory: target.supercategory.clone(),
                category: target.category.clone(),
                description: target.description.clone(),
                value_type: target.value_type,
                values: target_values.iter().take(20).cloned().collect(),
            },
            matcher_scores: candidate.map(|c| c.per_matcher.clone()).unwrap_or_default(),
            ensemble_score: candidate.map(|c| c.ensemble_score),
            rank: candidate.map(|c| c.rank),
            name_similarity: name_fuzzy_score(&source.name, &target.name),
            token_overlap: token_jaccard_score(&source.name, &target.name),
            value_overlap: value_jaccard_score(&source.profile.unique_values, target_values),
            value_mapping_preview: preview,
        }
    }

    pub fn key(&self) -> String {
        memory_key(&self.source, &self.target)
    }
}

/// Rule table used when no model is configured.
pub fn fallback_explain(ctx: &CandidateContext, memory: &AgentMemory) -> AgentVerdict {
    let mut explanations = Vec::new();
    let mut rule = |category, is_match: bool, confidence: f64, reasoning: String, references: Vec<String>| {
        if confidence >= MIN_RULE_CONFIDENCE {
            explanations.push(Explanation {
                is_match,
                category,
                reasoning,
                references,
                confidence,
            });
        }
    };

    rule(
        ExplanationCategory::Name,
        ctx.name_similarity >= NAME_RULE,
        ctx.name_similarity,
        format!(
            "Normalized names `{}` and `{}` have edit similarity {:.3} (match threshold {NAME_RULE}).",
            ctx.source, ctx.target, ctx.name_similarity
        ),
        vec![ctx.source.clone(), ctx.target.clone()],
    );
    rule(
        ExplanationCategory::Token,
        ctx.token_overlap >= TOKEN_RULE,
        ctx.token_overlap,
        format!(
            "Name tokens overlap with Jaccard {:.3} (match threshold {TOKEN_RULE}).",
            ctx.token_overlap
        ),
        Vec::new(),
    );
    rule(
        ExplanationCategory::Value,
        ctx.value_overlap >= VALUE_RULE,
        ctx.value_overlap,
        format!(
            "Unique values overlap with Jaccard {:.3} (match threshold {VALUE_RULE}).",
            ctx.value_overlap
        ),
        ctx.value_mapping_preview
            .iter()
            .take(3)
            .map(|p| format!("{} -> {}", p.source_value, p.target_value))
            .collect(),
    );
    if let Some(entry) = memory.get(&ctx.key()) {
        if entry.user_feedback == Some(Feedback::Confirmed) {
            rule(
                ExplanationCategory::History,
                entry.verdict.final_decision,
                1.0,
                format!(
                    "A previous verdict ({}) for this pair was confirmed by the user.",
                    if entry.verdict.final_decision { "match" } else { "no match" }
                ),
                vec![entry.key.clone()],
            );
        }
    }

    if explanations.is_empty() {
        explanations.push(Explanation {
            is_match: false,
            category: ExplanationCategory::Other,
            reasoning: "No name, token, value, or history evidence supports this pair.".into(),
            references: Vec::new(),
            confidence: 0.5,
        });
    }
    let yes = explanations.iter().filter(|e| e.is_match).count();
    let final_decision = yes * 2 > explanations.len();
    AgentVerdict {
        explanations,
        final_decision,
        model_id: FALLBACK_MODEL_ID.into(),
        from_fallback: true,
    }
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub timeout: Duration,
    pub fallback_enabled: bool,
    pub max_in_flight: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            timeout: DEFAULT_TIMEOUT,
            fallback_enabled: true,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

/// Counting gate bounding concurrent model calls.
struct InFlightGate {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlightGate {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePass<'_> {
        let mut active = self.active.lock().expect("gate lock");
        while *active >= self.limit {
            active = self.freed.wait(active).expect("gate lock");
        }
        *active += 1;
        GatePass(self)
    }
}

struct GatePass<'a>(&'a InFlightGate);

impl Drop for GatePass<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().expect("gate lock") -= 1;
        self.0.freed.notify_one();
    }
}

pub struct Agent {
    provider: Option<Arc<dyn ModelProvider>>,
    config: AgentConfig,
    memory: RwLock<AgentMemory>,
    gate: InFlightGate,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Agent")
            .field("model", &self.model_id())
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Agent {
    pub fn new(provider: Option<Arc<dyn ModelProvider>>, config: AgentConfig) -> Self {
        Self {
            provider,
            gate: InFlightGate::new(config.max_in_flight),
            config,
            memory: RwLock::new(AgentMemory::default()),
            clock: Arc::new(SystemClock),
        }
    }

    /// Fallback-only agent.
    pub fn offline() -> Self {
        Self::new(None, AgentConfig::default())
    }

    /// Uses [`HttpChatProvider`] when the model environment variables are set.
    pub fn from_env() -> Self {
        let provider = HttpChatProvider::from_env().map(|p| Arc::new(p) as Arc<dyn ModelProvider>);
        Self::new(provider, AgentConfig::default())
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_memory(self, memory: AgentMemory) -> Self {
        *self.memory.write().expect("memory lock") = memory;
        self
    }

    /// Replaces the memory store, including any attached log.
    pub fn set_memory(&self, memory: AgentMemory) {
        *self.memory.write().expect("memory lock") = memory;
    }

    pub fn model_id(&self) -> Option<String> {
        self.provider.as_ref().map(|p| p.model_id().to_string())
    }

    pub fn memory_snapshot(&self) -> AgentMemory {
        self.memory.read().expect("memory lock").clone()
    }

    pub fn retrieve_memory(&self, source: &str, target: &str, limit: usize) -> Vec<MemoryEntry> {
        self.memory.read().expect("memory lock").retrieve(source, target, limit)
    }

    pub fn cached_verdict(&self, source: &str, target: &str) -> Option<AgentVerdict> {
        self.memory
            .read()
            .expect("memory lock")
            .get(&memory_key(source, target))
            .map(|e| e.verdict.clone())
    }

    /// Sets feedback on an existing entry and returns the previous value.
    pub fn record_feedback(&self, key: &str, feedback: Option<Feedback>) -> Result<Option<Feedback>, AgentError> {
        self.memory.write().expect("memory lock").set_feedback(key, feedback)
    }

    pub fn fallback(&self, ctx: &CandidateContext) -> AgentVerdict {
        fallback_explain(ctx, &self.memory.read().expect("memory lock"))
    }

    /// Produces a verdict for `ctx` and stores it in memory.
    pub fn explain(&self, ctx: &CandidateContext) -> Result<AgentVerdict, AgentError> {
        let verdict = match &self.provider {
            Some(provider) => self.ask_model(provider.clone(), ctx)?,
            None if self.config.fallback_enabled => self.fallback(ctx),
            None => return Err(AgentError::ModelUnavailable("no model configured".into())),
        };
        self.memory.write().expect("memory lock").put(
            &ctx.source,
            &ctx.target,
            verdict.clone(),
            self.clock.now_ms(),
        )?;
        Ok(verdict)
    }

    fn ask_model(&self, provider: Arc<dyn ModelProvider>, ctx: &CandidateContext) -> Result<AgentVerdict, AgentError> {
        let hits = self.retrieve_memory(&ctx.source, &ctx.target, MAX_MEMORY_HITS);
        let prompt = build_prompt(ctx, &hits);
        let _pass = self.gate.acquire();
        let mut last_error = String::new();
        for _attempt in 0..2 {
            let response = self.call_with_timeout(provider.clone(), prompt.clone())?;
            match parse_verdict(&response, provider.model_id()) {
                Ok(v) => return Ok(v),
                Err(AgentError::MalformedModelResponse(msg)) => last_error = msg,
                Err(other) => return Err(other),
            }
        }
        Err(AgentError::MalformedModelResponse(last_error))
    }

    fn call_with_timeout(&self, provider: Arc<dyn ModelProvider>, prompt: String) -> Result<String, AgentError> {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let _ = tx.send(provider.complete(&prompt));
        });
        match rx.recv_timeout(self.config.timeout) {
            Ok(Ok(text)) => Ok(text),
            Ok(Err(ProviderError::Timeout)) => Err(AgentError::Timeout(self.config.timeout)),
            Ok(Err(e)) => Err(AgentError::ModelUnavailable(e.to_string())),
            Err(_) => Err(AgentError::Timeout(self.config.timeout)),
        }
    }

    pub fn attach_log(&self, path: &std::path::Path) -> Result<(), AgentError> {
        self.memory.write().expect("memory lock").attach_log(path)
    }
}
