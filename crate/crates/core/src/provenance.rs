//! Linear, invertible action history with undo, redo and jumps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::Feedback;
use crate::ensemble::Decision;
use crate::matchers::{EasyMatch, MatcherDescriptor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProvenanceError {
    #[error("nothing to undo")]
    NothingToUndo,
    #[error("nothing to redo")]
    NothingToRedo,
    #[error("unknown sequence number {0}")]
    UnknownSeq(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Accept,
    Reject,
    WeightAdjusted,
    ThresholdChanged,
    MatcherRegistered,
    ValueMappingEdited,
    FeedbackRecorded,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Accept => "accept",
            EventKind::Reject => "reject",
            EventKind::WeightAdjusted => "weight_adjusted",
            EventKind::ThresholdChanged => "threshold_changed",
            EventKind::MatcherRegistered => "matcher_registered",
            EventKind::ValueMappingEdited => "value_mapping_edited",
            EventKind::FeedbackRecorded => "feedback_recorded",
        }
    }
}

/// What the user did. Variants are tried in order when deserializing, so
/// the more specific shapes come first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    ValueMapping {
        source: String,
        target: String,
        source_value: String,
        target_value: Option<String>,
    },
    Pair {
        source: String,
        target: String,
    },
    Weights {
        weights: BTreeMap<String, f64>,
    },
    Thresholds {
        name_threshold: f64,
        value_threshold: f64,
    },
    Matcher {
        descriptor: MatcherDescriptor,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        command: Option<Vec<String>>,
    },
    Feedback {
        key: String,
        feedback: Option<Feedback>,
    },
}

/// Prior decision of one pair, `None` meaning undecided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorDecision {
    pub source: String,
    pub target: String,
    pub decision: Option<Decision>,
}

/// Minimal state delta that reverts an event. Deserialization order matters
/// as for [`Payload`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Inverse {
    Decisions {
        prior_weights: BTreeMap<String, f64>,
        prior_decisions: Vec<PriorDecision>,
    },
    Thresholds {
        prior_name_threshold: f64,
        prior_value_threshold: f64,
        prior_easy_matches: Vec<EasyMatch>,
    },
    Matcher {
        remove_matcher: String,
        prior_weights: BTreeMap<String, f64>,
    },
    Weights {
        prior_weights: BTreeMap<String, f64>,
    },
    ValueMapping {
        had_edit: bool,
        prior_target_value: Option<String>,
    },
    Feedback {
        prior_feedback: Option<Feedback>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEvent {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub kind: EventKind,
    pub payload: Payload,
    pub inverse_payload: Inverse,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    events: Vec<ProvenanceEvent>,
    cursor: usize,
}

impl Timeline {
    pub fn events(&self) -> &[ProvenanceEvent] {
        &self.events
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Drops the redo branch and appends. Sequence numbers are positions, so
    /// the appended event always gets `cursor + 1`.
    pub fn record(&mut self, timestamp_ms: u64, kind: EventKind, payload: Payload, inverse: Inverse) -> &ProvenanceEvent {
        self.events.truncate(self.cursor);
        self.events.push(ProvenanceEvent {
            seq: self.events.len() as u64 + 1,
            timestamp_ms,
            kind,
            payload,
            inverse_payload: inverse,
        });
        self.cursor = self.events.len();
        self.events.last().expect("just pushed")
    }

    /// Event that the next undo reverts.
    pub fn peek_undo(&self) -> Result<&ProvenanceEvent, ProvenanceError> {
        self.cursor
            .checked_sub(1)
            .map(|i| &self.events[i])
            .ok_or(ProvenanceError::NothingToUndo)
    }

    /// Event that the next redo reapplies.
    pub fn peek_redo(&self) -> Result<&ProvenanceEvent, ProvenanceError> {
        self.events.get(self.cursor).ok_or(ProvenanceError::NothingToRedo)
    }

    pub fn step_back(&mut self) -> Result<(), ProvenanceError> {
        self.peek_undo()?;
        self.cursor -= 1;
        Ok(())
    }

    pub fn step_forward(&mut self) -> Result<(), ProvenanceError> {
        self.peek_redo()?;
        self.cursor += 1;
        Ok(())
    }

    pub fn check_seq(&self, seq: u64) -> Result<usize, ProvenanceError> {
        if seq as usize <= self.events.len() {
            Ok(seq as usize)
        } else {
            Err(ProvenanceError::UnknownSeq(seq))
        }
    }
}
