//! Schema-matching engine: attribute profiling, a weighted matcher ensemble
//! with online weight learning, easy-match detection, value mapping,
//! LLM-assisted validation and an undoable curation session.

pub mod agent;
pub mod clock;
pub mod config;
pub mod ensemble;
pub mod matchers;
pub mod model;
pub mod par;
pub mod provenance;
pub mod semantics;
pub mod session;
pub mod synth;
pub mod text;

pub use config::SessionConfig;
pub use ensemble::{Candidate, CandidateList, CandidateStatus, GroundTruth, MatcherWeights};
pub use model::{ingest_source, load_target, parse_target_schema, SourceDataset, TargetSchema};
pub use par::Execution;
pub use session::{Action, CurationSession, SessionContext, SessionError};
