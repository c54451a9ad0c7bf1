use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use colmatch_core::agent::AgentError;
use colmatch_core::ensemble::EnsembleError;
use colmatch_core::matchers::MatcherError;
use colmatch_core::model::ModelError;
use colmatch_core::provenance::ProvenanceError;
use colmatch_core::SessionError;
use serde::Serialize;
use serde_json::{json, Value};

/// Structured error returned by every endpoint as `{code, message, detail}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.to_string(),
            message: message.into(),
            detail: Value::Null,
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn unknown_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "UnknownSession", format!("no session `{id}`"))
            .with_detail(json!({ "id": id }))
    }

    pub fn too_large(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::PAYLOAD_TOO_LARGE, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }

    pub fn status_code(&self) -> StatusCode {
        StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({}): {}", self.code, self.status, self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status_code(), Json(self)).into_response()
    }
}

fn model(e: &ModelError) -> ApiError {
    let code = match e {
        ModelError::MalformedTable(_) => "MalformedTable",
        ModelError::DuplicateAttribute { .. } => "DuplicateAttribute",
        ModelError::SchemaParseError { .. } => "SchemaParseError",
        ModelError::EmptySchema => "EmptySchema",
    };
    let detail = match e {
        ModelError::MalformedTable(reason) => json!({ "reason": reason }),
        ModelError::DuplicateAttribute { name, normalized } => json!({ "name": name, "normalized": normalized }),
        ModelError::SchemaParseError { context, message } => json!({ "context": context, "message": message }),
        ModelError::EmptySchema => Value::Null,
    };
    ApiError::bad_request(code, e.to_string()).with_detail(detail)
}

fn matcher(e: &MatcherError) -> ApiError {
    match e {
        MatcherError::DuplicateMatcherId(id) => {
            ApiError::new(StatusCode::CONFLICT, "DuplicateMatcherId", e.to_string()).with_detail(json!({ "id": id }))
        }
        MatcherError::UnknownMatcher(id) => {
            ApiError::bad_request("UnknownMatcher", e.to_string()).with_detail(json!({ "id": id }))
        }
        MatcherError::PluginFailed { id, reason } => ApiError::bad_request("PluginFailed", e.to_string())
            .with_detail(json!({ "id": id, "reason": reason })),
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let message = e.to_string();
        match &e {
            SessionError::Model(m) => model(m),
            SessionError::Matcher(m) | SessionError::Ensemble(EnsembleError::Matcher(m)) => matcher(m),
            SessionError::Ensemble(inner) => {
                let code = match inner {
                    EnsembleError::NoMatchersRegistered => "NoMatchersRegistered",
                    EnsembleError::InvalidWeight(_) => "InvalidWeight",
                    EnsembleError::EmptyGroundTruth => "EmptyGroundTruth",
                    EnsembleError::InvalidK => "InvalidK",
                    EnsembleError::GroundTruthParse(_) => "GroundTruthParse",
                    EnsembleError::Matcher(_) => unreachable!("handled above"),
                };
                ApiError::bad_request(code, message)
            }
            SessionError::Provenance(p) => match p {
                ProvenanceError::NothingToUndo => ApiError::new(StatusCode::CONFLICT, "NothingToUndo", message),
                ProvenanceError::NothingToRedo => ApiError::new(StatusCode::CONFLICT, "NothingToRedo", message),
                ProvenanceError::UnknownSeq(seq) => {
                    ApiError::bad_request("UnknownSeq", message).with_detail(json!({ "seq": seq }))
                }
            },
            SessionError::Agent(a) => match a {
                AgentError::UnknownKey(key) => ApiError::new(StatusCode::NOT_FOUND, "UnknownMemoryKey", message)
                    .with_detail(json!({ "key": key })),
                AgentError::ModelUnavailable(_) => ApiError::new(StatusCode::BAD_GATEWAY, "ModelUnavailable", message),
                AgentError::MalformedModelResponse(_) => {
                    ApiError::new(StatusCode::BAD_GATEWAY, "MalformedModelResponse", message)
                }
                AgentError::Timeout(_) => ApiError::new(StatusCode::GATEWAY_TIMEOUT, "ModelTimeout", message),
                AgentError::Io(_) => ApiError::internal(message),
            },
            SessionError::InvalidConfig(reason) => {
                ApiError::bad_request("InvalidConfig", message.clone()).with_detail(json!({ "reason": reason }))
            }
            SessionError::UnknownSource(name) => ApiError::new(StatusCode::NOT_FOUND, "UnknownSource", message)
                .with_detail(json!({ "source": name })),
            SessionError::UnknownTarget(name) => ApiError::new(StatusCode::NOT_FOUND, "UnknownTarget", message)
                .with_detail(json!({ "target": name })),
            SessionError::UnknownPair { source_name, target } => {
                ApiError::new(StatusCode::NOT_FOUND, "UnknownPair", message)
                    .with_detail(json!({ "source": source_name, "target": target }))
            }
            SessionError::InvalidTransition { action, status } => {
                ApiError::new(StatusCode::CONFLICT, "InvalidTransition", message)
                    .with_detail(json!({ "action": action, "status": status }))
            }
            SessionError::InvalidAction(_) => ApiError::bad_request("InvalidAction", message),
            SessionError::Import(_) => ApiError::bad_request("ImportFailed", message),
        }
    }
}
