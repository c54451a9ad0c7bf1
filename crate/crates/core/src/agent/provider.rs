use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_ENDPOINT: &str = "COLMATCH_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "COLMATCH_LLM_API_KEY";
pub const ENV_MODEL: &str = "COLMATCH_LLM_MODEL";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("model unavailable: {0}")]
    Unavailable(String),
    #[error("model request timed out")]
    Timeout,
    #[error("transcript mismatch: {0}")]
    TranscriptMismatch(String),
}

/// Request text in, response text out.
pub trait ModelProvider: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, prompt: &str) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    /// When present, the request must match this prompt exactly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub model_id: String,
    pub exchanges: Vec<Exchange>,
}

/// Replays captured model responses in order.
#[derive(Debug)]
pub struct RecordedTranscriptProvider {
    model_id: String,
    remaining: Mutex<VecDeque<Exchange>>,
}

impl RecordedTranscriptProvider {
    pub fn new(transcript: Transcript) -> Self {
        Self {
            model_id: transcript.model_id,
            remaining: Mutex::new(transcript.exchanges.into()),
        }
    }

    pub fn from_responses<I, S>(model_id: &str, responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(Transcript {
            model_id: model_id.to_string(),
            exchanges: responses
                .into_iter()
                .map(|r| Exchange {
                    prompt: None,
                    response: r.into(),
                })
                .collect(),
        })
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes).map(Self::new)
    }

    pub fn remaining(&self) -> usize {
        self.remaining.lock().expect("transcript lock").len()
    }
}

impl ModelProvider for RecordedTranscriptProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let exchange = self
            .remaining
            .lock()
            .expect("transcript lock")
            .pop_front()
            .ok_or_else(|| ProviderError::Unavailable("transcript exhausted".into()))?;
        match &exchange.prompt {
            Some(expected) if expected != prompt => Err(ProviderError::TranscriptMismatch(
                "request differs from recorded prompt".into(),
            )),
            _ => Ok(exchange.response),
        }
    }
}

/// OpenAI-compatible chat-completions client.
#[derive(Debug, Clone)]
pub struct HttpChatProvider {
    endpoint: String,
    api_key: Option<String>,
    model_id: String,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

impl HttpChatProvider {
    pub fn new(endpoint: String, api_key: Option<String>, model_id: String, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            endpoint,
            api_key,
            model_id,
            agent,
        }
    }

    /// Reads endpoint, key and model from the environment. `None` when no
    /// endpoint is configured.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENV_ENDPOINT).ok().filter(|s| !s.is_empty())?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-4o".to_string());
        let key = std::env::var(ENV_API_KEY).ok().filter(|s| !s.is_empty());
        Some(Self::new(endpoint, key, model, super::DEFAULT_TIMEOUT))
    }
}

impl ModelProvider for HttpChatProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let body = ChatRequest {
            model: &self.model_id,
            messages: vec![ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: 0.0,
        };
        let mut request = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(&body).map_err(|e| match e {
            ureq::Error::Timeout(_) => ProviderError::Timeout,
            other => ProviderError::Unavailable(other.to_string()),
        })?;
        let value: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Unavailable("response has no message content".into()))
    }
}
