//! Rollout providers.
//!
//! The loop only ever talks to [`Policy`]; the scripted [`MockPolicy`] and
//! the HTTP [`RemotePolicy`] are interchangeable, and [`RecordingPolicy`] /
//! [`ReplayPolicy`] capture and reproduce any transcript sequence.

mod mock;
mod record;
mod remote;

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use mock::{Matcher, MockPolicy, MockRule, MockScript, Unmatched};
pub use record::{RecordedCall, RecordingPolicy, ReplayPolicy};
pub use remote::{ApiMode, RemoteConfig, RemotePolicy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_response_tokens: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 1.0,
            max_response_tokens: 8096,
        }
    }
}

impl SamplingParams {
    pub fn check(&self) -> Result<(), String> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(format!("top_p must be in (0, 1], got {}", self.top_p));
        }
        if self.max_response_tokens == 0 {
            return Err("max_response_tokens must be positive".into());
        }
        Ok(())
    }
}

/// One completion request. The tag names the prompt kind, e.g.
/// `propose.deduction` or `solve.induction`, and is what mock scripts match on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRequest {
    pub tag: String,
    pub prompt: String,
    pub params: SamplingParams,
}

impl PolicyRequest {
    pub fn new(tag: impl Into<String>, prompt: impl Into<String>, params: SamplingParams) -> Self {
        Self {
            tag: tag.into(),
            prompt: prompt.into(),
            params,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTranscript {
    pub prompt: String,
    /// Raw model output, unparsed.
    pub response: String,
    pub usage: Option<Usage>,
    pub latency: Duration,
    /// The response hit the token limit.
    pub truncated: bool,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum PolicyError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("policy endpoint answered {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed policy response: {0}")]
    Decode(String),
    #[error("mock script: {0}")]
    Script(String),
    #[error("replay: {0}")]
    Replay(String),
    #[error("invalid sampling parameters: {0}")]
    Params(String),
}

impl PolicyError {
    /// Failures that a later call might not hit again.
    pub fn is_transient(&self) -> bool {
        match self {
            PolicyError::Transport { .. } => true,
            PolicyError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait Policy: Send + Sync {
    fn generate(&self, request: &PolicyRequest) -> Result<PolicyTranscript, PolicyError>;

    /// Results come back in request order.
    fn generate_batch(&self, requests: &[PolicyRequest]) -> Vec<Result<PolicyTranscript, PolicyError>> {
        requests.iter().map(|r| self.generate(r)).collect()
    }

    /// Internal state needed to continue an interrupted run identically.
    fn snapshot(&self) -> serde_json::Value {
        serde_json::Value::Null
    }

    fn restore(&self, _state: &serde_json::Value) -> Result<(), PolicyError> {
        Ok(())
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn generate(&self, request: &PolicyRequest) -> Result<PolicyTranscript, PolicyError> {
        (**self).generate(request)
    }

    fn generate_batch(&self, requests: &[PolicyRequest]) -> Vec<Result<PolicyTranscript, PolicyError>> {
        (**self).generate_batch(requests)
    }

    fn snapshot(&self) -> serde_json::Value {
        (**self).snapshot()
    }

    fn restore(&self, state: &serde_json::Value) -> Result<(), PolicyError> {
        (**self).restore(state)
    }
}
