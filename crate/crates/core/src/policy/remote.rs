//! Chat-completions / completions HTTP client.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Policy, PolicyError, PolicyRequest, PolicyTranscript, Usage};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApiMode {
    /// `POST {base}/chat/completions` with the prompt as one user message.
    #[default]
    Chat,
    /// `POST {base}/completions` with the raw prompt.
    Completion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model: String,
    pub mode: ApiMode,
    /// Environment variable holding the bearer token; unset means no auth
    /// header.
    pub api_key_env: Option<String>,
    pub max_retries: u32,
    #[serde(with = "crate::sandbox::secs")]
    pub initial_backoff: Duration,
    #[serde(with = "crate::sandbox::secs")]
    pub max_backoff: Duration,
    #[serde(with = "crate::sandbox::secs")]
    pub request_timeout: Duration,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            mode: ApiMode::Chat,
            api_key_env: Some("CODEPLAY_API_KEY".into()),
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(30),
            request_timeout: Duration::from_secs(600),
            max_in_flight: 16,
        }
    }
}

pub struct RemotePolicy {
    config: RemoteConfig,
    agent: ureq::Agent,
    token: Option<String>,
    pool: rayon::ThreadPool,
}

impl RemotePolicy {
    pub fn new(config: RemoteConfig) -> Result<Self, PolicyError> {
        let token = config.api_key_env.as_deref().and_then(|var| std::env::var(var).ok()).filter(|t| !t.is_empty());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.request_timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.max_in_flight.max(1))
            .thread_name(|i| format!("policy-http-{i}"))
            .build()
            .map_err(|e| PolicyError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self { config, agent, token, pool })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        let base = self.config.base_url.trim_end_matches('/');
        match self.config.mode {
            ApiMode::Chat => format!("{base}/chat/completions"),
            ApiMode::Completion => format!("{base}/completions"),
        }
    }

    fn body(&self, request: &PolicyRequest) -> Value {
        let p = &request.params;
        let mut body = json!({
            "model": self.config.model,
            "temperature": p.temperature,
            "top_p": p.top_p,
            "max_tokens": p.max_response_tokens,
        });
        match self.config.mode {
            ApiMode::Chat => body["messages"] = json!([{ "role": "user", "content": request.prompt }]),
            ApiMode::Completion => body["prompt"] = json!(request.prompt),
        }
        body
    }

    fn attempt(&self, url: &str, body: &Value) -> Result<Value, PolicyError> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(body).map_err(transport)?;
        let status = resp.status().as_u16();
        if status != 200 {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(PolicyError::Status {
                status,
                body: text.chars().take(500).collect(),
            });
        }
        resp.body_mut().read_json::<Value>().map_err(|e| PolicyError::Decode(e.to_string()))
    }

    fn backoff(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.min(16));
        self.config.initial_backoff.saturating_mul(factor).min(self.config.max_backoff)
    }
}

fn transport(e: ureq::Error) -> PolicyError {
    PolicyError::Transport {
        attempts: 1,
        message: e.to_string(),
    }
}

/// Pulls the generated text, truncation flag and usage from a response body.
pub(crate) fn decode_completion(mode: ApiMode, body: &Value) -> Result<(String, bool, Option<Usage>), PolicyError> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| PolicyError::Decode("no choices in response".into()))?;
    let text = match mode {
        ApiMode::Chat => choice.pointer("/message/content"),
        ApiMode::Completion => choice.get("text"),
    }
    .and_then(Value::as_str)
    .ok_or_else(|| PolicyError::Decode("choice carries no text".into()))?;
    let truncated = choice.get("finish_reason").and_then(Value::as_str) == Some("length");
    let usage = body.get("usage").and_then(|u| serde_json::from_value::<Usage>(u.clone()).ok());
    Ok((text.to_string(), truncated, usage))
}

impl Policy for RemotePolicy {
    fn generate(&self, request: &PolicyRequest) -> Result<PolicyTranscript, PolicyError> {
        request.params.check().map_err(PolicyError::Params)?;
        let url = self.endpoint();
        let body = self.body(request);
        let started = Instant::now();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&url, &body) {
                Ok(json) => {
                    let (response, truncated, usage) = decode_completion(self.config.mode, &json)?;
                    return Ok(PolicyTranscript {
                        prompt: request.prompt.clone(),
                        response,
                        usage,
                        latency: started.elapsed(),
                        truncated,
                    });
                }
                Err(e) if e.is_transient() && attempts <= self.config.max_retries => {
                    let wait = self.backoff(attempts - 1);
                    tracing::debug!("policy call failed ({e}); retry {attempts} in {wait:?}");
                    std::thread::sleep(wait);
                }
                Err(PolicyError::Transport { message, .. }) => return Err(PolicyError::Transport { attempts, message }),
                Err(e) => return Err(e),
            }
        }
    }

    fn generate_batch(&self, requests: &[PolicyRequest]) -> Vec<Result<PolicyTranscript, PolicyError>> {
        self.pool.install(|| requests.par_iter().map(|r| self.generate(r)).collect())
    }
}
