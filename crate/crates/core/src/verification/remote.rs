//! Chat-completions verifier over HTTP.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{render_extraction_prompt, render_prompt, BackendError, BackendTask, Limiter, PromptBudget, VerifierBackend};

pub const API_KEY_ENV: &str = "RAR_VERIFIER_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    /// Cap on generated tokens, verifier reasoning included.
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub max_inflight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "verifier".into(),
            temperature: 0.0,
            max_tokens: 4096,
            timeout_secs: 120,
            max_inflight: 16,
        }
    }
}

pub struct RemoteLmBackend {
    config: RemoteConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    limiter: Limiter,
}

impl std::fmt::Debug for RemoteLmBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteLmBackend")
            .field("config", &self.config)
            .field("api_key", &self.api_key.as_ref().map(|_| "<set>"))
            .finish()
    }
}

impl RemoteLmBackend {
    /// Reads the bearer token from `RAR_VERIFIER_API_KEY` if set.
    pub fn new(config: RemoteConfig) -> Self {
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_api_key(config, api_key)
    }

    pub fn with_api_key(config: RemoteConfig, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        let limiter = Limiter::new(config.max_inflight);
        Self {
            config,
            api_key,
            agent,
            limiter,
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    pub fn limiter(&self) -> &Limiter {
        &self.limiter
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        });
        let _permit = self.limiter.acquire();
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(BackendError::Transport(format!("HTTP {status}")));
        }
        if status >= 400 {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Rejected(format!("HTTP {status}: {text}")));
        }
        let value: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Transport(format!("bad response body: {e}")))?;
        extract_content(&value)
            .ok_or_else(|| BackendError::Transport("response has no choices[0].message.content".into()))
    }
}

fn extract_content(value: &Value) -> Option<String> {
    let message = value.get("choices")?.get(0)?.get("message")?;
    message.get("content")?.as_str().map(str::to_string)
}

impl VerifierBackend for RemoteLmBackend {
    fn call(&self, task: BackendTask<'_>, prompt: Option<&str>) -> Result<String, BackendError> {
        let rendered;
        let prompt = match (prompt, task) {
            (Some(p), _) => p,
            (None, BackendTask::Verify(req)) => {
                rendered = render_prompt(req, &PromptBudget::default())
                    .map_err(|e| BackendError::Rejected(e.to_string()))?;
                &rendered
            }
            (None, BackendTask::ExtractClaims { prompt_text, response_text }) => {
                rendered = render_extraction_prompt(prompt_text, response_text);
                &rendered
            }
        };
        self.complete(prompt)
    }

    fn fingerprint(&self) -> String {
        format!(
            "remote:{}:{}:t={}:max={}",
            self.config.endpoint, self.config.model, self.config.temperature, self.config.max_tokens
        )
    }
}
