use std::sync::OnceLock;
use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, OracleError, OracleRequest, DEFAULT_MAX_IN_FLIGHT};

pub const ENV_ENDPOINT: &str = "STORYLOOM_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "STORYLOOM_LLM_API_KEY";
pub const ENV_MODEL: &str = "STORYLOOM_LLM_MODEL";
pub const ENV_MAX_IN_FLIGHT: &str = "STORYLOOM_LLM_MAX_IN_FLIGHT";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiveConfig {
    /// Full URL of a chat-completions endpoint.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub max_in_flight: usize,
    pub timeout: Duration,
}

impl LiveConfig {
    pub fn from_env() -> Result<Self, OracleError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, OracleError> {
        let endpoint = get(ENV_ENDPOINT)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| OracleError::NotConfigured(format!("{ENV_ENDPOINT} is not set")))?;
        let max_in_flight = match get(ENV_MAX_IN_FLIGHT) {
            Some(v) => v
                .parse()
                .map_err(|_| OracleError::NotConfigured(format!("{ENV_MAX_IN_FLIGHT}={v:?} is not a number")))?,
            None => DEFAULT_MAX_IN_FLIGHT,
        };
        Ok(Self {
            endpoint,
            api_key: get(ENV_API_KEY).filter(|s| !s.is_empty()),
            model: get(ENV_MODEL).unwrap_or_else(|| "default".into()),
            max_in_flight,
            timeout: Duration::from_secs(120),
        })
    }
}

/// Client for the common chat-completions wire shape.
pub struct ChatCompletionsBackend {
    config: LiveConfig,
    // built lazily: a blocking client must not be created on an async runtime thread
    client: OnceLock<reqwest::blocking::Client>,
}

impl ChatCompletionsBackend {
    pub fn new(config: LiveConfig) -> Self {
        Self {
            config,
            client: OnceLock::new(),
        }
    }

    pub fn config(&self) -> &LiveConfig {
        &self.config
    }

    fn client(&self) -> &reqwest::blocking::Client {
        self.client.get_or_init(|| {
            reqwest::blocking::Client::builder()
                .timeout(self.config.timeout)
                .build()
                .expect("http client")
        })
    }

    fn body(&self, req: &OracleRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{ "role": "user", "content": req.filled_prompt }],
            "temperature": req.sampling.temperature,
            "max_tokens": req.sampling.max_tokens,
        });
        if let Some(seed) = req.sampling.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

fn parse_response(value: &Value) -> Result<String, OracleError> {
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| OracleError::Transient("response has no choices".into()))?;
    if choice.get("finish_reason").and_then(Value::as_str) == Some("content_filter") {
        return Err(OracleError::Refusal("content filter".into()));
    }
    let message = choice
        .get("message")
        .ok_or_else(|| OracleError::Transient("choice has no message".into()))?;
    if let Some(refusal) = message.get("refusal").and_then(Value::as_str) {
        return Err(OracleError::Refusal(refusal.to_string()));
    }
    message
        .get("content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| OracleError::Transient("message has no content".into()))
}

impl Backend for ChatCompletionsBackend {
    fn call(&self, req: &OracleRequest) -> Result<String, OracleError> {
        let mut http = self.client().post(&self.config.endpoint).json(&self.body(req));
        if let Some(key) = &self.config.api_key {
            http = http.bearer_auth(key);
        }
        let resp = http.send().map_err(|e| OracleError::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| OracleError::Transient(e.to_string()))?;
        match status.as_u16() {
            200..=299 => {}
            401 | 403 => return Err(OracleError::Auth(format!("{status}: {text}"))),
            408 | 429 | 500..=599 => return Err(OracleError::Transient(format!("{status}: {text}"))),
            _ => return Err(OracleError::InvalidRequest(format!("{status}: {text}"))),
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| OracleError::Transient(format!("unparsable response body: {e}")))?;
        parse_response(&value)
    }

    fn name(&self) -> &str {
        "chat-completions"
    }
}
