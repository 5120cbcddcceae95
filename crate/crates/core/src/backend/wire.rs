//! OpenAI-compatible `/chat/completions` client with bounded retries.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatMessage, FinishKind, ModelRequest, ModelResponse, Role, ToolCall};

fn default_api_key_env() -> Option<String> {
    Some("OPENAI_API_KEY".into())
}
fn default_timeout_secs() -> u64 {
    120
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireConfig {
    /// e.g. `https://api.openai.com/v1`; `/chat/completions` is appended
    /// unless already present.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the API key. `null` sends no key.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// First backoff delay; doubles after each failed attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl WireConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: default_api_key_env(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            backoff_ms: default_backoff_ms(),
        }
    }

    pub fn endpoint(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

pub struct WireBackend {
    config: WireConfig,
    api_key: Option<String>,
    client: Client,
}

enum AttemptError {
    Retryable(String),
    Fatal(String),
}

impl WireBackend {
    /// Reads the API key from the configured environment variable.
    pub fn new(config: WireConfig) -> Result<Self, BackendError> {
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty());
        Self::with_key(config, api_key)
    }

    pub fn with_key(config: WireConfig, api_key: Option<String>) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport {
                message: format!("cannot build HTTP client: {e}"),
                attempts: 0,
            })?;
        Ok(Self {
            config,
            api_key,
            client,
        })
    }

    pub fn config(&self) -> &WireConfig {
        &self.config
    }

    /// Request body in chat-completions shape.
    pub fn encode_request(&self, request: &ModelRequest) -> Value {
        let messages: Vec<Value> = request.messages.iter().map(encode_message).collect();
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
        });
        if let Some(tools) = &request.tools {
            body["tools"] = tools.iter().map(|t| t.to_openai_json()).collect();
        }
        body
    }

    fn attempt(&self, body: &Value) -> Result<ModelResponse, AttemptError> {
        let mut builder = self.client.post(self.config.endpoint()).json(body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| AttemptError::Retryable(format!("request failed: {e}")))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| AttemptError::Retryable(format!("reading body failed: {e}")))?;
        if !status.is_success() {
            let message = format!("HTTP {status}: {}", truncate(&text, 300));
            return Err(if retryable(status) {
                AttemptError::Retryable(message)
            } else {
                AttemptError::Fatal(message)
            });
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| AttemptError::Retryable(format!("malformed response body: {e}")))?;
        decode_response(&value).map_err(AttemptError::Retryable)
    }
}

fn retryable(status: StatusCode) -> bool {
    status.is_server_error()
        || status == StatusCode::TOO_MANY_REQUESTS
        || status == StatusCode::REQUEST_TIMEOUT
        || status == StatusCode::CONFLICT
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

fn encode_message(message: &ChatMessage) -> Value {
    let role = match message.role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
        Role::Tool => "tool",
    };
    let mut out = json!({ "role": role, "content": message.content });
    if !message.tool_calls.is_empty() {
        if message.content.is_empty() {
            out["content"] = Value::Null;
        }
        out["tool_calls"] = message
            .tool_calls
            .iter()
            .map(|c| {
                json!({
                    "id": c.call_id,
                    "type": "function",
                    "function": { "name": c.tool_name, "arguments": c.arguments },
                })
            })
            .collect();
    }
    if let Some(id) = &message.tool_call_id {
        out["tool_call_id"] = json!(id);
    }
    out
}

/// Decodes `choices[0].message` of a chat-completions reply.
pub(crate) fn decode_response(value: &Value) -> Result<ModelResponse, String> {
    let message = value
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .ok_or("response has no choices[0].message")?;
    let content = message
        .get("content")
        .and_then(Value::as_str)
        .map(str::to_string);
    let mut tool_calls = Vec::new();
    if let Some(calls) = message.get("tool_calls").and_then(Value::as_array) {
        for (i, call) in calls.iter().enumerate() {
            let function = call.get("function").ok_or("tool call without function")?;
            let name = function
                .get("name")
                .and_then(Value::as_str)
                .ok_or("tool call without name")?;
            let arguments = match function.get("arguments") {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Null) | None => "{}".to_string(),
                Some(other) => other.to_string(),
            };
            let call_id = call
                .get("id")
                .and_then(Value::as_str)
                .map(str::to_string)
                .unwrap_or_else(|| format!("call_{i}"));
            tool_calls.push(ToolCall {
                call_id,
                tool_name: name.to_string(),
                arguments,
            });
        }
    }
    if tool_calls.is_empty() {
        Ok(ModelResponse {
            content: Some(content.unwrap_or_default()),
            tool_calls,
            finish_kind: FinishKind::Text,
        })
    } else {
        Ok(ModelResponse {
            content,
            tool_calls,
            finish_kind: FinishKind::ToolCalls,
        })
    }
}

impl ChatBackend for WireBackend {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        request.validate()?;
        let body = self.encode_request(request);
        let mut attempts = 0;
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(response) => return Ok(response),
                Err(AttemptError::Fatal(message)) => {
                    return Err(BackendError::Transport { message, attempts })
                }
                Err(AttemptError::Retryable(message)) => {
                    if attempts > self.config.max_retries {
                        return Err(BackendError::Transport { message, attempts });
                    }
                    log::warn!("attempt {attempts} to {} failed: {message}", self.config.endpoint());
                    std::thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
    }

    fn describe(&self) -> String {
        let auth = if self.api_key.is_some() {
            format!("Bearer {}", super::REDACTED)
        } else {
            "none".to_string()
        };
        format!(
            "wire POST {} model={} authorization={auth}",
            self.config.endpoint(),
            self.config.model
        )
    }

    fn secrets(&self) -> Vec<String> {
        self.api_key.iter().cloned().collect()
    }
}
