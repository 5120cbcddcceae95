//! Chat-completion interface shared by every agent role.
//!
//! Three implementations: [`ScriptedBackend`] replays a JSON script and is
//! fully deterministic, [`WireBackend`] talks to any OpenAI-compatible
//! `/chat/completions` endpoint, and [`BernoulliWorkerBackend`] is a seeded
//! stochastic worker used by replanning sweeps.

mod scripted;
mod simulated;
mod wire;

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::toolkit::ToolSchema;

pub use scripted::{Matcher, Reply, ScriptEntry, ScriptToolCall, ScriptedBackend, Uses};
pub use simulated::BernoulliWorkerBackend;
pub use wire::{WireBackend, WireConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub call_id: String,
    pub tool_name: String,
    pub arguments: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    fn plain(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn assistant_tool_calls(content: Option<String>, calls: Vec<ToolCall>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.unwrap_or_default(),
            tool_calls: calls,
            tool_call_id: None,
        }
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            role: Role::Tool,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: Some(call_id.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tools: Option<Vec<ToolSchema>>,
    /// Always 0: decoding is greedy.
    pub temperature: f64,
}

impl ModelRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            tools: None,
            temperature: 0.0,
        }
    }

    pub fn with_tools(mut self, tools: Vec<ToolSchema>) -> Self {
        self.tools = (!tools.is_empty()).then_some(tools);
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match self.messages.first().map(|m| m.role) {
            Some(Role::System | Role::User) => {}
            Some(other) => {
                return Err(BackendError::InvalidRequest(format!(
                    "first message must be system or user, got {other:?}"
                )))
            }
            None => return Err(BackendError::InvalidRequest("request has no messages".into())),
        }
        if self.temperature != 0.0 {
            return Err(BackendError::InvalidRequest(
                "temperature must be 0 (greedy decoding)".into(),
            ));
        }
        Ok(())
    }

    /// Every message body and tool-call argument, newline-joined. Used by
    /// script matchers.
    pub fn full_text(&self) -> String {
        let mut parts = Vec::new();
        for m in &self.messages {
            parts.push(m.content.as_str());
            for call in &m.tool_calls {
                parts.push(call.tool_name.as_str());
                parts.push(call.arguments.as_str());
            }
        }
        parts.join("\n")
    }

    pub fn last_content(&self) -> &str {
        self.messages.last().map(|m| m.content.as_str()).unwrap_or("")
    }

    /// Short content hash identifying the request in error messages.
    pub fn digest(&self) -> String {
        let encoded = serde_json::to_string(self).unwrap_or_default();
        let hash = Sha256::digest(encoded.as_bytes());
        hex::encode(&hash[..8])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FinishKind {
    Text,
    ToolCalls,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    #[serde(default)]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    pub finish_kind: FinishKind,
}

impl ModelResponse {
    pub fn text(content: impl Into<String>) -> Self {
        Self {
            content: Some(content.into()),
            tool_calls: Vec::new(),
            finish_kind: FinishKind::Text,
        }
    }

    pub fn calls(tool_calls: Vec<ToolCall>) -> Self {
        Self {
            content: None,
            tool_calls,
            finish_kind: FinishKind::ToolCalls,
        }
    }

    pub fn content_or_empty(&self) -> &str {
        self.content.as_deref().unwrap_or("")
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("script exhausted: no entry matches request {digest} (last message: {preview:?})")]
    ScriptExhausted { digest: String, preview: String },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid script: {0}")]
    Script(String),
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError>;

    /// One-line description for trace logs. Must not contain credentials.
    fn describe(&self) -> String {
        "backend".to_string()
    }

    /// Secret values to scrub from any trace output.
    fn secrets(&self) -> Vec<String> {
        Vec::new()
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        (**self).complete(request)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }

    fn secrets(&self) -> Vec<String> {
        (**self).secrets()
    }
}

/// Collected trace lines, shared between every traced backend of a command.
#[derive(Debug, Clone, Default)]
pub struct TraceSink {
    lines: Arc<Mutex<Vec<String>>>,
}

impl TraceSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, line: String) {
        self.lines.lock().expect("trace sink poisoned").push(line);
    }

    pub fn lines(&self) -> Vec<String> {
        self.lines.lock().expect("trace sink poisoned").clone()
    }
}

pub const REDACTED: &str = "[REDACTED]";

/// Logs each request/response pair as JSON lines, with secrets scrubbed.
pub struct TracingBackend {
    inner: Arc<dyn ChatBackend>,
    label: String,
    sink: TraceSink,
}

impl TracingBackend {
    pub fn new(inner: Arc<dyn ChatBackend>, label: impl Into<String>, sink: TraceSink) -> Self {
        Self {
            inner,
            label: label.into(),
            sink,
        }
    }

    fn scrub(&self, mut line: String) -> String {
        for secret in self.inner.secrets() {
            if !secret.is_empty() {
                line = line.replace(&secret, REDACTED);
            }
        }
        line
    }
}

impl ChatBackend for TracingBackend {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        let body = serde_json::to_string(request).unwrap_or_default();
        self.sink.push(self.scrub(format!(
            "[trace] {} request via {}: {}",
            self.label,
            self.inner.describe(),
            body
        )));
        let result = self.inner.complete(request);
        let line = match &result {
            Ok(response) => format!(
                "[trace] {} response: {}",
                self.label,
                serde_json::to_string(response).unwrap_or_default()
            ),
            Err(e) => format!("[trace] {} error: {e}", self.label),
        };
        self.sink.push(self.scrub(line));
        result
    }

    fn describe(&self) -> String {
        self.inner.describe()
    }

    fn secrets(&self) -> Vec<String> {
        self.inner.secrets()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Leaky;

    impl ChatBackend for Leaky {
        fn complete(&self, _: &ModelRequest) -> Result<ModelResponse, BackendError> {
            Ok(ModelResponse::text("echo sk-secret-123"))
        }

        fn secrets(&self) -> Vec<String> {
            vec!["sk-secret-123".into()]
        }
    }

    #[test]
    fn request_validation() {
        assert!(ModelRequest::new(vec![]).validate().is_err());
        assert!(ModelRequest::new(vec![ChatMessage::assistant("x")]).validate().is_err());
        let mut hot = ModelRequest::new(vec![ChatMessage::user("x")]);
        hot.temperature = 0.7;
        assert!(hot.validate().is_err());
        assert!(ModelRequest::new(vec![ChatMessage::system("s"), ChatMessage::user("u")])
            .validate()
            .is_ok());
    }

    #[test]
    fn tracing_scrubs_secrets() {
        let sink = TraceSink::new();
        let traced = TracingBackend::new(Arc::new(Leaky), "planner", sink.clone());
        let request = ModelRequest::new(vec![ChatMessage::user("key is sk-secret-123")]);
        traced.complete(&request).unwrap();
        let lines = sink.lines();
        assert_eq!(lines.len(), 2);
        assert!(lines.iter().all(|l| !l.contains("sk-secret-123")));
        assert!(lines[0].contains(REDACTED));
        assert!(lines[1].starts_with("[trace] planner response"));
    }

    #[test]
    fn request_digest_is_stable() {
        let a = ModelRequest::new(vec![ChatMessage::user("x")]);
        let b = ModelRequest::new(vec![ChatMessage::user("x")]);
        let c = ModelRequest::new(vec![ChatMessage::user("y")]);
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_eq!(a.digest().len(), 16);
    }
}
