use std::fmt;
use std::path::Path;
use std::sync::Mutex;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::Value;

use super::{BackendError, ChatBackend, ModelRequest, ModelResponse, ToolCall};

/// Which requests an entry answers. Empty matcher matches everything; when
/// several fields are set all must hold.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matcher {
    /// Must occur somewhere in the request text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substring: Option<String>,
    /// Zero-based ordinal of the call to this backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<u64>,
    /// Rollout the backend was built for; lets one script give repeated
    /// runs of the same task different replies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollout: Option<u32>,
}

impl Matcher {
    fn fits(&self, request_text: &str, call_index: u64, rollout: u32) -> bool {
        self.index.is_none_or(|i| i == call_index)
            && self.rollout.is_none_or(|r| r == rollout)
            && self
                .substring
                .as_deref()
                .is_none_or(|s| request_text.contains(s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptToolCall {
    #[serde(default)]
    pub id: Option<String>,
    pub name: String,
    /// A JSON object or an already-encoded JSON string.
    #[serde(default)]
    pub arguments: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reply {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_calls: Option<Vec<ScriptToolCall>>,
}

impl Reply {
    pub fn content(text: impl Into<String>) -> Self {
        Self {
            content: Some(text.into()),
            tool_calls: None,
        }
    }

    pub fn tool_call(name: impl Into<String>, arguments: Value) -> Self {
        Self {
            content: None,
            tool_calls: Some(vec![ScriptToolCall {
                id: None,
                name: name.into(),
                arguments,
            }]),
        }
    }

    fn validate(&self) -> Result<(), String> {
        match (&self.content, &self.tool_calls) {
            (Some(_), None) => Ok(()),
            (None, Some(calls)) if !calls.is_empty() => Ok(()),
            (None, Some(_)) => Err("reply.tool_calls is empty".into()),
            _ => Err("reply needs exactly one of `content` or `tool_calls`".into()),
        }
    }

    fn to_response(&self, call_index: u64) -> ModelResponse {
        match &self.tool_calls {
            Some(calls) => ModelResponse::calls(
                calls
                    .iter()
                    .enumerate()
                    .map(|(i, c)| ToolCall {
                        call_id: c
                            .id
                            .clone()
                            .unwrap_or_else(|| format!("call_{call_index}_{i}")),
                        tool_name: c.name.clone(),
                        arguments: match &c.arguments {
                            Value::String(s) => s.clone(),
                            Value::Null => "{}".to_string(),
                            other => other.to_string(),
                        },
                    })
                    .collect(),
            ),
            None => ModelResponse::text(self.content.clone().unwrap_or_default()),
        }
    }
}

/// How many times an entry may answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Uses {
    Times(u32),
    Unlimited,
}

impl Default for Uses {
    fn default() -> Self {
        Uses::Times(1)
    }
}

impl Serialize for Uses {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Uses::Times(n) => serializer.serialize_u32(*n),
            Uses::Unlimited => serializer.serialize_str("unlimited"),
        }
    }
}

impl<'de> Deserialize<'de> for Uses {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct UsesVisitor;

        impl Visitor<'_> for UsesVisitor {
            type Value = Uses;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a non-negative integer or \"unlimited\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Uses, E> {
                u32::try_from(v).map(Uses::Times).map_err(E::custom)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Uses, E> {
                u32::try_from(v).map(Uses::Times).map_err(E::custom)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Uses, E> {
                if v == "unlimited" {
                    Ok(Uses::Unlimited)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }

        deserializer.deserialize_any(UsesVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    #[serde(rename = "match", default)]
    pub matcher: Matcher,
    pub reply: Reply,
    #[serde(default)]
    pub uses: Uses,
}

impl ScriptEntry {
    pub fn new(matcher: Matcher, reply: Reply) -> Self {
        Self {
            matcher,
            reply,
            uses: Uses::default(),
        }
    }

    pub fn on_substring(substring: impl Into<String>, reply: Reply) -> Self {
        Self::new(
            Matcher {
                substring: Some(substring.into()),
                ..Matcher::default()
            },
            reply,
        )
    }

    pub fn on_index(index: u64, reply: Reply) -> Self {
        Self::new(
            Matcher {
                index: Some(index),
                ..Matcher::default()
            },
            reply,
        )
    }

    pub fn any(reply: Reply) -> Self {
        Self::new(Matcher::default(), reply)
    }

    pub fn unlimited(mut self) -> Self {
        self.uses = Uses::Unlimited;
        self
    }

    pub fn times(mut self, n: u32) -> Self {
        self.uses = Uses::Times(n);
        self
    }
}

#[derive(Debug)]
struct Cursor {
    calls: u64,
    remaining: Vec<Uses>,
}

/// Replays a script: each request gets the first entry, in script order,
/// that still has uses left and whose matcher fits.
#[derive(Debug)]
pub struct ScriptedBackend {
    name: String,
    entries: Vec<ScriptEntry>,
    rollout: u32,
    cursor: Mutex<Cursor>,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Result<Self, BackendError> {
        for (i, entry) in entries.iter().enumerate() {
            entry
                .reply
                .validate()
                .map_err(|e| BackendError::Script(format!("entry {i}: {e}")))?;
        }
        let remaining = entries.iter().map(|e| e.uses).collect();
        Ok(Self {
            name: "scripted".into(),
            entries,
            rollout: 0,
            cursor: Mutex::new(Cursor {
                calls: 0,
                remaining,
            }),
        })
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Selects which `rollout`-matched entries are live (default 0).
    pub fn for_rollout(mut self, rollout: u32) -> Self {
        self.rollout = rollout;
        self
    }

    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let entries: Vec<ScriptEntry> =
            serde_json::from_str(text).map_err(|e| BackendError::Script(e.to_string()))?;
        Self::new(entries)
    }

    pub fn from_path(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        Ok(Self::from_json(&text)
            .map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?
            .named(format!("scripted:{}", path.display())))
    }

    /// Text replies always, handy for single-purpose stubs.
    pub fn always(text: impl Into<String>) -> Self {
        Self::new(vec![ScriptEntry::any(Reply::content(text)).unlimited()])
            .expect("content reply is valid")
    }

    pub fn entries(&self) -> &[ScriptEntry] {
        &self.entries
    }

    /// Number of `complete` calls served or rejected so far.
    pub fn calls(&self) -> u64 {
        self.cursor.lock().expect("script cursor poisoned").calls
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        request.validate()?;
        let text = request.full_text();
        let mut cursor = self.cursor.lock().expect("script cursor poisoned");
        let call_index = cursor.calls;
        cursor.calls += 1;
        for (i, entry) in self.entries.iter().enumerate() {
            let available = match cursor.remaining[i] {
                Uses::Unlimited => true,
                Uses::Times(n) => n > 0,
            };
            if available && entry.matcher.fits(&text, call_index, self.rollout) {
                if let Uses::Times(n) = &mut cursor.remaining[i] {
                    *n -= 1;
                }
                return Ok(entry.reply.to_response(call_index));
            }
        }
        let preview: String = request.last_content().chars().take(120).collect();
        Err(BackendError::ScriptExhausted {
            digest: request.digest(),
            preview,
        })
    }

    fn describe(&self) -> String {
        self.name.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ChatMessage, FinishKind};
    use serde_json::json;

    fn ask(text: &str) -> ModelRequest {
        ModelRequest::new(vec![ChatMessage::user(text)])
    }

    #[test]
    fn rollout_entries_only_fire_for_their_rollout() {
        let script = r#"[
            {"match": {"rollout": 1}, "reply": {"content": "second"}, "uses": "unlimited"},
            {"reply": {"content": "default"}, "uses": "unlimited"}
        ]"#;
        let first = ScriptedBackend::from_json(script).unwrap();
        let second = ScriptedBackend::from_json(script).unwrap().for_rollout(1);
        assert_eq!(first.complete(&ask("q")).unwrap().content.as_deref(), Some("default"));
        assert_eq!(second.complete(&ask("q")).unwrap().content.as_deref(), Some("second"));
    }

    #[test]
    fn substring_entry_echoes_reply() {
        let backend = ScriptedBackend::from_json(
            r#"[{"match": {"substring": "decompose"}, "reply": {"content": "<tasks><task>A</task></tasks>"}}]"#,
        )
        .unwrap();
        let response = backend.complete(&ask("please decompose this")).unwrap();
        assert_eq!(response.content.as_deref(), Some("<tasks><task>A</task></tasks>"));
        assert_eq!(response.finish_kind, FinishKind::Text);
    }

    #[test]
    fn single_use_entry_exhausts() {
        let backend = ScriptedBackend::new(vec![ScriptEntry::on_substring(
            "decompose",
            Reply::content("x"),
        )])
        .unwrap();
        backend.complete(&ask("decompose")).unwrap();
        let err = backend.complete(&ask("decompose")).unwrap_err();
        let BackendError::ScriptExhausted { digest, preview } = err else {
            panic!("expected exhaustion");
        };
        assert_eq!(digest, ask("decompose").digest());
        assert_eq!(preview, "decompose");
        assert_eq!(backend.calls(), 2);
    }

    #[test]
    fn index_matchers_and_uses() {
        let backend = ScriptedBackend::from_json(
            r#"[
                {"match": {"index": 1}, "reply": {"content": "second"}},
                {"reply": {"content": "fallback"}, "uses": "unlimited"}
            ]"#,
        )
        .unwrap();
        let replies: Vec<String> = (0..4)
            .map(|_| backend.complete(&ask("q")).unwrap().content.unwrap())
            .collect();
        assert_eq!(replies, ["fallback", "second", "fallback", "fallback"]);

        let twice = ScriptedBackend::new(vec![ScriptEntry::any(Reply::content("t")).times(2)]).unwrap();
        assert!(twice.complete(&ask("a")).is_ok());
        assert!(twice.complete(&ask("a")).is_ok());
        assert!(twice.complete(&ask("a")).is_err());
    }

    #[test]
    fn tool_call_replies() {
        let backend = ScriptedBackend::new(vec![
            ScriptEntry::any(Reply::tool_call("calc", json!({"expression": "2+2"}))),
            ScriptEntry::any(Reply {
                content: None,
                tool_calls: Some(vec![ScriptToolCall {
                    id: Some("toolu_1".into()),
                    name: "execute_code".into(),
                    arguments: json!("{\"code\": \"x\"}"),
                }]),
            }),
        ])
        .unwrap();
        let first = backend.complete(&ask("a")).unwrap();
        assert_eq!(first.finish_kind, FinishKind::ToolCalls);
        assert_eq!(first.tool_calls[0].call_id, "call_0_0");
        assert_eq!(first.tool_calls[0].arguments, r#"{"expression":"2+2"}"#);
        let second = backend.complete(&ask("a")).unwrap();
        assert_eq!(second.tool_calls[0].call_id, "toolu_1");
        assert_eq!(second.tool_calls[0].arguments, "{\"code\": \"x\"}");
    }

    #[test]
    fn malformed_scripts_are_rejected() {
        for bad in [
            r#"[{"reply": {}}]"#,
            r#"[{"reply": {"content": "a", "tool_calls": [{"name": "x"}]}}]"#,
            r#"[{"reply": {"content": "a"}, "uses": "forever"}]"#,
            r#"[{"match": {"regex": "a"}, "reply": {"content": "a"}}]"#,
            r#"{"reply": {"content": "a"}}"#,
        ] {
            assert!(ScriptedBackend::from_json(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn identical_sequences_are_deterministic() {
        let script = r#"[
            {"match": {"substring": "a"}, "reply": {"content": "A"}, "uses": 2},
            {"reply": {"tool_calls": [{"name": "calc", "arguments": {"expression": "1"}}]}, "uses": "unlimited"}
        ]"#;
        let run = || {
            let backend = ScriptedBackend::from_json(script).unwrap();
            ["a", "b", "a", "a", "c"]
                .iter()
                .map(|q| serde_json::to_string(&backend.complete(&ask(q)).unwrap()).unwrap())
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(run(), run());
    }
}
