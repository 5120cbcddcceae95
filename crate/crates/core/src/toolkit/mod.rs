//! Tool registry and the offline built-in tools exposed to workers.

mod builtin;
mod calc;
pub mod live;
mod sandbox;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

pub use builtin::{
    code_digest, register_offline_suite, ExecutorEntry, ScriptedExecutor, OFFLINE_SUITE,
};
pub use calc::evaluate as evaluate_arithmetic;
pub use sandbox::resolve_within;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

impl ToolSchema {
    pub fn new(name: impl Into<String>, description: impl Into<String>, parameters: Value) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            parameters,
        }
    }

    /// Object schema with string-typed properties, all listed as required.
    pub fn with_string_params(
        name: impl Into<String>,
        description: impl Into<String>,
        params: &[(&str, &str)],
    ) -> Self {
        let mut properties = Map::new();
        for (param, desc) in params {
            properties.insert(
                (*param).to_string(),
                json!({"type": "string", "description": desc}),
            );
        }
        let required: Vec<&str> = params.iter().map(|(p, _)| *p).collect();
        Self::new(
            name,
            description,
            json!({"type": "object", "properties": properties, "required": required}),
        )
    }

    /// Chat-completions `tools` entry.
    pub fn to_openai_json(&self) -> Value {
        json!({
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": self.parameters,
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ToolErrorKind {
    BadArguments,
    Blocked,
    NotFound,
    ExecutionError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub ok: bool,
    pub output: String,
    #[serde(default)]
    pub error_kind: Option<ToolErrorKind>,
}

impl ToolResult {
    pub fn ok(output: impl Into<String>) -> Self {
        Self {
            ok: true,
            output: output.into(),
            error_kind: None,
        }
    }

    pub fn err(kind: ToolErrorKind, output: impl Into<String>) -> Self {
        Self {
            ok: false,
            output: output.into(),
            error_kind: Some(kind),
        }
    }

    /// Observation text fed back to the model.
    pub fn observation(&self) -> String {
        match self.error_kind {
            None => self.output.clone(),
            Some(kind) => format!("ERROR[{kind:?}]: {}", self.output),
        }
    }
}

/// A tool failure the worker cannot recover from; ends the subtask.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{0}")]
pub struct ToolFault(pub String);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ToolRegistryError {
    #[error("tool `{0}` is already registered")]
    Duplicate(String),
    #[error("tool name `{0}` must match [a-z0-9_]+")]
    InvalidName(String),
}

/// Filesystem scope and filtering rules tools run under.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ToolContext {
    pub workspace_dir: PathBuf,
    pub corpus_dir: Option<PathBuf>,
    pub blocklist: Vec<String>,
}

impl ToolContext {
    pub fn new(workspace_dir: impl Into<PathBuf>) -> Self {
        Self {
            workspace_dir: workspace_dir.into(),
            ..Self::default()
        }
    }

    pub fn with_corpus(mut self, dir: impl Into<PathBuf>) -> Self {
        self.corpus_dir = Some(dir.into());
        self
    }

    pub fn with_blocklist(mut self, blocklist: Vec<String>) -> Self {
        self.blocklist = blocklist;
        self
    }

    pub fn is_blocked(&self, source: &str) -> bool {
        let source = source.to_lowercase();
        self.blocklist
            .iter()
            .filter(|b| !b.is_empty())
            .any(|b| source.contains(&b.to_lowercase()))
    }
}

pub type ToolArgs = Map<String, Value>;

pub trait ToolHandler: Send + Sync {
    fn call(&self, args: &ToolArgs, ctx: &ToolContext) -> Result<ToolResult, ToolFault>;
}

impl<F> ToolHandler for F
where
    F: Fn(&ToolArgs, &ToolContext) -> Result<ToolResult, ToolFault> + Send + Sync,
{
    fn call(&self, args: &ToolArgs, ctx: &ToolContext) -> Result<ToolResult, ToolFault> {
        self(args, ctx)
    }
}

struct RegisteredTool {
    schema: ToolSchema,
    handler: Arc<dyn ToolHandler>,
}

/// Name-keyed tool table. Built at startup, then shared read-only.
#[derive(Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, RegisteredTool>,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolRegistry")
            .field("tools", &self.tools.keys().collect::<Vec<_>>())
            .finish()
    }
}

fn valid_tool_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        schema: ToolSchema,
        handler: impl ToolHandler + 'static,
    ) -> Result<(), ToolRegistryError> {
        self.register_shared(schema, Arc::new(handler))
    }

    pub fn register_shared(
        &mut self,
        schema: ToolSchema,
        handler: Arc<dyn ToolHandler>,
    ) -> Result<(), ToolRegistryError> {
        if !valid_tool_name(&schema.name) {
            return Err(ToolRegistryError::InvalidName(schema.name));
        }
        if self.tools.contains_key(&schema.name) {
            return Err(ToolRegistryError::Duplicate(schema.name));
        }
        self.tools
            .insert(schema.name.clone(), RegisteredTool { schema, handler });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    pub fn schema(&self, name: &str) -> Option<&ToolSchema> {
        self.tools.get(name).map(|t| &t.schema)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    /// Every registered schema, in name order.
    pub fn schemas(&self) -> Vec<ToolSchema> {
        self.tools.values().map(|t| t.schema.clone()).collect()
    }

    /// Schemas for `names` in the given order; unknown names are skipped.
    pub fn schemas_for<S: AsRef<str>>(&self, names: &[S]) -> Vec<ToolSchema> {
        names
            .iter()
            .filter_map(|n| self.schema(n.as_ref()).cloned())
            .collect()
    }

    /// Decodes `arguments_text` against the tool's schema and runs it.
    pub fn invoke(
        &self,
        name: &str,
        arguments_text: &str,
        ctx: &ToolContext,
    ) -> Result<ToolResult, ToolFault> {
        let Some(tool) = self.tools.get(name) else {
            return Ok(ToolResult::err(
                ToolErrorKind::NotFound,
                format!("unknown tool `{name}`"),
            ));
        };
        let args = match decode_arguments(&tool.schema, arguments_text) {
            Ok(args) => args,
            Err(msg) => return Ok(ToolResult::err(ToolErrorKind::BadArguments, msg)),
        };
        tool.handler.call(&args, ctx)
    }
}

fn type_matches(expected: &str, value: &Value) -> bool {
    match expected {
        "string" => value.is_string(),
        "number" => value.is_number(),
        "integer" => value.is_i64() || value.is_u64(),
        "boolean" => value.is_boolean(),
        "array" => value.is_array(),
        "object" => value.is_object(),
        "null" => value.is_null(),
        _ => true,
    }
}

fn decode_arguments(schema: &ToolSchema, text: &str) -> Result<ToolArgs, String> {
    let args = if text.trim().is_empty() {
        Map::new()
    } else {
        match serde_json::from_str::<Value>(text) {
            Ok(Value::Object(map)) => map,
            Ok(other) => return Err(format!("arguments must be a JSON object, got {other}")),
            Err(e) => return Err(format!("arguments are not valid JSON: {e}")),
        }
    };
    if let Some(required) = schema.parameters.get("required").and_then(Value::as_array) {
        for param in required.iter().filter_map(Value::as_str) {
            if !args.contains_key(param) {
                return Err(format!("missing required argument `{param}`"));
            }
        }
    }
    if let Some(properties) = schema.parameters.get("properties").and_then(Value::as_object) {
        for (param, value) in &args {
            let expected = properties
                .get(param)
                .and_then(|p| p.get("type"))
                .and_then(Value::as_str);
            if let Some(expected) = expected {
                if !type_matches(expected, value) {
                    return Err(format!("argument `{param}` must be of type {expected}"));
                }
            }
        }
    }
    Ok(args)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn echo(args: &ToolArgs, _: &ToolContext) -> Result<ToolResult, ToolFault> {
        Ok(ToolResult::ok(Value::Object(args.clone()).to_string()))
    }

    #[test]
    fn register_resolve_and_duplicates() {
        let mut registry = ToolRegistry::new();
        registry
            .register(ToolSchema::with_string_params("calc", "math", &[("expression", "")]), echo)
            .unwrap();
        assert!(registry.contains("calc"));
        let err = registry
            .register(ToolSchema::with_string_params("calc", "again", &[]), echo)
            .unwrap_err();
        assert_eq!(err, ToolRegistryError::Duplicate("calc".into()));
        let err = registry
            .register(ToolSchema::with_string_params("Bad-Name", "", &[]), echo)
            .unwrap_err();
        assert!(matches!(err, ToolRegistryError::InvalidName(_)));
    }

    #[test]
    fn exports_one_schema_per_tool() {
        let mut registry = ToolRegistry::new();
        registry
            .register(ToolSchema::with_string_params("calc", "math", &[]), echo)
            .unwrap();
        registry
            .register(ToolSchema::with_string_params("read_file", "io", &[]), echo)
            .unwrap();
        let exported: Vec<Value> = registry.schemas().iter().map(ToolSchema::to_openai_json).collect();
        assert_eq!(exported.len(), 2);
        assert_eq!(exported[0]["type"], "function");
        assert_eq!(exported[0]["function"]["name"], "calc");
    }

    #[test]
    fn argument_decoding_errors() {
        let mut registry = ToolRegistry::new();
        registry
            .register(ToolSchema::with_string_params("t", "", &[("x", "")]), echo)
            .unwrap();
        let ctx = ToolContext::default();
        let missing = registry.invoke("t", "{}", &ctx).unwrap();
        assert_eq!(missing.error_kind, Some(ToolErrorKind::BadArguments));
        let wrong_type = registry.invoke("t", r#"{"x": 3}"#, &ctx).unwrap();
        assert_eq!(wrong_type.error_kind, Some(ToolErrorKind::BadArguments));
        let not_json = registry.invoke("t", "x=3", &ctx).unwrap();
        assert_eq!(not_json.error_kind, Some(ToolErrorKind::BadArguments));
        let ok = registry.invoke("t", r#"{"x": "3"}"#, &ctx).unwrap();
        assert!(ok.ok);
        let unknown = registry.invoke("nope", "{}", &ctx).unwrap();
        assert_eq!(unknown.error_kind, Some(ToolErrorKind::NotFound));
    }

    #[test]
    fn builtins_through_registry() {
        let dir = tempfile::tempdir().unwrap();
        let workspace = dir.path().join("ws");
        let corpus = dir.path().join("corpus");
        fs::create_dir_all(&workspace).unwrap();
        fs::create_dir_all(&corpus).unwrap();
        fs::write(
            corpus.join("leak.txt"),
            "source: https://huggingface.co/datasets/gaia\nthe answer is 17 applicants",
        )
        .unwrap();
        fs::write(
            corpus.join("wiki.txt"),
            "source: https://en.wikipedia.org/wiki/Applicant\napplicants and job qualifications",
        )
        .unwrap();

        let mut registry = ToolRegistry::new();
        register_offline_suite(&mut registry, ScriptedExecutor::default()).unwrap();
        let ctx = ToolContext::new(&workspace)
            .with_corpus(&corpus)
            .with_blocklist(vec!["huggingface".into()]);

        let calc = registry.invoke("calc", r#"{"expression": "2*(3+4)"}"#, &ctx).unwrap();
        assert_eq!(calc, ToolResult::ok("14"));

        let hits = registry
            .invoke("search_local_corpus", r#"{"query": "applicants"}"#, &ctx)
            .unwrap();
        assert!(hits.ok);
        assert!(hits.output.contains("wiki.txt"));
        assert!(!hits.output.contains("leak.txt"));
        assert!(!hits.output.contains("huggingface"));

        let missing = registry
            .invoke("read_local_document", r#"{"path": "nope.txt"}"#, &ctx)
            .unwrap();
        assert_eq!(missing.error_kind, Some(ToolErrorKind::NotFound));
    }
}
