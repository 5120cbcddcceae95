//! Offline built-in tools plus stand-ins registered under the names the
//! worker registry advertises for live tools.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::calc::{self, CalcError};
use super::sandbox::resolve_within;
use super::{
    ToolArgs, ToolContext, ToolErrorKind, ToolFault, ToolHandler, ToolRegistry,
    ToolRegistryError, ToolResult, ToolSchema,
};

/// Names registered by [`register_offline_suite`].
pub const OFFLINE_SUITE: &[&str] = &[
    "calc",
    "read_local_document",
    "search_local_corpus",
    "execute_code",
    "extract_document_content",
    "extract_excel_content",
    "web_search",
    "search_google",
    "search_wiki",
    "search_wiki_revisions",
    "search_archived_webpage",
    "browse_url",
    "ask_question_about_image",
    "ask_question_about_audio",
    "ask_question_about_video",
];

const DEFAULT_MAX_RESULTS: usize = 5;
const SNIPPET_CHARS: usize = 300;

fn string_arg<'a>(args: &'a ToolArgs, keys: &[&str]) -> Option<&'a str> {
    keys.iter().find_map(|k| args.get(*k).and_then(Value::as_str))
}

fn calc_tool(args: &ToolArgs, _: &ToolContext) -> Result<ToolResult, ToolFault> {
    let expression = string_arg(args, &["expression"]).unwrap_or_default();
    Ok(match calc::evaluate(expression) {
        Ok(v) => ToolResult::ok(calc::format_number(v)),
        Err(CalcError::Syntax(m)) => ToolResult::err(ToolErrorKind::BadArguments, m),
        Err(CalcError::Math(m)) => ToolResult::err(ToolErrorKind::ExecutionError, m),
    })
}

fn read_document(path: &Path) -> ToolResult {
    let is_csv = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let mut reader = match csv::ReaderBuilder::new().has_headers(false).from_path(path) {
            Ok(r) => r,
            Err(e) => return ToolResult::err(ToolErrorKind::ExecutionError, e.to_string()),
        };
        let mut lines = Vec::new();
        for record in reader.records() {
            match record {
                Ok(r) => lines.push(r.iter().collect::<Vec<_>>().join(" | ")),
                Err(e) => return ToolResult::err(ToolErrorKind::ExecutionError, e.to_string()),
            }
        }
        return ToolResult::ok(lines.join("\n"));
    }
    match fs::read(path) {
        Ok(bytes) => match String::from_utf8(bytes) {
            Ok(text) => ToolResult::ok(text),
            Err(_) => ToolResult::err(
                ToolErrorKind::ExecutionError,
                format!("{} is not a UTF-8 text document", path.display()),
            ),
        },
        Err(e) => ToolResult::err(ToolErrorKind::ExecutionError, e.to_string()),
    }
}

fn read_document_tool(args: &ToolArgs, ctx: &ToolContext) -> Result<ToolResult, ToolFault> {
    let Some(requested) = string_arg(args, &["path", "document_path"]) else {
        return Ok(ToolResult::err(
            ToolErrorKind::BadArguments,
            "missing argument `path`",
        ));
    };
    Ok(match resolve_within(&ctx.workspace_dir, requested) {
        Ok(path) if path.is_file() => read_document(&path),
        Ok(_) => ToolResult::err(ToolErrorKind::NotFound, format!("{requested} is not a file")),
        Err(result) => result,
    })
}

struct CorpusDoc {
    relative: String,
    source: Option<String>,
    body: String,
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        // symlinks are not followed, so the walk cannot leave the corpus
        let file_type = entry.file_type()?;
        if file_type.is_dir() {
            collect_files(&path, out)?;
        } else if file_type.is_file() {
            out.push(path);
        }
    }
    Ok(())
}

fn load_corpus(root: &Path) -> std::io::Result<Vec<CorpusDoc>> {
    let mut files = Vec::new();
    collect_files(root, &mut files)?;
    let mut docs = Vec::new();
    for path in files {
        let Ok(text) = fs::read_to_string(&path) else {
            continue;
        };
        let (source, body) = match text.split_once('\n') {
            Some((first, rest)) if first.to_lowercase().starts_with("source:") => {
                (Some(first["source:".len()..].trim().to_string()), rest.to_string())
            }
            None if text.to_lowercase().starts_with("source:") => {
                (Some(text["source:".len()..].trim().to_string()), String::new())
            }
            _ => (None, text),
        };
        let relative = path
            .strip_prefix(root)
            .unwrap_or(&path)
            .to_string_lossy()
            .replace('\\', "/");
        docs.push(CorpusDoc {
            relative,
            source,
            body,
        });
    }
    Ok(docs)
}

fn terms(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn snippet(body: &str) -> String {
    let flat = body.split_whitespace().collect::<Vec<_>>().join(" ");
    if flat.chars().count() <= SNIPPET_CHARS {
        flat
    } else {
        let cut: String = flat.chars().take(SNIPPET_CHARS).collect();
        format!("{cut}...")
    }
}

fn search_corpus(query: &str, max_results: usize, ctx: &ToolContext) -> ToolResult {
    let Some(corpus) = &ctx.corpus_dir else {
        return ToolResult::err(ToolErrorKind::ExecutionError, "no corpus directory configured");
    };
    let docs = match load_corpus(corpus) {
        Ok(d) => d,
        Err(e) => {
            return ToolResult::err(
                ToolErrorKind::ExecutionError,
                format!("corpus {} unreadable: {e}", corpus.display()),
            )
        }
    };
    let query_terms = terms(query);
    if query_terms.is_empty() {
        return ToolResult::err(ToolErrorKind::BadArguments, "query has no searchable terms");
    }

    let mut scored: Vec<(usize, &CorpusDoc)> = docs
        .iter()
        .filter(|d| !d.source.as_deref().is_some_and(|s| ctx.is_blocked(s)))
        .filter_map(|d| {
            let doc_terms = terms(&d.body);
            let score: usize = query_terms
                .iter()
                .map(|q| doc_terms.iter().filter(|t| *t == q).count())
                .sum();
            (score > 0).then_some((score, d))
        })
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.relative.cmp(&b.1.relative)));

    if scored.is_empty() {
        return ToolResult::ok("No matching documents found.");
    }
    let blocks: Vec<String> = scored
        .iter()
        .take(max_results.max(1))
        .enumerate()
        .map(|(i, (_, doc))| {
            let source = doc.source.as_deref().unwrap_or("local");
            format!("[{}] {} (source: {})\n{}", i + 1, doc.relative, source, snippet(&doc.body))
        })
        .collect();
    ToolResult::ok(blocks.join("\n\n"))
}

fn search_tool(query_keys: &'static [&'static str]) -> impl ToolHandler {
    move |args: &ToolArgs, ctx: &ToolContext| {
        let Some(query) = string_arg(args, query_keys) else {
            return Ok(ToolResult::err(ToolErrorKind::BadArguments, "missing query"));
        };
        let max_results = args
            .get("max_results")
            .and_then(Value::as_u64)
            .map(|n| n as usize)
            .unwrap_or(DEFAULT_MAX_RESULTS);
        Ok(search_corpus(query, max_results, ctx))
    }
}

fn unavailable(name: &'static str) -> impl ToolHandler {
    move |_: &ToolArgs, _: &ToolContext| {
        Ok(ToolResult::err(
            ToolErrorKind::ExecutionError,
            format!("`{name}` needs a live adapter, which is not configured in offline mode"),
        ))
    }
}

/// Lowercase hex SHA-256 of the exact code text.
pub fn code_digest(code: &str) -> String {
    hex::encode(Sha256::digest(code.as_bytes()))
}

/// One canned execution: keyed by the code text itself or by its digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutorEntry {
    #[serde(default)]
    pub code: Option<String>,
    #[serde(default)]
    pub digest: Option<String>,
    pub output: String,
}

/// Stand-in for code execution: maps code digests to canned outputs. Nothing
/// is ever executed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScriptedExecutor {
    outputs: BTreeMap<String, String>,
}

impl ScriptedExecutor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_output(mut self, code: &str, output: impl Into<String>) -> Self {
        self.outputs.insert(code_digest(code), output.into());
        self
    }

    pub fn from_entries(entries: impl IntoIterator<Item = ExecutorEntry>) -> Result<Self, String> {
        let mut executor = Self::new();
        for entry in entries {
            let digest = match (entry.code, entry.digest) {
                (Some(code), _) => code_digest(&code),
                (None, Some(d)) => d.to_lowercase(),
                (None, None) => return Err("executor entry needs `code` or `digest`".into()),
            };
            executor.outputs.insert(digest, entry.output);
        }
        Ok(executor)
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn run(&self, code: &str) -> ToolResult {
        let digest = code_digest(code);
        match self.outputs.get(&digest) {
            Some(output) => ToolResult::ok(output.clone()),
            None => ToolResult::err(
                ToolErrorKind::ExecutionError,
                format!("no canned output registered for code digest {digest}"),
            ),
        }
    }
}

impl ToolHandler for ScriptedExecutor {
    fn call(&self, args: &ToolArgs, _: &ToolContext) -> Result<ToolResult, ToolFault> {
        Ok(match string_arg(args, &["code"]) {
            Some(code) => self.run(code),
            None => ToolResult::err(ToolErrorKind::BadArguments, "missing argument `code`"),
        })
    }
}

/// Registers every tool in [`OFFLINE_SUITE`].
pub fn register_offline_suite(
    registry: &mut ToolRegistry,
    executor: ScriptedExecutor,
) -> Result<(), ToolRegistryError> {
    registry.register(
        ToolSchema::with_string_params(
            "calc",
            "Evaluate an arithmetic expression (+ - * / % ^ and parentheses).",
            &[("expression", "The arithmetic expression to evaluate.")],
        ),
        calc_tool,
    )?;
    registry.register(
        ToolSchema::with_string_params(
            "read_local_document",
            "Read a plain-text or CSV document from the workspace.",
            &[("path", "Path relative to the workspace directory.")],
        ),
        read_document_tool,
    )?;
    let search_params = serde_json::json!({
        "type": "object",
        "properties": {
            "query": {"type": "string", "description": "Keywords to search for."},
            "max_results": {"type": "integer", "description": "Maximum number of hits."}
        },
        "required": ["query"]
    });
    registry.register(
        ToolSchema::new(
            "search_local_corpus",
            "Keyword search over the local document corpus.",
            search_params.clone(),
        ),
        search_tool(&["query"]),
    )?;
    registry.register(
        ToolSchema::with_string_params(
            "execute_code",
            "Execute a code snippet and return its output.",
            &[("code", "The code to execute.")],
        ),
        executor,
    )?;

    let document_schema = |name: &str, what: &str| {
        ToolSchema::new(
            name,
            format!("Extract the content of a {what} in the workspace."),
            serde_json::json!({
                "type": "object",
                "properties": {
                    "document_path": {"type": "string", "description": "Path to the document."},
                    "query": {"type": "string", "description": "What to look for."}
                },
                "required": ["document_path"]
            }),
        )
    };
    let reader: Arc<dyn ToolHandler> = Arc::new(read_document_tool);
    registry.register_shared(document_schema("extract_document_content", "document"), reader.clone())?;
    registry.register_shared(document_schema("extract_excel_content", "spreadsheet"), reader)?;

    registry.register(
        ToolSchema::with_string_params(
            "web_search",
            "Search for information (offline: searches the local corpus).",
            &[("question", "The search question.")],
        ),
        search_tool(&["question", "query"]),
    )?;
    for name in [
        "search_google",
        "search_wiki",
        "search_wiki_revisions",
        "search_archived_webpage",
    ] {
        registry.register(
            ToolSchema::new(
                name,
                "Search for information (offline: searches the local corpus).",
                search_params.clone(),
            ),
            search_tool(&["query", "question"]),
        )?;
    }

    registry.register(
        ToolSchema::with_string_params(
            "browse_url",
            "Simulate browser interaction with a web page.",
            &[("url", "Start URL."), ("task", "What to accomplish on the page.")],
        ),
        unavailable("browse_url"),
    )?;
    for (name, what) in [
        ("ask_question_about_image", "image"),
        ("ask_question_about_audio", "audio"),
        ("ask_question_about_video", "video"),
    ] {
        registry.register(
            ToolSchema::with_string_params(
                name,
                format!("Answer a question about a local or remote {what} file."),
                &[("path", "Location of the media."), ("question", "The question.")],
            ),
            unavailable(name),
        )?;
    }
    Ok(())
}
