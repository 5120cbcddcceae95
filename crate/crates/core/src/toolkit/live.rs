//! Adapter interfaces for live tools (web search, browser simulation,
//! multimodal question answering). No implementations ship here; plug one in
//! with the `*_tool` constructors and register it in place of the offline
//! stand-in.

use std::sync::Arc;

use serde_json::Value;

use super::{ToolArgs, ToolContext, ToolErrorKind, ToolFault, ToolHandler, ToolResult};
use crate::backend::ChatBackend;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchHit {
    pub url: String,
    pub title: String,
    pub snippet: String,
}

pub trait WebSearchAdapter: Send + Sync {
    fn search(&self, query: &str) -> Result<Vec<SearchHit>, ToolFault>;
}

/// The two model slots a browser simulation uses: one observes and acts on
/// the page, the other plans navigation.
#[derive(Clone)]
pub struct BrowserModels {
    pub action: Arc<dyn ChatBackend>,
    pub planning: Arc<dyn ChatBackend>,
}

pub trait BrowserAdapter: Send + Sync {
    fn browse(&self, url: &str, task: &str, models: &BrowserModels) -> Result<String, ToolFault>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Image,
    Audio,
    Video,
}

pub trait MultimodalAdapter: Send + Sync {
    fn ask(&self, modality: Modality, location: &str, question: &str) -> Result<String, ToolFault>;
}

fn arg<'a>(args: &'a ToolArgs, keys: &[&str]) -> Option<&'a str> {
    keys.iter().find_map(|k| args.get(*k).and_then(Value::as_str))
}

/// Wraps a search adapter as a tool. Hits whose URL matches the blocklist
/// are dropped before the model sees them.
pub fn web_search_tool(adapter: Arc<dyn WebSearchAdapter>) -> impl ToolHandler {
    move |args: &ToolArgs, ctx: &ToolContext| {
        let Some(query) = arg(args, &["query", "question"]) else {
            return Ok(ToolResult::err(ToolErrorKind::BadArguments, "missing query"));
        };
        let hits: Vec<SearchHit> = adapter
            .search(query)?
            .into_iter()
            .filter(|h| !ctx.is_blocked(&h.url))
            .collect();
        if hits.is_empty() {
            return Ok(ToolResult::ok("No results."));
        }
        let text = hits
            .iter()
            .enumerate()
            .map(|(i, h)| format!("{}. {}\n   URL: {}\n   {}", i + 1, h.title, h.url, h.snippet))
            .collect::<Vec<_>>()
            .join("\n");
        Ok(ToolResult::ok(text))
    }
}

pub fn browser_tool(adapter: Arc<dyn BrowserAdapter>, models: BrowserModels) -> impl ToolHandler {
    move |args: &ToolArgs, ctx: &ToolContext| {
        let (Some(url), Some(task)) = (arg(args, &["url"]), arg(args, &["task"])) else {
            return Ok(ToolResult::err(ToolErrorKind::BadArguments, "need `url` and `task`"));
        };
        if ctx.is_blocked(url) {
            return Ok(ToolResult::err(ToolErrorKind::Blocked, format!("{url} is blocked")));
        }
        adapter.browse(url, task, &models).map(ToolResult::ok)
    }
}

pub fn multimodal_tool(adapter: Arc<dyn MultimodalAdapter>, modality: Modality) -> impl ToolHandler {
    move |args: &ToolArgs, ctx: &ToolContext| {
        let (Some(location), Some(question)) = (arg(args, &["path", "url"]), arg(args, &["question"]))
        else {
            return Ok(ToolResult::err(ToolErrorKind::BadArguments, "need `path` and `question`"));
        };
        if ctx.is_blocked(location) {
            return Ok(ToolResult::err(ToolErrorKind::Blocked, format!("{location} is blocked")));
        }
        adapter.ask(modality, location, question).map(ToolResult::ok)
    }
}
