//! Strict parsers for planner and coordinator replies. Both are total: any
//! input yields a value or a typed error.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no <tasks> block in planner reply")]
    NoTasksBlock { raw: String },
    #[error("<tasks> block contains no subtasks")]
    EmptyPlan { raw: String },
    #[error("no JSON object with key \"assignee_id\" in coordinator reply")]
    NoAssignee { raw: String },
    #[error("\"assignee_id\" must be a string, found {found}")]
    AssigneeType { found: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerOutput {
    pub raw_text: String,
    pub subtask_descriptions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssigneeDecision {
    pub assignee_id: String,
}

static TAG: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)<\s*(/)?\s*(tasks|task)\s*>").expect("valid regex"));
static NUMBERING: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:\d+\s*[.)]|[-*])\s+").expect("valid regex"));
static NUMBERED_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*\d+\s*[.)]\s+(\S.*)$").expect("valid regex"));
static LOOSE_ASSIGNEE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"["']assignee_id["']\s*:\s*["']([^"'\r\n]+)["']"#).expect("valid regex")
});

#[derive(Debug, Clone, Copy)]
struct Tag {
    start: usize,
    end: usize,
    closing: bool,
    plural: bool,
}

fn tags(text: &str) -> Vec<Tag> {
    TAG.captures_iter(text)
        .map(|c| {
            let whole = c.get(0).expect("group 0 always present");
            Tag {
                start: whole.start(),
                end: whole.end(),
                closing: c.get(1).is_some(),
                plural: c[2].eq_ignore_ascii_case("tasks"),
            }
        })
        .collect()
}

fn clean_item(text: &str) -> Option<String> {
    let trimmed = text.trim();
    let stripped = NUMBERING.replace(trimmed, "");
    let stripped = stripped.trim();
    (!stripped.is_empty()).then(|| stripped.to_string())
}

/// Extracts the subtask descriptions of the first complete `<tasks>` block.
///
/// A block is the innermost `<tasks>` preceding the first `</tasks>`. Items
/// are the `<task>` elements inside it, trimmed and with list numbering
/// removed; a block with no `<task>` elements falls back to numbered lines.
pub fn parse_task_list(text: &str) -> Result<Vec<String>, ParseError> {
    let all = tags(text);
    let mut open: Option<usize> = None;
    let mut block = None;
    for tag in all.iter().filter(|t| t.plural) {
        match (tag.closing, open) {
            (false, _) => open = Some(tag.end),
            (true, Some(start)) => {
                block = Some((start, tag.start));
                break;
            }
            (true, None) => {}
        }
    }
    let Some((start, end)) = block else {
        return Err(ParseError::NoTasksBlock {
            raw: text.to_string(),
        });
    };

    let mut items = Vec::new();
    let mut item_start: Option<usize> = None;
    for tag in all
        .iter()
        .filter(|t| !t.plural && t.start >= start && t.end <= end)
    {
        match (tag.closing, item_start) {
            (false, _) => item_start = Some(tag.end),
            (true, Some(s)) => {
                items.extend(clean_item(&text[s..tag.start]));
                item_start = None;
            }
            (true, None) => {}
        }
    }

    if items.is_empty() {
        items = text[start..end]
            .lines()
            .filter_map(|line| NUMBERED_LINE.captures(line))
            .filter_map(|c| clean_item(&c[1]))
            .collect();
    }
    if items.is_empty() {
        return Err(ParseError::EmptyPlan {
            raw: text.to_string(),
        });
    }
    Ok(items)
}

pub fn parse_planner_output(text: &str) -> Result<PlannerOutput, ParseError> {
    Ok(PlannerOutput {
        raw_text: text.to_string(),
        subtask_descriptions: parse_task_list(text)?,
    })
}

fn describe_json(value: &Value) -> String {
    match value {
        Value::Null => "null".into(),
        Value::Bool(_) => "a boolean".into(),
        Value::Number(n) => format!("the number {n}"),
        Value::String(_) => "a string".into(),
        Value::Array(_) => "an array".into(),
        Value::Object(_) => "an object".into(),
    }
}

/// Finds the first JSON object carrying `"assignee_id"`, fenced or inline,
/// top-level or nested, and returns its value.
pub fn parse_assignee(text: &str) -> Result<AssigneeDecision, ParseError> {
    for (offset, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[offset..]).into_iter::<Value>();
        let Some(Ok(Value::Object(map))) = stream.next() else {
            continue;
        };
        if let Some(value) = map.get("assignee_id") {
            return match value {
                Value::String(id) => Ok(AssigneeDecision {
                    assignee_id: id.trim().to_string(),
                }),
                other => Err(ParseError::AssigneeType {
                    found: describe_json(other),
                }),
            };
        }
    }
    // Python-style dicts and other near-JSON forms
    if let Some(caps) = LOOSE_ASSIGNEE.captures(text) {
        return Ok(AssigneeDecision {
            assignee_id: caps[1].trim().to_string(),
        });
    }
    Err(ParseError::NoAssignee {
        raw: text.to_string(),
    })
}
