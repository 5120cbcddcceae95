use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::prompts::{or_none, render, PromptTemplates};
use crate::backend::{BackendError, ChatBackend, ChatMessage, ModelRequest};
use crate::channel::DependencyContext;
use crate::model::{Outcome, RunConfig, Subtask, SubtaskResult, TaskSpec, WorkerDescriptor};
use crate::toolkit::{ToolContext, ToolErrorKind, ToolRegistry, ToolResult};

/// First-line marker a worker uses to report that its subtask failed.
pub const FAILURE_SENTINEL: &str = "TASK_FAILED:";
pub const STEP_BUDGET_EXCEEDED: &str = "step budget exceeded";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TurnKind {
    ToolCall,
    FinalResult,
    SelfReportedFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerTurn {
    /// One-based index of the backend call that produced this turn.
    pub step_index: u32,
    pub kind: TurnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arguments: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
}

/// Everything a worker did for one subtask.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerOutcome {
    pub result: SubtaskResult,
    pub failure_reason: Option<String>,
    pub turns: Vec<WorkerTurn>,
    /// The conversation as last sent to the backend, plus the final reply.
    pub messages: Vec<ChatMessage>,
    /// Set when the subtask ended because the backend itself failed.
    pub transport_error: Option<BackendError>,
}

/// Splits a final reply into `Some(reason)` when it carries the failure
/// sentinel on its first non-blank line.
pub fn split_failure_sentinel(content: &str) -> Option<String> {
    let text = content.trim_start();
    let rest = text.strip_prefix(FAILURE_SENTINEL)?;
    let (first, remainder) = rest.split_once('\n').unwrap_or((rest, ""));
    let reason = if first.trim().is_empty() {
        remainder.trim()
    } else {
        first.trim()
    };
    Some(if reason.is_empty() {
        "no reason given".to_string()
    } else {
        reason.to_string()
    })
}

pub struct Worker {
    descriptor: WorkerDescriptor,
    backend: Arc<dyn ChatBackend>,
    tools: Arc<ToolRegistry>,
    templates: Arc<PromptTemplates>,
}

impl Worker {
    pub fn new(
        descriptor: WorkerDescriptor,
        backend: Arc<dyn ChatBackend>,
        tools: Arc<ToolRegistry>,
        templates: Arc<PromptTemplates>,
    ) -> Self {
        Self {
            descriptor,
            backend,
            tools,
            templates,
        }
    }

    pub fn descriptor(&self) -> &WorkerDescriptor {
        &self.descriptor
    }

    pub fn system_prompt(&self) -> String {
        let base = self
            .descriptor
            .system_prompt
            .as_deref()
            .unwrap_or(&self.descriptor.description);
        format!("{}\n\n{}", base.trim_end(), self.templates.worker_self_assessment)
    }

    pub fn prompt(&self, task: &TaskSpec, subtask: &Subtask, ctx: &DependencyContext) -> String {
        render(
            &self.templates.worker,
            &[
                ("task", subtask.description.as_str()),
                ("overall_task", &task.rendered_content()),
                ("dependency_results", &ctx.render()),
                ("additional_info", or_none(task.additional_info.as_deref())),
            ],
        )
    }

    fn invoke(&self, name: &str, arguments: &str, tool_ctx: &ToolContext) -> Result<ToolResult, String> {
        if !self.descriptor.tool_names.iter().any(|t| t == name) {
            return Ok(ToolResult::err(
                ToolErrorKind::NotFound,
                format!("tool `{name}` is not available to this worker"),
            ));
        }
        self.tools
            .invoke(name, arguments, tool_ctx)
            .map_err(|fault| format!("tool `{name}` failed: {fault}"))
    }

    /// Runs the tool-calling loop for `subtask`. Every backend call is one
    /// step; at most `cfg.max_steps_per_subtask` steps are taken.
    pub fn process_task(
        &self,
        task: &TaskSpec,
        subtask: &Subtask,
        ctx: &DependencyContext,
        cfg: &RunConfig,
        tool_ctx: &ToolContext,
    ) -> WorkerOutcome {
        let schemas = self.tools.schemas_for(&self.descriptor.tool_names);
        let mut messages = vec![
            ChatMessage::system(self.system_prompt()),
            ChatMessage::user(self.prompt(task, subtask, ctx)),
        ];
        let mut turns = Vec::new();
        let max_steps = cfg.max_steps_per_subtask.max(1);

        let finish = |messages: Vec<ChatMessage>,
                      turns: Vec<WorkerTurn>,
                      steps: u32,
                      outcome: Result<String, String>,
                      transport_error: Option<BackendError>| {
            let (outcome, text, failure_reason) = match outcome {
                Ok(text) => (Outcome::Success, text, None),
                Err(reason) => (Outcome::Failure, reason.clone(), Some(reason)),
            };
            WorkerOutcome {
                result: SubtaskResult {
                    subtask_id: subtask.subtask_id.clone(),
                    outcome,
                    result_text: text,
                    steps_used: steps,
                },
                failure_reason,
                turns,
                messages,
                transport_error,
            }
        };

        for step in 1..=max_steps {
            let mut request = ModelRequest::new(messages.clone());
            if !schemas.is_empty() {
                request = request.with_tools(schemas.clone());
            }
            let response = match self.backend.complete(&request) {
                Ok(response) => response,
                Err(err) => {
                    let reason = format!("backend error: {err}");
                    return finish(messages, turns, step, Err(reason), Some(err));
                }
            };

            if response.tool_calls.is_empty() {
                let content = response.content_or_empty().to_string();
                messages.push(ChatMessage::assistant(content.clone()));
                let (kind, outcome) = match split_failure_sentinel(&content) {
                    Some(reason) => (TurnKind::SelfReportedFailure, Err(reason)),
                    None if content.trim().is_empty() => (
                        TurnKind::SelfReportedFailure,
                        Err("worker returned an empty reply".to_string()),
                    ),
                    None => (TurnKind::FinalResult, Ok(content.clone())),
                };
                turns.push(WorkerTurn {
                    step_index: step,
                    kind,
                    tool_name: None,
                    arguments: None,
                    observation: None,
                    content: Some(content),
                });
                return finish(messages, turns, step, outcome, None);
            }

            messages.push(ChatMessage::assistant_tool_calls(
                response.content.clone(),
                response.tool_calls.clone(),
            ));
            for call in &response.tool_calls {
                let result = self.invoke(&call.tool_name, &call.arguments, tool_ctx);
                let observation = match &result {
                    Ok(r) => r.observation(),
                    Err(fault) => format!("ERROR[Fault]: {fault}"),
                };
                messages.push(ChatMessage::tool(call.call_id.clone(), observation.clone()));
                turns.push(WorkerTurn {
                    step_index: step,
                    kind: TurnKind::ToolCall,
                    tool_name: Some(call.tool_name.clone()),
                    arguments: Some(call.arguments.clone()),
                    observation: Some(observation),
                    content: None,
                });
                if let Err(fault) = result {
                    return finish(messages, turns, step, Err(fault), None);
                }
            }
        }
        finish(
            messages,
            turns,
            max_steps,
            Err(STEP_BUDGET_EXCEEDED.to_string()),
            None,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Reply, ScriptEntry, ScriptedBackend};
    use crate::toolkit::{register_offline_suite, ScriptedExecutor, ToolFault, ToolSchema};
    use serde_json::json;

    fn tools() -> Arc<ToolRegistry> {
        let mut registry = ToolRegistry::new();
        register_offline_suite(&mut registry, ScriptedExecutor::new()).unwrap();
        registry
            .register(
                ToolSchema::with_string_params("explode", "always faults", &[]),
                |_: &crate::toolkit::ToolArgs, _: &ToolContext| -> Result<ToolResult, ToolFault> {
                    Err(ToolFault("disk on fire".into()))
                },
            )
            .unwrap();
        Arc::new(registry)
    }

    fn worker(entries: Vec<ScriptEntry>, tool_names: &[&str]) -> Worker {
        Worker::new(
            WorkerDescriptor::new("w", "A helpful assistant.", tool_names.iter().copied()),
            Arc::new(ScriptedBackend::new(entries).unwrap()),
            tools(),
            Arc::new(PromptTemplates::default()),
        )
    }

    fn run(worker: &Worker, max_steps: u32) -> WorkerOutcome {
        let cfg = RunConfig {
            max_steps_per_subtask: max_steps,
            ..RunConfig::default()
        };
        worker.process_task(
            &TaskSpec::new("t", "overall"),
            &Subtask::new("p0.s1", "compute"),
            &DependencyContext::default(),
            &cfg,
            &ToolContext::new(std::env::temp_dir()),
        )
    }

    #[test]
    fn two_turn_tool_loop() {
        let w = worker(
            vec![
                ScriptEntry::on_index(0, Reply::tool_call("calc", json!({"expression": "2+2"}))),
                ScriptEntry::on_substring("\"4\"", Reply::content("4")),
                ScriptEntry::on_index(1, Reply::content("4")),
            ],
            &["calc"],
        );
        let out = run(&w, 25);
        assert_eq!(out.result.outcome, Outcome::Success);
        assert_eq!(out.result.result_text, "4");
        assert_eq!(out.result.steps_used, 2);
        assert_eq!(out.turns[0].observation.as_deref(), Some("4"));
        assert_eq!(out.turns[1].kind, TurnKind::FinalResult);
    }

    #[test]
    fn sentinel_failure() {
        let w = worker(vec![ScriptEntry::any(Reply::content("TASK_FAILED: page not found"))], &[]);
        let out = run(&w, 25);
        assert_eq!(out.result.outcome, Outcome::Failure);
        assert_eq!(out.failure_reason.as_deref(), Some("page not found"));
        assert_eq!(out.turns[0].kind, TurnKind::SelfReportedFailure);
    }

    #[test]
    fn step_budget() {
        let w = worker(
            vec![ScriptEntry::any(Reply::tool_call("calc", json!({"expression": "1"}))).unlimited()],
            &["calc"],
        );
        let out = run(&w, 3);
        assert_eq!(out.failure_reason.as_deref(), Some(STEP_BUDGET_EXCEEDED));
        assert_eq!(out.result.steps_used, 3);
    }

    #[test]
    fn unknown_tool_is_observation_not_fatal() {
        let w = worker(
            vec![
                ScriptEntry::on_index(0, Reply::tool_call("teleport", json!({}))),
                ScriptEntry::on_index(1, Reply::tool_call("web_search", json!({"question": "x"}))),
                ScriptEntry::on_index(2, Reply::content("done")),
            ],
            &["calc"],
        );
        let out = run(&w, 25);
        assert!(out.result.is_success());
        assert!(out.turns[0].observation.as_deref().unwrap().starts_with("ERROR[NotFound]"));
        assert!(out.turns[1].observation.as_deref().unwrap().contains("not available"));
    }

    #[test]
    fn tool_fault_fails_subtask() {
        let w = worker(vec![ScriptEntry::any(Reply::tool_call("explode", json!({})))], &["explode"]);
        let out = run(&w, 25);
        assert_eq!(out.result.outcome, Outcome::Failure);
        assert!(out.failure_reason.unwrap().contains("disk on fire"));
        assert_eq!(out.result.steps_used, 1);
    }

    #[test]
    fn transport_error_is_failure() {
        let w = worker(vec![], &[]);
        let out = run(&w, 25);
        assert_eq!(out.result.outcome, Outcome::Failure);
        assert!(matches!(out.transport_error, Some(BackendError::ScriptExhausted { .. })));
    }

    #[test]
    fn sentinel_parsing() {
        assert_eq!(split_failure_sentinel("TASK_FAILED: x\nmore"), Some("x".into()));
        assert_eq!(split_failure_sentinel("  TASK_FAILED:\nlong reason"), Some("long reason".into()));
        assert_eq!(split_failure_sentinel("TASK_FAILED:"), Some("no reason given".into()));
        assert_eq!(split_failure_sentinel("result first\nTASK_FAILED: x"), None);
    }

    #[test]
    fn prompt_sections() {
        let w = worker(vec![], &[]);
        let prompt = w.prompt(
            &TaskSpec::new("t", "overall question"),
            &Subtask::new("p0.s1", "do it"),
            &DependencyContext::default(),
        );
        assert!(prompt.contains("<task>\ndo it\n</task>"));
        assert!(prompt.contains("<overall_task>\noverall question\n</overall_task>"));
        assert!(prompt.contains("<dependency_results_info>\n\n</dependency_results_info>"));
        assert!(prompt.contains("<additional_info>\nNone\n</additional_info>"));
        assert!(w.system_prompt().contains("TASK_FAILED: <reason>"));
    }
}
