use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::parse::{parse_task_list, ParseError};
use super::prompts::{or_none, render, PromptTemplates};
use super::{registry_block, AgentError};
use crate::backend::{BackendError, ChatBackend, ChatMessage, ModelRequest};
use crate::model::{FailureInfo, Plan, SubtaskResult, TaskSpec, WorkerDescriptor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CallKind {
    Decompose,
    Replan,
}

/// One planning interaction: the final request sent and the reply that
/// produced the plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerCall {
    pub kind: CallKind,
    pub plan_index: u32,
    pub messages: Vec<ChatMessage>,
    pub raw_text: String,
    /// Backend calls issued, including format re-asks.
    pub attempts: u32,
}

impl PlannerCall {
    pub fn retries(&self) -> u32 {
        self.attempts.saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisCall {
    pub messages: Vec<ChatMessage>,
    pub answer: String,
}

pub struct Planner {
    backend: Arc<dyn ChatBackend>,
    templates: Arc<PromptTemplates>,
    format_retries: u32,
}

/// Failure feedback section of the replanning prompt, oldest first.
pub fn render_failures(failures: &FailureInfo) -> String {
    failures
        .entries
        .iter()
        .enumerate()
        .map(|(i, f)| {
            format!(
                "{}. Subtask {}: {}\n   Failure reason: {}",
                i + 1,
                f.subtask_id,
                f.description.trim(),
                f.reason.trim()
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

impl Planner {
    pub fn new(backend: Arc<dyn ChatBackend>, templates: Arc<PromptTemplates>) -> Self {
        Self {
            backend,
            templates,
            format_retries: 2,
        }
    }

    pub fn with_format_retries(mut self, retries: u32) -> Self {
        self.format_retries = retries;
        self
    }

    pub fn decompose_prompt(&self, task: &TaskSpec, registry: &[WorkerDescriptor]) -> String {
        render(
            &self.templates.decompose,
            &[
                ("content", &task.rendered_content()),
                ("additional_info", or_none(task.additional_info.as_deref())),
                ("workers", &registry_block(registry)),
            ],
        )
    }

    pub fn replan_prompt(
        &self,
        task: &TaskSpec,
        registry: &[WorkerDescriptor],
        failures: &FailureInfo,
    ) -> String {
        render(
            &self.templates.replan,
            &[
                ("content", &task.rendered_content()),
                ("additional_info", or_none(task.additional_info.as_deref())),
                ("workers", &registry_block(registry)),
                ("failures", &render_failures(failures)),
            ],
        )
    }

    /// Initial plan (index 0).
    pub fn decompose(
        &self,
        task: &TaskSpec,
        registry: &[WorkerDescriptor],
    ) -> Result<(Plan, PlannerCall), AgentError> {
        if registry.is_empty() {
            return Err(AgentError::EmptyRegistry);
        }
        let prompt = self.decompose_prompt(task, registry);
        self.plan_with(CallKind::Decompose, 0, prompt)
    }

    /// A fresh plan informed by every failure recorded so far.
    pub fn replan(
        &self,
        task: &TaskSpec,
        registry: &[WorkerDescriptor],
        failures: &FailureInfo,
        plan_index: u32,
    ) -> Result<(Plan, PlannerCall), AgentError> {
        if registry.is_empty() {
            return Err(AgentError::EmptyRegistry);
        }
        if failures.is_empty() {
            return Err(AgentError::NoFailures);
        }
        let prompt = self.replan_prompt(task, registry, failures);
        self.plan_with(CallKind::Replan, plan_index, prompt)
    }

    fn plan_with(
        &self,
        kind: CallKind,
        plan_index: u32,
        prompt: String,
    ) -> Result<(Plan, PlannerCall), AgentError> {
        let mut messages = vec![
            ChatMessage::system(self.templates.planner_system.clone()),
            ChatMessage::user(prompt),
        ];
        let mut attempts = 0;
        let mut last: ParseError;
        loop {
            attempts += 1;
            let response = self.backend.complete(&ModelRequest::new(messages.clone()))?;
            let raw_text = response.content_or_empty().to_string();
            match parse_task_list(&raw_text) {
                Ok(descriptions) => {
                    let plan = Plan::from_descriptions(plan_index, descriptions);
                    let call = PlannerCall {
                        kind,
                        plan_index,
                        messages,
                        raw_text,
                        attempts,
                    };
                    return Ok((plan, call));
                }
                Err(err) => last = err,
            }
            if attempts > self.format_retries {
                return Err(AgentError::PlannerFormat { attempts, last });
            }
            log::warn!("planner reply unparseable ({last}); re-asking with format reminder");
            messages.push(ChatMessage::assistant(raw_text));
            messages.push(ChatMessage::user(self.templates.format_reminder.clone()));
        }
    }

    /// Results block of the synthesis prompt, in plan order. Results for
    /// subtasks outside `plan` follow in input order.
    pub fn render_results(plan: &Plan, results: &[SubtaskResult]) -> String {
        let mut ordered: Vec<(usize, &SubtaskResult)> = results
            .iter()
            .map(|r| (plan.position(&r.subtask_id).unwrap_or(usize::MAX), r))
            .collect();
        ordered.sort_by_key(|(pos, _)| *pos);
        if ordered.is_empty() {
            return "(no subtask results)".to_string();
        }
        ordered
            .iter()
            .map(|(_, r)| {
                let description = plan
                    .subtask(&r.subtask_id)
                    .map(|s| s.description.trim())
                    .unwrap_or("");
                format!(
                    "Subtask {}: {}\nResult:\n{}",
                    r.subtask_id,
                    description,
                    r.result_text.trim()
                )
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn synthesis_prompt(&self, task: &TaskSpec, plan: &Plan, results: &[SubtaskResult]) -> String {
        render(
            &self.templates.synthesis,
            &[
                ("content", &task.rendered_content()),
                ("results", &Self::render_results(plan, results)),
            ],
        )
    }

    /// Final answer over `results`; the reply content is returned verbatim.
    pub fn synthesize(
        &self,
        task: &TaskSpec,
        plan: &Plan,
        results: &[SubtaskResult],
    ) -> Result<SynthesisCall, BackendError> {
        let messages = vec![
            ChatMessage::system(self.templates.planner_system.clone()),
            ChatMessage::user(self.synthesis_prompt(task, plan, results)),
        ];
        let response = self.backend.complete(&ModelRequest::new(messages.clone()))?;
        Ok(SynthesisCall {
            messages,
            answer: response.content_or_empty().to_string(),
        })
    }
}
