//! The bounded replanning loop: plan, assign, execute, collect, and finally
//! synthesize.
//!
//! ```text
//! F = 0, I = {}
//! while F <= K:
//!     B = false
//!     plan = I empty ? decompose : replan(I)
//!     R = {}
//!     for s in plan:
//!         w = find_assignee(s); post Assigned
//!         r = w.process_task(s)
//!         failure -> post FailurePosted, I += (s, reason), B = true, break
//!         success -> R += r, post ResultPosted
//!     if not B: break
//!     F += 1
//! answer = synthesize(R)
//! ```
//!
//! `B` is reset at the top of each iteration; without that a single failure
//! would make every later iteration look failed.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    AgentError, Coordinator, Planner, PlannerCall, PromptTemplates, SynthesisCall, Worker,
    WorkerTurn,
};
use crate::backend::{ChatBackend, ChatMessage};
use crate::channel::{Channel, ChannelMessage, ContextOptions, MessageKind};
use crate::model::{
    FailureEntry, FailureInfo, ModelError, Plan, RunConfig, SubtaskResult, TaskSpec,
    WorkerDescriptor, FORMAT_VERSION,
};
use crate::toolkit::{ToolContext, ToolRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    AllSubtasksDone,
    BudgetExhausted,
    /// A backend or planner-format error stopped the run early.
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnnotationKind {
    CoordinatorReask,
    CoordinatorFallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub kind: AnnotationKind,
    pub subtask_id: String,
    pub detail: String,
}

/// How one subtask was assigned and executed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskTrace {
    pub subtask_id: String,
    pub worker_id: String,
    pub coordinator_replies: Vec<String>,
    pub turns: Vec<WorkerTurn>,
    pub messages: Vec<ChatMessage>,
}

impl SubtaskTrace {
    /// The rendered user prompt the worker received.
    pub fn worker_prompt(&self) -> &str {
        self.messages
            .get(1)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub format_version: u32,
    pub task_id: String,
    pub plans: Vec<Plan>,
    pub channel_log: Vec<ChannelMessage>,
    /// Every subtask result in execution order, across all plans.
    pub results: Vec<SubtaskResult>,
    pub failure_count: u32,
    pub failures: FailureInfo,
    pub final_answer: String,
    pub terminated_by: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
    pub planner_calls: Vec<PlannerCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesis: Option<SynthesisCall>,
    /// Ids of the results the final answer was synthesized from.
    pub synthesis_inputs: Vec<String>,
    pub subtask_traces: Vec<SubtaskTrace>,
    pub annotations: Vec<Annotation>,
}

impl RunRecord {
    pub fn is_aborted(&self) -> bool {
        self.terminated_by == Termination::Aborted
    }

    pub fn final_plan(&self) -> Option<&Plan> {
        self.plans.last()
    }

    pub fn replan_calls(&self) -> usize {
        self.planner_calls.len().saturating_sub(1)
    }

    /// Backend calls made by workers over the whole run.
    pub fn total_steps(&self) -> u64 {
        self.results.iter().map(|r| u64::from(r.steps_used)).sum()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("run records always serialize")
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum WorkforceError {
    #[error("worker registry is empty")]
    EmptyRegistry,
    #[error("duplicate worker id `{0}`")]
    DuplicateWorker(String),
    #[error(transparent)]
    Config(#[from] ModelError),
}

/// Model bindings per role. Workers use `worker` unless an override exists
/// for their id.
#[derive(Clone)]
pub struct RoleBackends {
    pub planner: Arc<dyn ChatBackend>,
    pub coordinator: Arc<dyn ChatBackend>,
    pub worker: Arc<dyn ChatBackend>,
    pub worker_overrides: BTreeMap<String, Arc<dyn ChatBackend>>,
}

impl RoleBackends {
    /// One backend for every role.
    pub fn shared(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            planner: backend.clone(),
            coordinator: backend.clone(),
            worker: backend,
            worker_overrides: BTreeMap::new(),
        }
    }
}

pub struct Workforce {
    registry: Vec<WorkerDescriptor>,
    planner: Planner,
    coordinator: Coordinator,
    workers: BTreeMap<String, Worker>,
    cfg: RunConfig,
    tool_ctx: ToolContext,
}

struct Abort(String);

impl From<AgentError> for Abort {
    fn from(err: AgentError) -> Self {
        Abort(err.to_string())
    }
}

impl Workforce {
    pub fn new(
        registry: Vec<WorkerDescriptor>,
        backends: RoleBackends,
        tools: Arc<ToolRegistry>,
        templates: Arc<PromptTemplates>,
        cfg: RunConfig,
        tool_ctx: ToolContext,
    ) -> Result<Self, WorkforceError> {
        cfg.validate()?;
        if registry.is_empty() {
            return Err(WorkforceError::EmptyRegistry);
        }
        let mut workers = BTreeMap::new();
        for descriptor in &registry {
            let backend = backends
                .worker_overrides
                .get(&descriptor.worker_id)
                .cloned()
                .unwrap_or_else(|| backends.worker.clone());
            let worker = Worker::new(descriptor.clone(), backend, tools.clone(), templates.clone());
            if workers.insert(descriptor.worker_id.clone(), worker).is_some() {
                return Err(WorkforceError::DuplicateWorker(descriptor.worker_id.clone()));
            }
        }
        Ok(Self {
            planner: Planner::new(backends.planner, templates.clone())
                .with_format_retries(cfg.planner_format_retries),
            coordinator: Coordinator::new(backends.coordinator, templates),
            registry,
            workers,
            cfg,
            tool_ctx,
        })
    }

    pub fn registry(&self) -> &[WorkerDescriptor] {
        &self.registry
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    /// Executes one task end to end. Never panics on model misbehaviour;
    /// unrecoverable errors yield a record with `terminated_by = Aborted`.
    pub fn run(&self, task: &TaskSpec) -> RunRecord {
        let mut record = RunRecord {
            format_version: FORMAT_VERSION,
            task_id: task.task_id.clone(),
            plans: Vec::new(),
            channel_log: Vec::new(),
            results: Vec::new(),
            failure_count: 0,
            failures: FailureInfo::default(),
            final_answer: String::new(),
            terminated_by: Termination::AllSubtasksDone,
            abort_reason: None,
            planner_calls: Vec::new(),
            synthesis: None,
            synthesis_inputs: Vec::new(),
            subtask_traces: Vec::new(),
            annotations: Vec::new(),
        };
        let mut channel = Channel::new();
        if let Err(Abort(reason)) = self.run_loop(task, &mut record, &mut channel) {
            log::error!("run {} aborted: {reason}", task.task_id);
            record.terminated_by = Termination::Aborted;
            record.abort_reason = Some(reason);
        }
        record.channel_log = channel.into_messages();
        record
    }

    fn run_loop(
        &self,
        task: &TaskSpec,
        record: &mut RunRecord,
        channel: &mut Channel,
    ) -> Result<(), Abort> {
        let k = self.cfg.max_replans;
        let options = ContextOptions {
            include_prior_plan_results: self.cfg.include_prior_plan_results,
            include_prior_failures: self.cfg.include_prior_failures,
        };
        let mut f: u32 = 0;
        let mut collected: Vec<SubtaskResult> = Vec::new();

        while f <= k {
            let mut failed = false;
            let plan_index = record.plans.len() as u32;
            let (mut plan, call) = if record.failures.is_empty() {
                self.planner.decompose(task, &self.registry)?
            } else {
                self.planner.replan(task, &self.registry, &record.failures, plan_index)?
            };
            record.planner_calls.push(call);
            for subtask in &plan.subtasks {
                post(channel, ChannelMessage::task_posted(subtask))?;
            }
            collected.clear();

            for i in 0..plan.subtasks.len() {
                let subtask = plan.subtasks[i].clone();
                let assignment = self.coordinator.find_assignee(&subtask, &self.registry)?;
                let worker_id = assignment.worker.worker_id.clone();
                if assignment.fallback {
                    record.annotations.push(Annotation {
                        kind: AnnotationKind::CoordinatorFallback,
                        subtask_id: subtask.subtask_id.clone(),
                        detail: format!("no registered worker named; used {worker_id}"),
                    });
                } else if assignment.reasks > 0 {
                    record.annotations.push(Annotation {
                        kind: AnnotationKind::CoordinatorReask,
                        subtask_id: subtask.subtask_id.clone(),
                        detail: format!("resolved to {worker_id} after re-ask"),
                    });
                }
                post(channel, ChannelMessage::assigned(&subtask, &worker_id))?;

                let ctx = channel
                    .context_for(&subtask, options)
                    .map_err(|e| Abort(e.to_string()))?;
                let worker = &self.workers[&worker_id];
                let outcome = worker.process_task(task, &subtask, &ctx, &self.cfg, &self.tool_ctx);
                record.results.push(outcome.result.clone());
                record.subtask_traces.push(SubtaskTrace {
                    subtask_id: subtask.subtask_id.clone(),
                    worker_id: worker_id.clone(),
                    coordinator_replies: assignment.replies,
                    turns: outcome.turns,
                    messages: outcome.messages,
                });

                if let Some(err) = outcome.transport_error {
                    plan.subtasks[i].mark_failed(outcome.result.result_text.clone());
                    record.plans.push(plan);
                    return Err(Abort(format!(
                        "worker backend failed on {}: {err}",
                        subtask.subtask_id
                    )));
                }
                match outcome.failure_reason {
                    Some(reason) => {
                        post(
                            channel,
                            ChannelMessage::failure(&subtask.subtask_id, &worker_id, reason.clone()),
                        )?;
                        plan.subtasks[i].mark_failed(reason.clone());
                        record.failures.push(FailureEntry {
                            plan_index,
                            subtask_id: subtask.subtask_id.clone(),
                            description: subtask.description.clone(),
                            reason,
                        });
                        failed = true;
                        break;
                    }
                    None => {
                        post(
                            channel,
                            ChannelMessage::result(
                                &subtask.subtask_id,
                                &worker_id,
                                outcome.result.result_text.clone(),
                            ),
                        )?;
                        plan.subtasks[i].mark_done();
                        collected.push(outcome.result);
                    }
                }
            }
            record.plans.push(plan);

            if !failed {
                break;
            }
            f += 1;
            record.failure_count = f;
            if f <= k {
                post(
                    channel,
                    ChannelMessage::new(MessageKind::ReplanTriggered, format!("failure {f} of budget {k}")),
                )?;
            }
        }

        record.terminated_by = if f > k {
            Termination::BudgetExhausted
        } else {
            Termination::AllSubtasksDone
        };
        let final_plan = record.plans.last().expect("at least one plan per run");
        let synthesis = self
            .planner
            .synthesize(task, final_plan, &collected)
            .map_err(|e| Abort(format!("synthesis failed: {e}")))?;
        record.final_answer = synthesis.answer.clone();
        record.synthesis = Some(synthesis);
        record.synthesis_inputs = collected.into_iter().map(|r| r.subtask_id).collect();
        Ok(())
    }
}

fn post(channel: &mut Channel, message: ChannelMessage) -> Result<u64, Abort> {
    channel.post(message).map_err(|e| Abort(e.to_string()))
}
