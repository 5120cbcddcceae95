//! Shared domain types: tasks, worker descriptors, plans, subtask results and
//! run configuration, plus structural plan validation.

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version stamp written into every persisted record.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("task {task_id}: content is empty")]
    EmptyContent { task_id: String },
    #[error("task {task_id}: level {level} outside 1..=3")]
    InvalidLevel { task_id: String, level: u8 },
    #[error("run config: {0}")]
    InvalidConfig(String),
}

/// The overall task handed to the planner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub content: String,
    #[serde(default)]
    pub additional_info: Option<String>,
    #[serde(default)]
    pub attachments: Vec<PathBuf>,
    #[serde(default)]
    pub gold_answer: Option<String>,
    #[serde(default)]
    pub level: Option<u8>,
}

impl TaskSpec {
    pub fn new(task_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            content: content.into(),
            additional_info: None,
            attachments: Vec::new(),
            gold_answer: None,
            level: None,
        }
    }

    pub fn with_gold(mut self, gold: impl Into<String>) -> Self {
        self.gold_answer = Some(gold.into());
        self
    }

    pub fn with_level(mut self, level: u8) -> Self {
        self.level = Some(level);
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.content.trim().is_empty() {
            return Err(ModelError::EmptyContent {
                task_id: self.task_id.clone(),
            });
        }
        if let Some(level) = self.level {
            if !(1..=3).contains(&level) {
                return Err(ModelError::InvalidLevel {
                    task_id: self.task_id.clone(),
                    level,
                });
            }
        }
        Ok(())
    }

    /// Task text as shown to agents: the content followed by attachment paths.
    pub fn rendered_content(&self) -> String {
        if self.attachments.is_empty() {
            return self.content.clone();
        }
        let mut out = self.content.clone();
        out.push_str("\nHere are the necessary files:");
        for path in &self.attachments {
            out.push('\n');
            out.push_str(&path.to_string_lossy());
        }
        out
    }
}

/// A worker node as advertised to the planner and coordinator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerDescriptor {
    pub worker_id: String,
    pub description: String,
    pub tool_names: Vec<String>,
    /// System prompt for the worker's own model; falls back to `description`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_prompt: Option<String>,
}

impl WorkerDescriptor {
    pub fn new(
        worker_id: impl Into<String>,
        description: impl Into<String>,
        tool_names: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        Self {
            worker_id: worker_id.into(),
            description: description.into(),
            tool_names: tool_names.into_iter().map(Into::into).collect(),
            system_prompt: None,
        }
    }

    /// `<ID>:<description>:<tools: a, b>` line used in planner and coordinator prompts.
    pub fn registry_line(&self) -> String {
        format!(
            "<{}>:<{}>:<tools: {}>",
            self.worker_id,
            self.description,
            self.tool_names.join(", ")
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubtaskStatus {
    Pending,
    Assigned,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtask {
    pub subtask_id: String,
    pub description: String,
    pub depends_on: Vec<String>,
    pub status: SubtaskStatus,
    #[serde(default)]
    pub failure_reason: Option<String>,
}

impl Subtask {
    pub fn new(subtask_id: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            subtask_id: subtask_id.into(),
            description: description.into(),
            depends_on: Vec::new(),
            status: SubtaskStatus::Pending,
            failure_reason: None,
        }
    }

    pub fn depending_on(mut self, ids: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.depends_on = ids.into_iter().map(Into::into).collect();
        self
    }

    pub fn mark_failed(&mut self, reason: impl Into<String>) {
        self.status = SubtaskStatus::Failed;
        self.failure_reason = Some(reason.into());
    }

    pub fn mark_done(&mut self) {
        self.status = SubtaskStatus::Done;
        self.failure_reason = None;
    }
}

/// Canonical subtask identifier `p{plan_index}.s{ordinal}`, ordinals from 1.
pub fn subtask_id(plan_index: u32, ordinal: usize) -> String {
    format!("p{plan_index}.s{ordinal}")
}

/// Recovers the plan index from a canonical subtask id.
pub fn plan_index_of(subtask_id: &str) -> Option<u32> {
    let rest = subtask_id.strip_prefix('p')?;
    let (index, _) = rest.split_once(".s")?;
    index.parse().ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub plan_index: u32,
    pub subtasks: Vec<Subtask>,
}

impl Plan {
    /// Builds a plan where every subtask depends on all earlier subtasks.
    pub fn from_descriptions(
        plan_index: u32,
        descriptions: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        let mut subtasks: Vec<Subtask> = Vec::new();
        for (i, description) in descriptions.into_iter().enumerate() {
            let depends_on = subtasks.iter().map(|s| s.subtask_id.clone()).collect();
            let mut subtask = Subtask::new(subtask_id(plan_index, i + 1), description);
            subtask.depends_on = depends_on;
            subtasks.push(subtask);
        }
        Self {
            plan_index,
            subtasks,
        }
    }

    pub fn subtask(&self, id: &str) -> Option<&Subtask> {
        self.subtasks.iter().find(|s| s.subtask_id == id)
    }

    pub fn subtask_mut(&mut self, id: &str) -> Option<&mut Subtask> {
        self.subtasks.iter_mut().find(|s| s.subtask_id == id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.subtasks.iter().position(|s| s.subtask_id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskResult {
    pub subtask_id: String,
    pub outcome: Outcome,
    pub result_text: String,
    pub steps_used: u32,
}

impl SubtaskResult {
    pub fn is_success(&self) -> bool {
        self.outcome == Outcome::Success
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub plan_index: u32,
    pub subtask_id: String,
    /// Description of the failed subtask, carried so replanning can quote it.
    #[serde(default)]
    pub description: String,
    pub reason: String,
}

/// Accumulated failure feedback for the planner. Append-only during a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureInfo {
    pub entries: Vec<FailureEntry>,
}

impl FailureInfo {
    pub fn push(&mut self, entry: FailureEntry) {
        self.entries.push(entry);
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Greedy,
}

fn default_max_replans() -> u32 {
    2
}
fn default_max_steps() -> u32 {
    25
}
fn default_pass_k() -> u32 {
    1
}
fn default_format_retries() -> u32 {
    2
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_max_replans")]
    pub max_replans: u32,
    #[serde(default = "default_max_steps")]
    pub max_steps_per_subtask: u32,
    #[serde(default = "default_pass_k")]
    pub pass_k: u32,
    #[serde(default)]
    pub decode_mode: DecodeMode,
    #[serde(default)]
    pub workspace_dir: PathBuf,
    #[serde(default)]
    pub blocklist: Vec<String>,
    /// Planner re-asks after an unparseable reply.
    #[serde(default = "default_format_retries")]
    pub planner_format_retries: u32,
    /// Whether results from abandoned plans are forwarded to replanned subtasks.
    #[serde(default = "default_true")]
    pub include_prior_plan_results: bool,
    /// Whether failure reasons from abandoned plans are forwarded as context.
    #[serde(default)]
    pub include_prior_failures: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_replans: default_max_replans(),
            max_steps_per_subtask: default_max_steps(),
            pass_k: default_pass_k(),
            decode_mode: DecodeMode::Greedy,
            workspace_dir: PathBuf::from("."),
            blocklist: Vec::new(),
            planner_format_retries: default_format_retries(),
            include_prior_plan_results: true,
            include_prior_failures: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.max_steps_per_subtask < 1 {
            return Err(ModelError::InvalidConfig(
                "max_steps_per_subtask must be >= 1".into(),
            ));
        }
        if self.pass_k < 1 {
            return Err(ModelError::InvalidConfig("pass_k must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "issue", rename_all = "snake_case")]
pub enum PlanIssue {
    EmptyPlan,
    EmptyRegistry,
    DuplicateSubtaskId { subtask_id: String },
    DuplicateWorkerId { worker_id: String },
    EmptyDescription { subtask_id: String },
    DanglingDependency { subtask_id: String, missing: String },
    ForwardDependency { subtask_id: String, target: String },
    FailureReasonMismatch { subtask_id: String },
}

impl fmt::Display for PlanIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanIssue::EmptyPlan => write!(f, "plan has no subtasks"),
            PlanIssue::EmptyRegistry => write!(f, "worker registry is empty"),
            PlanIssue::DuplicateSubtaskId { subtask_id } => {
                write!(f, "duplicate subtask id {subtask_id}")
            }
            PlanIssue::DuplicateWorkerId { worker_id } => {
                write!(f, "duplicate worker id {worker_id}")
            }
            PlanIssue::EmptyDescription { subtask_id } => {
                write!(f, "subtask {subtask_id} has an empty description")
            }
            PlanIssue::DanglingDependency {
                subtask_id,
                missing,
            } => write!(f, "subtask {subtask_id} depends on unknown id {missing}"),
            PlanIssue::ForwardDependency { subtask_id, target } => write!(
                f,
                "subtask {subtask_id} depends on {target}, which is not earlier in the plan"
            ),
            PlanIssue::FailureReasonMismatch { subtask_id } => write!(
                f,
                "subtask {subtask_id}: failure_reason must be present iff status is Failed"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<PlanIssue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Reports every structural problem in `plan`. Never fails; an empty report
/// means the plan is well-formed.
pub fn validate_plan(plan: &Plan, registry: &[WorkerDescriptor]) -> ValidationReport {
    let mut issues = Vec::new();

    if plan.subtasks.is_empty() {
        issues.push(PlanIssue::EmptyPlan);
    }
    if registry.is_empty() {
        issues.push(PlanIssue::EmptyRegistry);
    }
    let mut worker_ids = HashSet::new();
    for worker in registry {
        if !worker_ids.insert(worker.worker_id.as_str()) {
            issues.push(PlanIssue::DuplicateWorkerId {
                worker_id: worker.worker_id.clone(),
            });
        }
    }

    let all_ids: HashSet<&str> = plan.subtasks.iter().map(|s| s.subtask_id.as_str()).collect();
    let mut seen: HashSet<&str> = HashSet::new();
    for subtask in &plan.subtasks {
        let id = subtask.subtask_id.as_str();
        if subtask.description.trim().is_empty() {
            issues.push(PlanIssue::EmptyDescription {
                subtask_id: id.to_string(),
            });
        }
        for dep in &subtask.depends_on {
            if seen.contains(dep.as_str()) {
                continue;
            }
            if all_ids.contains(dep.as_str()) {
                issues.push(PlanIssue::ForwardDependency {
                    subtask_id: id.to_string(),
                    target: dep.clone(),
                });
            } else {
                issues.push(PlanIssue::DanglingDependency {
                    subtask_id: id.to_string(),
                    missing: dep.clone(),
                });
            }
        }
        let failed = subtask.status == SubtaskStatus::Failed;
        if failed != subtask.failure_reason.is_some() {
            issues.push(PlanIssue::FailureReasonMismatch {
                subtask_id: id.to_string(),
            });
        }
        if !seen.insert(id) {
            issues.push(PlanIssue::DuplicateSubtaskId {
                subtask_id: id.to_string(),
            });
        }
    }

    ValidationReport { issues }
}
