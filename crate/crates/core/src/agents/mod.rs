//! The three agent roles: planner, coordinator and worker.
//!
//! Agents hold no state between calls; everything a call depends on is passed
//! in, and every model interaction is returned to the caller so that runs can
//! be recorded and replayed.

mod coordinator;
mod parse;
mod planner;
mod prompts;
mod worker;

use thiserror::Error;

use crate::backend::BackendError;

pub use coordinator::{Assignment, Coordinator};
pub use parse::{
    parse_assignee, parse_planner_output, parse_task_list, AssigneeDecision, ParseError,
    PlannerOutput,
};
pub use planner::{render_failures, CallKind, Planner, PlannerCall, SynthesisCall};
pub use prompts::{or_none, render, PromptTemplates};
pub use worker::{
    split_failure_sentinel, TurnKind, Worker, WorkerOutcome, WorkerTurn, FAILURE_SENTINEL,
    STEP_BUDGET_EXCEEDED,
};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AgentError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("planner reply could not be parsed after {attempts} attempt(s): {last}")]
    PlannerFormat { attempts: u32, last: ParseError },
    #[error("worker registry is empty")]
    EmptyRegistry,
    #[error("replanning requires at least one recorded failure")]
    NoFailures,
}

/// Worker list shared by the planner and coordinator prompts.
pub(crate) fn registry_block(registry: &[crate::model::WorkerDescriptor]) -> String {
    registry
        .iter()
        .map(|w| w.registry_line())
        .collect::<Vec<_>>()
        .join("\n")
}
