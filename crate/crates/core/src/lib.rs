//! Hierarchical multi-agent orchestration: a planner decomposes a task, a
//! coordinator assigns subtasks to tool-using workers over a shared task
//! channel, and failures feed a bounded replanning loop.
//!
//! The crate also covers the data side (trajectory evaluation, SFT filtering,
//! preference-pair construction) and a benchmark harness.

pub mod agents;
pub mod backend;
pub mod channel;
pub mod cli;
pub mod harness;
pub mod model;
pub mod orchestrator;
pub mod toolkit;
pub mod trajectory;
