//! Append-only task channel shared by planner, coordinator and workers.
//!
//! Workers never talk to each other. Everything a worker sees about earlier
//! subtasks comes from `ResultPosted` payloads on this channel, so tool-call
//! transcripts stay inside the subtask that produced them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{plan_index_of, FailureEntry, Subtask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    TaskPosted,
    Assigned,
    ResultPosted,
    FailurePosted,
    ReplanTriggered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelMessage {
    pub seq: u64,
    pub kind: MessageKind,
    #[serde(default)]
    pub subtask_id: Option<String>,
    #[serde(default)]
    pub worker_id: Option<String>,
    pub payload: String,
}

impl ChannelMessage {
    /// Builds an unsequenced message; `Channel::post` assigns the seq.
    pub fn new(kind: MessageKind, payload: impl Into<String>) -> Self {
        Self {
            seq: 0,
            kind,
            subtask_id: None,
            worker_id: None,
            payload: payload.into(),
        }
    }

    pub fn task_posted(subtask: &Subtask) -> Self {
        Self::new(MessageKind::TaskPosted, subtask.description.clone())
            .for_subtask(&subtask.subtask_id)
    }

    pub fn assigned(subtask: &Subtask, worker_id: &str) -> Self {
        Self::new(MessageKind::Assigned, subtask.description.clone())
            .for_subtask(&subtask.subtask_id)
            .by_worker(worker_id)
    }

    pub fn result(subtask_id: &str, worker_id: &str, text: impl Into<String>) -> Self {
        Self::new(MessageKind::ResultPosted, text)
            .for_subtask(subtask_id)
            .by_worker(worker_id)
    }

    pub fn failure(subtask_id: &str, worker_id: &str, reason: impl Into<String>) -> Self {
        Self::new(MessageKind::FailurePosted, reason)
            .for_subtask(subtask_id)
            .by_worker(worker_id)
    }

    pub fn for_subtask(mut self, id: &str) -> Self {
        self.subtask_id = Some(id.to_string());
        self
    }

    pub fn by_worker(mut self, id: &str) -> Self {
        self.worker_id = Some(id.to_string());
        self
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChannelError {
    #[error("{kind:?} message is missing required field `{field}`")]
    MissingField { kind: MessageKind, field: &'static str },
    #[error("no result posted for dependency `{subtask_id}`")]
    UnsatisfiedDependency { subtask_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub subtask_id: String,
    pub description: String,
    pub result_text: String,
}

/// Final results a worker is allowed to see for its subtask.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyContext {
    pub entries: Vec<ContextEntry>,
}

impl DependencyContext {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Text placed between the `<dependency_results_info>` tags.
    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|e| e.result_text.trim())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

/// Controls what, beyond the declared dependencies, flows into a context.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextOptions {
    /// Prepend results of subtasks from earlier (abandoned) plans.
    pub include_prior_plan_results: bool,
    /// Prepend failure reasons from earlier plans.
    pub include_prior_failures: bool,
}

impl Default for ContextOptions {
    fn default() -> Self {
        Self {
            include_prior_plan_results: true,
            include_prior_failures: false,
        }
    }
}

/// One channel per run. Single writer; clones are immutable snapshots.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    messages: Vec<ChannelMessage>,
}

impl Channel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a channel from a persisted log, re-validating every message.
    pub fn replay(log: &[ChannelMessage]) -> Result<Self, ChannelError> {
        let mut channel = Self::new();
        for message in log {
            channel.post(message.clone())?;
        }
        Ok(channel)
    }

    pub fn messages(&self) -> &[ChannelMessage] {
        &self.messages
    }

    pub fn into_messages(self) -> Vec<ChannelMessage> {
        self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Appends `message` with the next sequence number and returns it.
    pub fn post(&mut self, mut message: ChannelMessage) -> Result<u64, ChannelError> {
        let kind = message.kind;
        let needs_subtask = matches!(
            kind,
            MessageKind::TaskPosted
                | MessageKind::Assigned
                | MessageKind::ResultPosted
                | MessageKind::FailurePosted
        );
        if message.kind == MessageKind::Assigned && message.worker_id.is_none() {
            return Err(ChannelError::MissingField {
                kind,
                field: "worker_id",
            });
        }
        if needs_subtask && message.subtask_id.is_none() {
            return Err(ChannelError::MissingField {
                kind,
                field: "subtask_id",
            });
        }
        let seq = self.messages.len() as u64;
        message.seq = seq;
        self.messages.push(message);
        Ok(seq)
    }

    fn latest_of(&self, kind: MessageKind, subtask_id: &str) -> Option<&ChannelMessage> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.kind == kind && m.subtask_id.as_deref() == Some(subtask_id))
    }

    fn description_of(&self, subtask_id: &str) -> String {
        self.latest_of(MessageKind::TaskPosted, subtask_id)
            .or_else(|| self.latest_of(MessageKind::Assigned, subtask_id))
            .map(|m| m.payload.clone())
            .unwrap_or_default()
    }

    /// Context for `subtask`: results of its `depends_on` set in plan order,
    /// preceded by earlier-plan material selected by `options`.
    pub fn context_for(
        &self,
        subtask: &Subtask,
        options: ContextOptions,
    ) -> Result<DependencyContext, ChannelError> {
        let mut entries = Vec::new();

        if let Some(current) = plan_index_of(&subtask.subtask_id) {
            for message in &self.messages {
                let Some(id) = message.subtask_id.as_deref() else {
                    continue;
                };
                let earlier = plan_index_of(id).is_some_and(|p| p < current);
                if !earlier {
                    continue;
                }
                let include = match message.kind {
                    MessageKind::ResultPosted => options.include_prior_plan_results,
                    MessageKind::FailurePosted => options.include_prior_failures,
                    _ => false,
                };
                if include {
                    let result_text = if message.kind == MessageKind::FailurePosted {
                        format!("FAILED: {}", message.payload)
                    } else {
                        message.payload.clone()
                    };
                    entries.push(ContextEntry {
                        subtask_id: id.to_string(),
                        description: self.description_of(id),
                        result_text,
                    });
                }
            }
        }

        for dep in &subtask.depends_on {
            let message = self.latest_of(MessageKind::ResultPosted, dep).ok_or_else(|| {
                ChannelError::UnsatisfiedDependency {
                    subtask_id: dep.clone(),
                }
            })?;
            entries.push(ContextEntry {
                subtask_id: dep.clone(),
                description: self.description_of(dep),
                result_text: message.payload.clone(),
            });
        }
        Ok(DependencyContext { entries })
    }

    /// The most recent failure, decoded into a failure entry.
    pub fn latest_failure(&self) -> Option<FailureEntry> {
        let message = self
            .messages
            .iter()
            .rev()
            .find(|m| m.kind == MessageKind::FailurePosted)?;
        let subtask_id = message.subtask_id.clone().unwrap_or_default();
        Some(FailureEntry {
            plan_index: plan_index_of(&subtask_id).unwrap_or(0),
            description: self.description_of(&subtask_id),
            subtask_id,
            reason: message.payload.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Plan;
    use proptest::prelude::*;

    fn strict() -> ContextOptions {
        ContextOptions {
            include_prior_plan_results: false,
            include_prior_failures: false,
        }
    }

    #[test]
    fn first_post_gets_seq_zero_then_monotonic() {
        let mut channel = Channel::new();
        assert_eq!(
            channel.post(ChannelMessage::result("p0.s1", "w", "answer A")).unwrap(),
            0
        );
        assert_eq!(
            channel.post(ChannelMessage::result("p0.s2", "w", "answer B")).unwrap(),
            1
        );
        assert_eq!(channel.messages()[1].payload, "answer B");
    }

    #[test]
    fn assigned_without_worker_is_rejected() {
        let mut channel = Channel::new();
        let message = ChannelMessage::new(MessageKind::Assigned, "x").for_subtask("p0.s1");
        let err = channel.post(message).unwrap_err();
        assert_eq!(
            err,
            ChannelError::MissingField {
                kind: MessageKind::Assigned,
                field: "worker_id"
            }
        );
        assert!(err.to_string().contains("worker_id"));
        assert!(channel.is_empty());

        let err = channel
            .post(ChannelMessage::new(MessageKind::ResultPosted, "r"))
            .unwrap_err();
        assert!(err.to_string().contains("subtask_id"));
    }

    #[test]
    fn context_for_direct_lookup() {
        let plan = Plan::from_descriptions(0, ["one", "two"]);
        let mut channel = Channel::new();
        assert!(channel.context_for(&plan.subtasks[0], strict()).unwrap().is_empty());

        let err = channel.context_for(&plan.subtasks[1], strict()).unwrap_err();
        assert_eq!(
            err,
            ChannelError::UnsatisfiedDependency {
                subtask_id: "p0.s1".into()
            }
        );

        channel.post(ChannelMessage::task_posted(&plan.subtasks[0])).unwrap();
        channel.post(ChannelMessage::result("p0.s1", "w", "R1")).unwrap();
        let ctx = channel.context_for(&plan.subtasks[1], strict()).unwrap();
        assert_eq!(ctx.entries.len(), 1);
        assert_eq!(ctx.entries[0].result_text, "R1");
        assert_eq!(ctx.entries[0].description, "one");
    }

    #[test]
    fn prior_plan_results_are_optional() {
        let old = Plan::from_descriptions(0, ["a", "b"]);
        let new = Plan::from_descriptions(1, ["c"]);
        let mut channel = Channel::new();
        for s in &old.subtasks {
            channel.post(ChannelMessage::task_posted(s)).unwrap();
        }
        channel.post(ChannelMessage::result("p0.s1", "w", "kept")).unwrap();
        channel.post(ChannelMessage::failure("p0.s2", "w", "tool error")).unwrap();

        let ctx = channel.context_for(&new.subtasks[0], strict()).unwrap();
        assert!(ctx.is_empty());

        let ctx = channel
            .context_for(&new.subtasks[0], ContextOptions::default())
            .unwrap();
        assert_eq!(ctx.entries.len(), 1);
        assert_eq!(ctx.entries[0].result_text, "kept");

        let all = ContextOptions {
            include_prior_plan_results: true,
            include_prior_failures: true,
        };
        let ctx = channel.context_for(&new.subtasks[0], all).unwrap();
        assert_eq!(ctx.entries.len(), 2);
        assert_eq!(ctx.entries[1].result_text, "FAILED: tool error");
    }

    #[test]
    fn latest_failure_uses_max_seq() {
        let mut channel = Channel::new();
        assert!(channel.latest_failure().is_none());
        channel.post(ChannelMessage::failure("p0.s2", "w", "tool error")).unwrap();
        let first = channel.latest_failure().unwrap();
        assert_eq!((first.plan_index, first.subtask_id.as_str()), (0, "p0.s2"));
        assert_eq!(first.reason, "tool error");
        channel.post(ChannelMessage::failure("p1.s1", "w", "later")).unwrap();
        let second = channel.latest_failure().unwrap();
        assert_eq!(second.plan_index, 1);
        assert_eq!(second.reason, "later");
    }

    proptest! {
        // Replaying the log yields identical contexts at every prefix.
        #[test]
        fn replay_reconstructs_contexts(results in proptest::collection::vec("[a-z ]{0,12}", 1..6)) {
            let plan = Plan::from_descriptions(0, results.iter().map(|r| format!("do {r}")));
            let mut channel = Channel::new();
            for (subtask, text) in plan.subtasks.iter().zip(&results) {
                channel.post(ChannelMessage::task_posted(subtask)).unwrap();
                let live = channel.context_for(subtask, ContextOptions::default()).unwrap();
                let replayed = Channel::replay(channel.messages()).unwrap();
                prop_assert_eq!(&replayed, &channel);
                prop_assert_eq!(replayed.context_for(subtask, ContextOptions::default()).unwrap(), live);
                channel.post(ChannelMessage::result(&subtask.subtask_id, "w", text.clone())).unwrap();
            }
            let seqs: Vec<u64> = channel.messages().iter().map(|m| m.seq).collect();
            prop_assert!(seqs.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
