use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::parse::parse_assignee;
use super::prompts::{render, PromptTemplates};
use super::{registry_block, AgentError};
use crate::backend::{ChatBackend, ChatMessage, ModelRequest};
use crate::model::{Subtask, WorkerDescriptor};

/// Outcome of one assignment, including how it was reached.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub worker: WorkerDescriptor,
    /// Re-asks issued after an unusable reply (0 or 1).
    pub reasks: u32,
    /// True when neither reply named a registered worker and the first
    /// registered worker was used instead.
    pub fallback: bool,
    pub replies: Vec<String>,
}

pub struct Coordinator {
    backend: Arc<dyn ChatBackend>,
    templates: Arc<PromptTemplates>,
}

impl Coordinator {
    pub fn new(backend: Arc<dyn ChatBackend>, templates: Arc<PromptTemplates>) -> Self {
        Self { backend, templates }
    }

    /// The coordinator sees the subtask and the registry only.
    pub fn prompt(&self, subtask: &Subtask, registry: &[WorkerDescriptor]) -> String {
        render(
            &self.templates.coordinator,
            &[
                ("content", subtask.description.as_str()),
                ("additional_info", "None"),
                ("workers", &registry_block(registry)),
            ],
        )
    }

    fn resolve<'a>(reply: &str, registry: &'a [WorkerDescriptor]) -> Option<&'a WorkerDescriptor> {
        let decision = parse_assignee(reply).ok()?;
        let id = decision
            .assignee_id
            .trim_start_matches('<')
            .trim_end_matches('>')
            .trim();
        registry.iter().find(|w| w.worker_id == id)
    }

    /// Picks a worker for `subtask`. Unusable replies get one re-ask listing
    /// the valid ids; a second miss falls back to the first worker.
    pub fn find_assignee(
        &self,
        subtask: &Subtask,
        registry: &[WorkerDescriptor],
    ) -> Result<Assignment, AgentError> {
        let first_worker = registry.first().ok_or(AgentError::EmptyRegistry)?;
        let mut messages = vec![
            ChatMessage::system(self.templates.coordinator_system.clone()),
            ChatMessage::user(self.prompt(subtask, registry)),
        ];
        let mut replies = Vec::new();
        for reasks in 0..2 {
            let response = self.backend.complete(&ModelRequest::new(messages.clone()))?;
            let reply = response.content_or_empty().to_string();
            replies.push(reply.clone());
            if let Some(worker) = Self::resolve(&reply, registry) {
                return Ok(Assignment {
                    worker: worker.clone(),
                    reasks,
                    fallback: false,
                    replies,
                });
            }
            let valid_ids = registry
                .iter()
                .map(|w| w.worker_id.as_str())
                .collect::<Vec<_>>()
                .join(", ");
            messages.push(ChatMessage::assistant(reply));
            messages.push(ChatMessage::user(render(
                &self.templates.coordinator_reask,
                &[("valid_ids", &valid_ids)],
            )));
        }
        log::warn!(
            "coordinator named no registered worker for {}; falling back to {}",
            subtask.subtask_id,
            first_worker.worker_id
        );
        Ok(Assignment {
            worker: first_worker.clone(),
            reasks: 1,
            fallback: true,
            replies,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Reply, ScriptEntry, ScriptedBackend};

    fn registry() -> Vec<WorkerDescriptor> {
        ["web", "doc", "code"]
            .iter()
            .map(|id| WorkerDescriptor::new(*id, format!("{id} worker"), ["calc"]))
            .collect()
    }

    fn coordinator(replies: &[&str]) -> (Coordinator, Arc<ScriptedBackend>) {
        let entries = replies
            .iter()
            .enumerate()
            .map(|(i, r)| ScriptEntry::on_index(i as u64, Reply::content(*r)))
            .collect();
        let backend = Arc::new(ScriptedBackend::new(entries).unwrap());
        (
            Coordinator::new(backend.clone(), Arc::new(PromptTemplates::default())),
            backend,
        )
    }

    #[test]
    fn direct_resolve() {
        let (c, _) = coordinator(&[r#"{"assignee_id":"doc"}"#]);
        let a = c.find_assignee(&Subtask::new("p0.s1", "read"), &registry()).unwrap();
        assert_eq!(a.worker.worker_id, "doc");
        assert_eq!((a.reasks, a.fallback), (0, false));
    }

    #[test]
    fn unknown_id_reasks_once() {
        let (c, backend) = coordinator(&[r#"{"assignee_id":"ghost"}"#, r#"{"assignee_id":"web"}"#]);
        let a = c.find_assignee(&Subtask::new("p0.s1", "search"), &registry()).unwrap();
        assert_eq!(a.worker.worker_id, "web");
        assert_eq!((a.reasks, a.fallback), (1, false));
        assert_eq!(backend.calls(), 2);
    }

    #[test]
    fn reask_lists_valid_ids() {
        let backend = Arc::new(
            ScriptedBackend::new(vec![
                ScriptEntry::on_substring("The valid IDs are: web, doc, code", Reply::content(r#"{"assignee_id":"code"}"#)),
                ScriptEntry::any(Reply::content("dunno")),
            ])
            .unwrap(),
        );
        let c = Coordinator::new(backend, Arc::new(PromptTemplates::default()));
        let a = c.find_assignee(&Subtask::new("p0.s1", "x"), &registry()).unwrap();
        assert_eq!(a.worker.worker_id, "code");
    }

    #[test]
    fn garbage_twice_falls_back() {
        let single = vec![WorkerDescriptor::new("only", "the only worker", ["calc"])];
        let (c, backend) = coordinator(&["garbage", "more garbage"]);
        let a = c.find_assignee(&Subtask::new("p0.s1", "x"), &single).unwrap();
        assert_eq!(a.worker.worker_id, "only");
        assert!(a.fallback);
        assert_eq!(backend.calls(), 2);
        assert_eq!(a.replies.len(), 2);
    }

    #[test]
    fn prompt_fixed_sections() {
        let (c, _) = coordinator(&[]);
        let prompt = c.prompt(&Subtask::new("p0.s1", "Extract it"), &registry());
        assert!(prompt.contains("==============================\nExtract it\n=============================="));
        assert!(prompt.contains("<web>:<web worker>:<tools: calc>\n<doc>"));
        assert!(prompt.contains(r#"{"assignee_id": "<ID>"}"#));
    }
}
