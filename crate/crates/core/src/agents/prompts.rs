//! Prompt templates with `{name}` placeholders.
//!
//! Defaults are compiled in from `templates/`. A directory holding files with
//! the same names overrides them one by one.

use std::path::Path;

macro_rules! templates {
    ($($field:ident => $file:literal),* $(,)?) => {
        /// Every prompt the agents render.
        #[derive(Debug, Clone, PartialEq, Eq)]
        pub struct PromptTemplates {
            $(pub $field: String,)*
        }

        impl Default for PromptTemplates {
            fn default() -> Self {
                Self {
                    $($field: include_str!(concat!("../../templates/", $file)).trim_end().to_string(),)*
                }
            }
        }

        impl PromptTemplates {
            /// File names understood by [`PromptTemplates::load_dir`].
            pub const FILES: &'static [&'static str] = &[$($file),*];

            /// Defaults, with any same-named file in `dir` taking precedence.
            pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
                let mut templates = Self::default();
                $(
                    let path = dir.join($file);
                    if path.exists() {
                        templates.$field = std::fs::read_to_string(&path)?.trim_end().to_string();
                    }
                )*
                Ok(templates)
            }
        }
    };
}

templates! {
    planner_system => "planner_system.txt",
    decompose => "decompose.txt",
    replan => "replan.txt",
    format_reminder => "format_reminder.txt",
    coordinator_system => "coordinator_system.txt",
    coordinator => "coordinator.txt",
    coordinator_reask => "coordinator_reask.txt",
    worker => "worker.txt",
    worker_self_assessment => "worker_self_assessment.txt",
    synthesis => "synthesis.txt",
    judge => "judge.txt",
    judge_reminder => "judge_reminder.txt",
}

/// Substitutes `{name}` placeholders in one pass. Substituted values are not
/// rescanned, and unknown `{...}` sequences are left untouched.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name_len = after
            .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
            .unwrap_or(after.len());
        let name = &after[..name_len];
        let closes = after[name_len..].starts_with('}');
        match vars.iter().find(|(k, _)| *k == name) {
            Some((_, value)) if closes && !name.is_empty() => {
                out.push_str(value);
                rest = &after[name_len + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Placeholder value for optional text that is absent, as in the transcripts.
pub fn or_none(value: Option<&str>) -> &str {
    match value {
        Some(v) if !v.trim().is_empty() => v,
        _ => "None",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pass_substitution() {
        assert_eq!(render("a {x} b", &[("x", "1")]), "a 1 b");
        assert_eq!(render("{x}{x}", &[("x", "{x}")]), "{x}{x}");
        assert_eq!(
            render(r#"{"assignee_id": "<ID>"} {unknown} {x"#, &[("x", "1")]),
            r#"{"assignee_id": "<ID>"} {unknown} {x"#
        );
        assert_eq!(render("ends with {", &[]), "ends with {");
    }

    #[test]
    fn defaults_keep_fixed_sections() {
        let t = PromptTemplates::default();
        assert!(t.decompose.contains("numbered list within <tasks> tags"));
        assert!(t.worker.contains("<dependency_results_info>"));
        assert!(t.worker.contains("<overall_task>"));
        assert!(t.worker.contains("<additional_info>"));
        assert!(t.coordinator.contains("assignee_id"));
        assert!(t.replan.contains("{failures}"));
        assert!(!t.planner_system.ends_with('\n'));
    }

    #[test]
    fn directory_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("synthesis.txt"), "Answer: {content}\n").unwrap();
        let t = PromptTemplates::load_dir(dir.path()).unwrap();
        assert_eq!(t.synthesis, "Answer: {content}");
        assert_eq!(t.decompose, PromptTemplates::default().decompose);
        assert_eq!(PromptTemplates::FILES.len(), 12);
    }
}
