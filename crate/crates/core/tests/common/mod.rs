#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde_json::json;
use workforce::agents::{CallKind, PromptTemplates};
use workforce::backend::{Reply, ScriptEntry, ScriptedBackend};
use workforce::channel::MessageKind;
use workforce::model::{RunConfig, TaskSpec, WorkerDescriptor};
use workforce::orchestrator::{RoleBackends, RunRecord, Termination, Workforce};
use workforce::toolkit::{register_offline_suite, ScriptedExecutor, ToolContext, ToolRegistry};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut argv = vec!["workforce"];
    argv.extend_from_slice(args);
    let code = workforce::cli::main_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

pub fn description(plan: usize, step: usize) -> String {
    format!("plan{plan}-step{step}")
}

pub const SYNTH_MARKER: &str = "synthesize the final answer";

/// A workforce whose planner emits `plans[i]` on its i-th planning call and
/// whose single worker succeeds on subtask j of plan i iff `plans[i][j]`.
pub fn scripted_workforce(plans: &[Vec<bool>], k: u32) -> (Workforce, Arc<ScriptedBackend>, Arc<ScriptedBackend>) {
    let mut planner = vec![ScriptEntry::on_substring(SYNTH_MARKER, Reply::content("final answer"))];
    let mut worker = Vec::new();
    for (p, outcomes) in plans.iter().enumerate() {
        let body: String = (1..=outcomes.len())
            .map(|s| format!("<task>{}</task>", description(p, s)))
            .collect();
        planner.push(ScriptEntry::on_index(p as u64, Reply::content(format!("<tasks>{body}</tasks>"))));
        for (s, &ok) in outcomes.iter().enumerate() {
            let d = description(p, s + 1);
            let reply = if ok {
                Reply::content(format!("result of {d}"))
            } else {
                Reply::content(format!("TASK_FAILED: tool error in {d}"))
            };
            worker.push(ScriptEntry::on_substring(format!("<task>\n{d}\n</task>"), reply));
        }
    }
    let planner = Arc::new(ScriptedBackend::new(planner).unwrap());
    let worker = Arc::new(ScriptedBackend::new(worker).unwrap());
    let backends = RoleBackends {
        planner: planner.clone(),
        coordinator: Arc::new(ScriptedBackend::always(r#"{"assignee_id": "w"}"#)),
        worker: worker.clone(),
        worker_overrides: BTreeMap::new(),
    };
    let wf = Workforce::new(
        vec![WorkerDescriptor::new("w", "generalist", Vec::<String>::new())],
        backends,
        Arc::new(ToolRegistry::new()),
        Arc::new(PromptTemplates::default()),
        RunConfig {
            max_replans: k,
            ..RunConfig::default()
        },
        ToolContext::new(std::env::temp_dir()),
    )
    .unwrap();
    (wf, planner, worker)
}

/// What the bounded replanning pseudocode does, traced line by line.
#[derive(Debug, PartialEq, Eq)]
pub struct Trace {
    pub decompose_calls: usize,
    pub replan_calls: usize,
    pub failure_count: u32,
    pub exhausted: bool,
    pub synthesized: Vec<String>,
    pub worker_calls: usize,
    pub kinds: Vec<MessageKind>,
    pub failures: Vec<String>,
}

pub fn oracle(plans: &[Vec<bool>], k: u32) -> Trace {
    let mut t = Trace {
        decompose_calls: 0,
        replan_calls: 0,
        failure_count: 0,
        exhausted: false,
        synthesized: vec![],
        worker_calls: 0,
        kinds: vec![],
        failures: vec![],
    };
    let mut f = 0u32;
    let mut info: Vec<String> = vec![];
    let mut r: Vec<String> = vec![];
    let mut plan_no = 0usize;
    while f <= k {
        let mut b = false;
        if info.is_empty() {
            t.decompose_calls += 1;
        } else {
            t.replan_calls += 1;
        }
        let plan = &plans[plan_no];
        t.kinds.extend(std::iter::repeat_n(MessageKind::TaskPosted, plan.len()));
        r.clear();
        for (j, &ok) in plan.iter().enumerate() {
            let id = format!("p{plan_no}.s{}", j + 1);
            t.kinds.push(MessageKind::Assigned);
            t.worker_calls += 1;
            if !ok {
                t.kinds.push(MessageKind::FailurePosted);
                b = true;
                info.push(id);
                break;
            }
            r.push(id);
            t.kinds.push(MessageKind::ResultPosted);
        }
        plan_no += 1;
        if !b {
            break;
        }
        f += 1;
        if f <= k {
            t.kinds.push(MessageKind::ReplanTriggered);
        }
    }
    t.failure_count = f;
    t.exhausted = f == k + 1;
    t.synthesized = r;
    t.failures = info;
    t
}

/// The same quantities as [`Trace`], read back from a finished run.
pub fn observed(record: &RunRecord, worker_calls: u64) -> Trace {
    let calls = |kind: CallKind| record.planner_calls.iter().filter(|c| c.kind == kind).count();
    Trace {
        decompose_calls: calls(CallKind::Decompose),
        replan_calls: calls(CallKind::Replan),
        failure_count: record.failure_count,
        exhausted: record.terminated_by == Termination::BudgetExhausted,
        synthesized: record.synthesis_inputs.clone(),
        worker_calls: worker_calls as usize,
        kinds: record.channel_log.iter().map(|m| m.kind).collect(),
        failures: record.failures.entries.iter().map(|f| f.subtask_id.clone()).collect(),
    }
}

pub const SENTINEL_ARG: &str = "SENTINEL_ARG_S1";
pub const SENTINEL_OBS: &str = "SENTINEL_OBS_S1";
pub const RESULT_S1: &str = "RESULT_TEXT_S1";

/// Two subtasks; the first reads a file whose contents and call arguments
/// carry sentinels, then reports [`RESULT_S1`].
pub fn isolation_run(workspace: &std::path::Path) -> RunRecord {
    std::fs::write(workspace.join("notes.txt"), format!("{SENTINEL_OBS} hidden observation")).unwrap();
    let worker = ScriptedBackend::new(vec![
        ScriptEntry::on_substring(
            "<task>\nfirst subtask\n</task>",
            Reply::tool_call("read_local_document", json!({"path": "notes.txt", "marker": SENTINEL_ARG})),
        ),
        ScriptEntry::on_substring("<task>\nfirst subtask\n</task>", Reply::content(RESULT_S1)),
        ScriptEntry::on_substring("<task>\nsecond subtask\n</task>", Reply::content("RESULT_TEXT_S2")),
    ])
    .unwrap();
    let planner = ScriptedBackend::new(vec![
        ScriptEntry::on_substring(SYNTH_MARKER, Reply::content("answer")),
        ScriptEntry::any(Reply::content(
            "<tasks><task>first subtask</task><task>second subtask</task></tasks>",
        )),
    ])
    .unwrap();
    let mut tools = ToolRegistry::new();
    register_offline_suite(&mut tools, ScriptedExecutor::new()).unwrap();
    Workforce::new(
        vec![WorkerDescriptor::new("w", "reader", ["read_local_document"])],
        RoleBackends {
            planner: Arc::new(planner),
            coordinator: Arc::new(ScriptedBackend::always(r#"{"assignee_id": "w"}"#)),
            worker: Arc::new(worker),
            worker_overrides: BTreeMap::new(),
        },
        Arc::new(tools),
        Arc::new(PromptTemplates::default()),
        RunConfig::default(),
        ToolContext::new(workspace),
    )
    .unwrap()
    .run(&TaskSpec::new("t", "overall"))
}

/// Checks the isolation scenario: the second worker sees the first result
/// but none of the first subtask's tool traffic.
pub fn check_isolation(record: &RunRecord) -> Result<(), String> {
    if record.terminated_by != Termination::AllSubtasksDone {
        return Err(format!("run ended with {:?}", record.terminated_by));
    }
    let first = text(&record.subtask_traces[0].messages);
    if !first.contains(SENTINEL_OBS) || !first.contains(SENTINEL_ARG) {
        return Err("sentinels never reached the first worker, test is vacuous".into());
    }
    let second = &record.subtask_traces[1];
    if !second.worker_prompt().contains(RESULT_S1) {
        return Err("second worker prompt lacks the dependency result".into());
    }
    let places = [
        ("second worker", text(&second.messages)),
        ("coordinator replies", text(&second.coordinator_replies)),
        ("synthesis", text(&record.synthesis)),
        ("channel", text(&record.channel_log)),
        ("results", text(&record.results)),
    ];
    for (place, body) in places {
        for sentinel in [SENTINEL_OBS, SENTINEL_ARG] {
            if body.contains(sentinel) {
                return Err(format!("{sentinel} leaked into {place}"));
            }
        }
    }
    Ok(())
}

fn text<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).unwrap()
}
