mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use common::{observed, oracle, scripted_workforce};
use proptest::prelude::*;
use workforce::agents::PromptTemplates;
use workforce::backend::{ChatBackend, Reply, ScriptEntry, ScriptedBackend};
use workforce::channel::MessageKind;
use workforce::model::{RunConfig, TaskSpec, WorkerDescriptor};
use workforce::orchestrator::{AnnotationKind, RoleBackends, RunRecord, Termination, Workforce};
use workforce::toolkit::{ToolContext, ToolRegistry};

fn check(plans: &[Vec<bool>], k: u32) -> RunRecord {
    let (wf, planner, worker) = scripted_workforce(plans, k);
    let record = wf.run(&TaskSpec::new("t", "overall"));
    assert!(!record.is_aborted(), "{:?}", record.abort_reason);
    assert_eq!(observed(&record, worker.calls()), oracle(plans, k));
    // planning calls plus exactly one synthesis call
    assert_eq!(planner.calls() as usize, record.planner_calls.len() + 1);
    assert_eq!(record.final_answer, "final answer");
    record
}

#[test]
fn happy_path() {
    let record = check(&[vec![true, true, true]], 2);
    assert_eq!(record.failure_count, 0);
    assert_eq!(record.plans.len(), 1);
    assert_eq!(record.terminated_by, Termination::AllSubtasksDone);
}

#[test]
fn one_replan() {
    let record = check(&[vec![true, false, true], vec![true, true]], 2);
    assert_eq!(record.failure_count, 1);
    assert_eq!(record.plans.len(), 2);
    assert_eq!(record.replan_calls(), 1);
    assert_eq!(record.failures.len(), 1);
    assert_eq!(record.failures.entries[0].subtask_id, "p0.s2");
    assert_eq!(record.synthesis_inputs, ["p1.s1", "p1.s2"]);
    assert_eq!(record.terminated_by, Termination::AllSubtasksDone);
}

#[test]
fn exhaustion_at_k2() {
    let record = check(
        &[vec![false], vec![true, false], vec![true, true, false]],
        2,
    );
    assert_eq!(record.planner_calls.len(), 3);
    assert_eq!(record.replan_calls(), 2);
    assert_eq!(record.failure_count, 3);
    assert_eq!(record.terminated_by, Termination::BudgetExhausted);
    // synthesis still runs, over the partial results of the last plan
    assert_eq!(record.synthesis_inputs, ["p2.s1", "p2.s2"]);
    assert!(record.synthesis.is_some());
}

#[test]
fn k0_boundary() {
    let record = check(&[vec![true, false, true]], 0);
    assert_eq!(record.replan_calls(), 0);
    assert_eq!(record.failure_count, 1);
    assert_eq!(record.terminated_by, Termination::BudgetExhausted);
    assert_eq!(record.synthesis_inputs, ["p0.s1"]);
}

#[test]
fn replan_prompt_carries_all_failures_in_order() {
    let record = check(&[vec![false], vec![true, false], vec![true]], 2);
    let last = record.planner_calls.last().unwrap();
    let prompt = &last.messages[1].content;
    let a = prompt.find("tool error in plan0-step1").unwrap();
    let b = prompt.find("tool error in plan1-step2").unwrap();
    assert!(a < b);
}

#[test]
fn replay_is_byte_identical() {
    let plans = [vec![true, false], vec![true, true]];
    let a = scripted_workforce(&plans, 2).0.run(&TaskSpec::new("t", "q")).to_json_line();
    let b = scripted_workforce(&plans, 2).0.run(&TaskSpec::new("t", "q")).to_json_line();
    assert_eq!(a, b);
    let decoded: RunRecord = serde_json::from_str(&a).unwrap();
    assert_eq!(decoded.to_json_line(), a);
}

#[test]
fn channel_isolation() {
    let dir = tempfile::tempdir().unwrap();
    let record = common::isolation_run(dir.path());
    common::check_isolation(&record).unwrap();
}

#[test]
fn coordinator_fallback_is_annotated() {
    let planner = Arc::new(
        ScriptedBackend::new(vec![
            ScriptEntry::on_substring(common::SYNTH_MARKER, Reply::content("a")),
            ScriptEntry::any(Reply::content("<tasks><task>x</task></tasks>")),
        ])
        .unwrap(),
    );
    let wf = Workforce::new(
        vec![
            WorkerDescriptor::new("first", "one", Vec::<String>::new()),
            WorkerDescriptor::new("second", "two", Vec::<String>::new()),
        ],
        RoleBackends {
            planner,
            coordinator: Arc::new(ScriptedBackend::always("I cannot decide")),
            worker: Arc::new(ScriptedBackend::always("done")),
            worker_overrides: BTreeMap::new(),
        },
        Arc::new(ToolRegistry::new()),
        Arc::new(PromptTemplates::default()),
        RunConfig::default(),
        ToolContext::new("."),
    )
    .unwrap();
    let record = wf.run(&TaskSpec::new("t", "q"));
    assert_eq!(record.subtask_traces[0].worker_id, "first");
    assert_eq!(record.annotations[0].kind, AnnotationKind::CoordinatorFallback);
}

#[test]
fn worker_override_backend_is_used() {
    let planner = Arc::new(
        ScriptedBackend::new(vec![
            ScriptEntry::on_substring(common::SYNTH_MARKER, Reply::content("a")),
            ScriptEntry::any(Reply::content("<tasks><task>x</task></tasks>")),
        ])
        .unwrap(),
    );
    let special = Arc::new(ScriptedBackend::always("from override"));
    let mut overrides: BTreeMap<String, Arc<dyn ChatBackend>> = BTreeMap::new();
    overrides.insert("w".into(), special.clone());
    let wf = Workforce::new(
        vec![WorkerDescriptor::new("w", "one", Vec::<String>::new())],
        RoleBackends {
            planner,
            coordinator: Arc::new(ScriptedBackend::always(r#"{"assignee_id": "w"}"#)),
            worker: Arc::new(ScriptedBackend::new(vec![]).unwrap()),
            worker_overrides: overrides,
        },
        Arc::new(ToolRegistry::new()),
        Arc::new(PromptTemplates::default()),
        RunConfig::default(),
        ToolContext::new("."),
    )
    .unwrap();
    let record = wf.run(&TaskSpec::new("t", "q"));
    assert_eq!(record.results[0].result_text, "from override");
    assert_eq!(special.calls(), 1);
}

#[test]
fn worker_transport_error_aborts() {
    let planner = Arc::new(
        ScriptedBackend::new(vec![
            ScriptEntry::on_substring(common::SYNTH_MARKER, Reply::content("a")),
            ScriptEntry::any(Reply::content("<tasks><task>x</task></tasks>")),
        ])
        .unwrap(),
    );
    let wf = Workforce::new(
        vec![WorkerDescriptor::new("w", "one", Vec::<String>::new())],
        RoleBackends {
            planner: planner.clone(),
            coordinator: Arc::new(ScriptedBackend::always(r#"{"assignee_id": "w"}"#)),
            worker: Arc::new(ScriptedBackend::new(vec![]).unwrap()),
            worker_overrides: BTreeMap::new(),
        },
        Arc::new(ToolRegistry::new()),
        Arc::new(PromptTemplates::default()),
        RunConfig::default(),
        ToolContext::new("."),
    )
    .unwrap();
    let record = wf.run(&TaskSpec::new("t", "q"));
    assert_eq!(record.terminated_by, Termination::Aborted);
    assert!(record.synthesis.is_none());
    assert_eq!(planner.calls(), 1);
    assert_eq!(record.results.len(), 1);
}

fn plans_strategy() -> impl Strategy<Value = (Vec<Vec<bool>>, u32)> {
    (0u32..4).prop_flat_map(|k| {
        (
            proptest::collection::vec(
                proptest::collection::vec(proptest::bool::weighted(0.7), 1..5),
                (k + 1) as usize,
            ),
            Just(k),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn matches_oracle_for_random_outcomes((plans, k) in plans_strategy()) {
        let (wf, planner, worker) = scripted_workforce(&plans, k);
        let record = wf.run(&TaskSpec::new("t", "q"));
        prop_assert_eq!(observed(&record, worker.calls()), oracle(&plans, k));
        prop_assert!(record.planner_calls.len() as u32 <= k + 1);
        prop_assert_eq!(planner.calls() as usize, record.planner_calls.len() + 1);
        prop_assert_eq!(record.plans.len(), record.replan_calls() + 1);
        prop_assert_eq!(
            record.terminated_by == Termination::BudgetExhausted,
            record.failure_count == k + 1
        );

        // prefix property: a failure at subtask j follows results for exactly s1..s(j-1)
        for failure in record.channel_log.iter().filter(|m| m.kind == MessageKind::FailurePosted) {
            let id = failure.subtask_id.clone().unwrap();
            let (plan, ordinal) = id[1..].split_once(".s").unwrap();
            let ordinal: usize = ordinal.parse().unwrap();
            let done: Vec<String> = record
                .channel_log
                .iter()
                .filter(|m| m.kind == MessageKind::ResultPosted)
                .filter_map(|m| m.subtask_id.clone())
                .filter(|s| s.starts_with(&format!("p{plan}.")))
                .collect();
            let expected: Vec<String> = (1..ordinal).map(|i| format!("p{plan}.s{i}")).collect();
            prop_assert_eq!(done, expected);
        }
    }
}
