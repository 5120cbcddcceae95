//! Benchmark scoring and reporting: answer matching, pass@k, per-level
//! accuracy, replanning sweeps and error-tag summaries.

use std::collections::BTreeMap;
use std::sync::{Arc, LazyLock};

use regex::Regex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::PromptTemplates;
use crate::backend::{BernoulliWorkerBackend, ChatBackend, Reply, ScriptEntry, ScriptedBackend};
use crate::model::{RunConfig, TaskSpec, WorkerDescriptor};
use crate::orchestrator::{RoleBackends, RunRecord, Termination, Workforce};
use crate::toolkit::{ToolContext, ToolRegistry};
use crate::trajectory::{ErrorGroup, ErrorTag, Trajectory};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum HarnessError {
    #[error("pass@{k} needs at least {k} outcomes, got {have}")]
    NotEnoughOutcomes { have: usize, k: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("task {task_id} has no gold answer")]
    MissingGold { task_id: String },
    #[error("could not set up run: {0}")]
    Setup(String),
}

static THOUSANDS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[+-]?\d{1,3}(,\d{3})+(\.\d+)?$").expect("valid regex"));

const CURRENCY: &[char] = &['$', '€', '£', '¥', '₹'];

fn normalize(text: &str) -> String {
    let lowered = text.trim().to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.trim_end_matches('.').trim_end().to_string()
}

fn as_number(normalized: &str) -> Option<f64> {
    let bare = normalized.trim_matches(CURRENCY).trim();
    let bare = if THOUSANDS.is_match(bare) {
        bare.replace(',', "")
    } else {
        bare.to_string()
    };
    if bare.is_empty() || !bare.chars().all(|c| c.is_ascii_digit() || "+-.eE".contains(c)) {
        return None;
    }
    bare.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn atoms_match(a: &str, b: &str) -> bool {
    match (as_number(a), as_number(b)) {
        (Some(x), Some(y)) => x == y,
        _ => a == b,
    }
}

/// Quasi-exact answer match. Both sides are trimmed, casefolded, whitespace
/// collapsed and stripped of a trailing period; numbers compare by value
/// after dropping currency symbols and thousands separators; `,`/`;` lists
/// compare element-wise.
pub fn score_answer(prediction: &str, gold: &str) -> bool {
    let (p, g) = (normalize(prediction), normalize(gold));
    if atoms_match(&p, &g) {
        return true;
    }
    let is_list = |s: &str| s.contains(',') || s.contains(';');
    if !(is_list(&p) || is_list(&g)) {
        return false;
    }
    let split = |s: &str| -> Vec<String> { s.split([',', ';']).map(normalize).collect() };
    let (pa, ga) = (split(&p), split(&g));
    pa.len() == ga.len() && pa.iter().zip(&ga).all(|(x, y)| atoms_match(x, y))
}

/// True iff any of the first `k` outcomes succeeded.
pub fn pass_at_k(outcomes: &[bool], k: usize) -> Result<bool, HarnessError> {
    if k == 0 {
        return Err(HarnessError::ZeroK);
    }
    if outcomes.len() < k {
        return Err(HarnessError::NotEnoughOutcomes {
            have: outcomes.len(),
            k,
        });
    }
    Ok(outcomes[..k].iter().any(|&o| o))
}

fn round2(value: f64) -> f64 {
    (value * 100.0).round() / 100.0
}

fn percentage(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        round2(part as f64 * 100.0 / whole as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_answer: String,
    pub correct: bool,
    pub terminated_by: Termination,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u8>,
    pub passed: bool,
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbortedRun {
    pub task_id: String,
    pub run_index: u32,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: u32,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n_tasks: usize,
    pub pass_k: u32,
    /// Accuracy percentage per difficulty level, two decimals.
    pub per_level: BTreeMap<u8, f64>,
    /// Accuracy percentage over all tasks, two decimals.
    pub average: f64,
    pub tasks: Vec<TaskRow>,
    /// Aborted runs, counted as failures.
    pub aborted: Vec<AbortedRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepPoint>>,
}

impl BenchReport {
    pub fn from_rows(tasks: Vec<TaskRow>, pass_k: u32, aborted: Vec<AbortedRun>) -> Self {
        let mut by_level: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
        for row in &tasks {
            if let Some(level) = row.level {
                let entry = by_level.entry(level).or_default();
                entry.0 += usize::from(row.passed);
                entry.1 += 1;
            }
        }
        let passed = tasks.iter().filter(|r| r.passed).count();
        Self {
            n_tasks: tasks.len(),
            pass_k,
            per_level: by_level
                .into_iter()
                .map(|(level, (p, n))| (level, percentage(p, n)))
                .collect(),
            average: percentage(passed, tasks.len()),
            tasks,
            aborted,
            sweep: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    /// Human-readable table: one row per task, then the level summary.
    pub fn to_table(&self) -> String {
        let mut out = String::from("| Task | Level | Passed | Runs correct |\n|---|---|---|---|\n");
        for row in &self.tasks {
            let correct = row.runs.iter().filter(|r| r.correct).count();
            out.push_str(&format!(
                "| {} | {} | {} | {}/{} |\n",
                row.task_id,
                row.level.map_or("-".to_string(), |l| l.to_string()),
                if row.passed { "yes" } else { "no" },
                correct,
                row.runs.len()
            ));
        }
        out.push('\n');
        let mut header = String::from("|");
        let mut values = String::from("|");
        for (level, acc) in &self.per_level {
            header.push_str(&format!(" Level {level} |"));
            values.push_str(&format!(" {acc:.2} |"));
        }
        header.push_str(" Average |");
        values.push_str(&format!(" {:.2} |", self.average));
        let rule = format!("|{}", "---|".repeat(self.per_level.len() + 1));
        out.push_str(&format!("{header}\n{rule}\n{values}\n"));
        if !self.aborted.is_empty() {
            out.push_str("\nAborted runs (counted as failures):\n");
            for a in &self.aborted {
                out.push_str(&format!("- {} run {}: {}\n", a.task_id, a.run_index, a.reason));
            }
        }
        out
    }
}

/// A report plus every run it was computed from, grouped by task.
#[derive(Debug, Clone)]
pub struct BenchRun {
    pub report: BenchReport,
    pub records: Vec<Vec<RunRecord>>,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Setup(e.to_string()))
}

/// Runs every task `pass_k` times. `build` creates a fresh workforce for
/// (task, run index) so that stateful backends never leak between runs.
pub fn run_benchmark<F>(
    tasks: &[TaskSpec],
    build: F,
    pass_k: u32,
    jobs: usize,
) -> Result<BenchRun, HarnessError>
where
    F: Fn(&TaskSpec, u32) -> Result<Workforce, String> + Sync,
{
    if pass_k == 0 {
        return Err(HarnessError::ZeroK);
    }
    if let Some(task) = tasks.iter().find(|t| t.gold_answer.is_none()) {
        return Err(HarnessError::MissingGold {
            task_id: task.task_id.clone(),
        });
    }
    let jobs_list: Vec<(usize, u32)> = (0..tasks.len())
        .flat_map(|t| (0..pass_k).map(move |r| (t, r)))
        .collect();
    let records: Vec<Result<RunRecord, String>> = pool(jobs)?.install(|| {
        jobs_list
            .par_iter()
            .map(|&(t, r)| build(&tasks[t], r).map(|wf| wf.run(&tasks[t])))
            .collect()
    });
    let records = records
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(HarnessError::Setup)?;

    let mut grouped: Vec<Vec<RunRecord>> = Vec::with_capacity(tasks.len());
    let mut iter = records.into_iter();
    for _ in tasks {
        grouped.push(iter.by_ref().take(pass_k as usize).collect());
    }

    let mut rows = Vec::new();
    let mut aborted = Vec::new();
    for (task, runs) in tasks.iter().zip(&grouped) {
        let gold = task.gold_answer.as_deref().unwrap_or_default();
        let summaries: Vec<RunSummary> = runs
            .iter()
            .enumerate()
            .map(|(i, record)| {
                if record.is_aborted() {
                    aborted.push(AbortedRun {
                        task_id: task.task_id.clone(),
                        run_index: i as u32,
                        reason: record.abort_reason.clone().unwrap_or_default(),
                    });
                }
                RunSummary {
                    final_answer: record.final_answer.clone(),
                    correct: !record.is_aborted() && score_answer(&record.final_answer, gold),
                    terminated_by: record.terminated_by,
                }
            })
            .collect();
        let outcomes: Vec<bool> = summaries.iter().map(|s| s.correct).collect();
        rows.push(TaskRow {
            task_id: task.task_id.clone(),
            level: task.level,
            passed: pass_at_k(&outcomes, pass_k as usize)?,
            runs: summaries,
        });
    }
    Ok(BenchRun {
        report: BenchReport::from_rows(rows, pass_k, aborted),
        records: grouped,
    })
}

/// Parameters of a synthetic replanning sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Per-subtask success probability of the simulated worker.
    pub p: f64,
    pub trials: u32,
    pub seed: u64,
    pub subtasks_per_plan: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            p: 0.6,
            trials: 200,
            seed: 0,
            subtasks_per_plan: 3,
        }
    }
}

/// Seed of trial `trial`; every K value reuses it, so a trial that succeeds
/// with budget K also succeeds with any larger budget.
pub fn trial_seed(seed: u64, trial: u32) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (u64::from(trial).wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sweep_workforce(cfg: &SweepConfig, k: u32, seed: u64) -> Result<Workforce, String> {
    let plan: String = (1..=cfg.subtasks_per_plan)
        .map(|i| format!("<task>simulated subtask {i}</task>"))
        .collect();
    let planner = ScriptedBackend::new(vec![
        ScriptEntry::on_substring("synthesize the final answer", Reply::content("simulated answer"))
            .unlimited(),
        ScriptEntry::any(Reply::content(format!("<tasks>{plan}</tasks>"))).unlimited(),
    ])
    .map_err(|e| e.to_string())?;
    let backends = RoleBackends {
        planner: Arc::new(planner),
        coordinator: Arc::new(ScriptedBackend::always(r#"{"assignee_id": "sim"}"#)),
        worker: Arc::new(BernoulliWorkerBackend::new(cfg.p, seed)) as Arc<dyn ChatBackend>,
        worker_overrides: BTreeMap::new(),
    };
    Workforce::new(
        vec![WorkerDescriptor::new("sim", "simulated worker", Vec::<String>::new())],
        backends,
        Arc::new(ToolRegistry::new()),
        Arc::new(PromptTemplates::default()),
        RunConfig {
            max_replans: k,
            ..RunConfig::default()
        },
        ToolContext::new("."),
    )
    .map_err(|e| e.to_string())
}

/// Success rate (runs ending with every subtask done) for each budget K.
pub fn replanning_sweep(
    k_values: &[u32],
    cfg: &SweepConfig,
    jobs: usize,
) -> Result<Vec<SweepPoint>, HarnessError> {
    let task = TaskSpec::new("sweep", "simulated task");
    let pool = pool(jobs)?;
    let mut curve = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let successes: Result<Vec<bool>, String> = pool.install(|| {
            (0..cfg.trials)
                .into_par_iter()
                .map(|trial| {
                    let wf = sweep_workforce(cfg, k, trial_seed(cfg.seed, trial))?;
                    Ok(wf.run(&task).terminated_by == Termination::AllSubtasksDone)
                })
                .collect()
        });
        let successes = successes.map_err(HarnessError::Setup)?;
        let wins = successes.iter().filter(|&&s| s).count();
        curve.push(SweepPoint {
            k,
            success_rate: if cfg.trials == 0 {
                0.0
            } else {
                wins as f64 / f64::from(cfg.trials)
            },
        });
    }
    Ok(curve)
}

/// `K,rate` CSV with four-decimal rates.
pub fn sweep_csv(curve: &[SweepPoint]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["K", "rate"]).expect("in-memory write");
    for point in curve {
        writer
            .write_record([point.k.to_string(), format!("{:.4}", point.success_rate)])
            .expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Share {
    pub count: usize,
    /// Percentage of labeled failures, two decimals.
    pub percentage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub labeled_failures: usize,
    pub by_tag: BTreeMap<ErrorTag, Share>,
    pub by_group: BTreeMap<ErrorGroup, Share>,
}

impl ErrorSummary {
    pub fn to_table(&self) -> String {
        let mut out = String::from("| Error Type | Count | Proportion (%) |\n|---|---|---|\n");
        for (group, share) in &self.by_group {
            out.push_str(&format!(
                "| {} | {} | {:.2}% |\n",
                group.label(),
                share.count,
                share.percentage
            ));
            for (tag, share) in self.by_tag.iter().filter(|(t, _)| t.group() == *group) {
                out.push_str(&format!(
                    "|     {} | {} | {:.2}% |\n",
                    tag.label(),
                    share.count,
                    share.percentage
                ));
            }
        }
        out
    }
}

/// Shares of each error tag (and tag group) among labeled failures.
pub fn error_summary(trajectories: &[Trajectory]) -> ErrorSummary {
    let labels: Vec<ErrorTag> = trajectories
        .iter()
        .filter(|t| t.passed() != Some(true))
        .filter_map(|t| t.error_label)
        .collect();
    let total = labels.len();
    let mut tags: BTreeMap<ErrorTag, usize> = BTreeMap::new();
    let mut groups: BTreeMap<ErrorGroup, usize> = BTreeMap::new();
    for tag in &labels {
        *tags.entry(*tag).or_default() += 1;
        *groups.entry(tag.group()).or_default() += 1;
    }
    let share = |count: usize| Share {
        count,
        percentage: percentage(count, total),
    };
    ErrorSummary {
        labeled_failures: total,
        by_tag: tags.into_iter().map(|(t, c)| (t, share(c))).collect(),
        by_group: groups.into_iter().map(|(g, c)| (g, share(c))).collect(),
    }
}
