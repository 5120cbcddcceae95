//! Trajectory evaluation, SFT filtering and preference-pair construction.
//!
//! Training data targets the planner only: SFT samples are planner prompts
//! with the plan that led to a correct answer, and preference pairs contrast
//! plans from passing and failing rollouts of the same question.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{render, PromptTemplates};
use crate::backend::{BackendError, ChatBackend, ChatMessage, ModelRequest};
use crate::harness::score_answer;
use crate::model::FORMAT_VERSION;
use crate::orchestrator::RunRecord;

/// Cosine scores must be strictly above this to pass.
pub const COSINE_THRESHOLD: f64 = 0.7;
pub const DEFAULT_ROLLOUTS_PER_QUESTION: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    #[serde(rename = "hotpotqa")]
    HotpotQa,
    #[serde(rename = "wikitablequestions")]
    WikiTableQuestions,
    Math,
    InfinityMm,
    Custom,
}

impl Dataset {
    pub fn name(self) -> &'static str {
        match self {
            Dataset::HotpotQa => "hotpotqa",
            Dataset::WikiTableQuestions => "wikitablequestions",
            Dataset::Math => "math",
            Dataset::InfinityMm => "infinity_mm",
            Dataset::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ExactMatch,
    CosineSim,
    Judge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub metric: Metric,
    pub score: f64,
    pub passed: bool,
}

/// Coarse failure groups used when summarizing error tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorGroup {
    PlannerError,
    WorkerError,
    LimitedToolCapability,
    RespondingError,
    QuestionAmbiguity,
    LimitedModelCapability,
}

impl ErrorGroup {
    pub fn label(self) -> &'static str {
        match self {
            ErrorGroup::PlannerError => "Planner Error",
            ErrorGroup::WorkerError => "Worker Error",
            ErrorGroup::LimitedToolCapability => "Limited Tool Capability",
            ErrorGroup::RespondingError => "Responding Error",
            ErrorGroup::QuestionAmbiguity => "Language/Question Ambiguity",
            ErrorGroup::LimitedModelCapability => "Limited Model Capability",
        }
    }
}

/// Failure-mode label attached to a failed trajectory by manual analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorTag {
    PlannerIncorrectPlan,
    PlannerSubtaskAmbiguity,
    WorkerToolSelection,
    ToolWebFailure,
    ToolDocumentFailure,
    ToolMultimodalFailure,
    ResponseFormat,
    ReasoningError,
    QuestionAmbiguity,
    Hallucination,
    ContextExceed,
    LimitedCoding,
}

impl ErrorTag {
    pub const ALL: [ErrorTag; 12] = [
        ErrorTag::PlannerIncorrectPlan,
        ErrorTag::PlannerSubtaskAmbiguity,
        ErrorTag::WorkerToolSelection,
        ErrorTag::ToolWebFailure,
        ErrorTag::ToolDocumentFailure,
        ErrorTag::ToolMultimodalFailure,
        ErrorTag::ResponseFormat,
        ErrorTag::ReasoningError,
        ErrorTag::QuestionAmbiguity,
        ErrorTag::Hallucination,
        ErrorTag::ContextExceed,
        ErrorTag::LimitedCoding,
    ];

    pub fn group(self) -> ErrorGroup {
        use ErrorTag::*;
        match self {
            PlannerIncorrectPlan | PlannerSubtaskAmbiguity => ErrorGroup::PlannerError,
            WorkerToolSelection => ErrorGroup::WorkerError,
            ToolWebFailure | ToolDocumentFailure | ToolMultimodalFailure => {
                ErrorGroup::LimitedToolCapability
            }
            ResponseFormat | ReasoningError => ErrorGroup::RespondingError,
            QuestionAmbiguity => ErrorGroup::QuestionAmbiguity,
            Hallucination | ContextExceed | LimitedCoding => ErrorGroup::LimitedModelCapability,
        }
    }

    pub fn label(self) -> &'static str {
        use ErrorTag::*;
        match self {
            PlannerIncorrectPlan => "Incorrect Plan",
            PlannerSubtaskAmbiguity => "Subtask Ambiguity",
            WorkerToolSelection => "Tool Selection Error",
            ToolWebFailure => "Web Toolkit Failure",
            ToolDocumentFailure => "Document Toolkit Failure",
            ToolMultimodalFailure => "Multimodal Toolkit Failure",
            ResponseFormat => "Response Format",
            ReasoningError => "Reasoning Error",
            QuestionAmbiguity => "Language/Question Ambiguity",
            Hallucination => "Hallucination",
            ContextExceed => "Context Exceed",
            LimitedCoding => "Limited Coding Capability",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub run: RunRecord,
    pub dataset: Dataset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_label: Option<ErrorTag>,
    /// Zero-based rollout index among runs of the same question.
    #[serde(default)]
    pub rollout: u32,
}

impl Trajectory {
    pub fn new(run: RunRecord, dataset: Dataset, gold_answer: Option<String>) -> Self {
        Self {
            run,
            dataset,
            gold_answer,
            eval: None,
            error_label: None,
            rollout: 0,
        }
    }

    pub fn question_id(&self) -> &str {
        &self.run.task_id
    }

    pub fn passed(&self) -> Option<bool> {
        self.eval.map(|e| e.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub planner_prompt: String,
    pub chosen_plan: String,
    pub rejected_plan: String,
    pub source_question_id: String,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TrajectoryError {
    #[error("trajectory {index} (question {question_id}) has not been evaluated")]
    Unevaluated { index: usize, question_id: String },
    #[error("rollouts mix questions `{first}` and `{other}`")]
    MixedQuestions { first: String, other: String },
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{metric:?} evaluation needs a gold answer")]
    MissingGold { metric: Metric },
    #[error("judge metric selected but no judge backend is configured")]
    NoJudge,
    #[error("judge verdict unparseable after retry: {reply:?}")]
    JudgeVerdict { reply: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Pluggable text similarity, for swapping in an embedding model.
pub trait TextSimilarity: Send + Sync {
    fn similarity(&self, a: &str, b: &str) -> f64;
}

/// Bag-of-words term-frequency cosine.
#[derive(Debug, Clone, Copy, Default)]
pub struct TermFrequencyCosine;

impl TextSimilarity for TermFrequencyCosine {
    fn similarity(&self, a: &str, b: &str) -> f64 {
        cosine_similarity(a, b)
    }
}

fn term_frequencies(text: &str) -> BTreeMap<String, f64> {
    let mut tf = BTreeMap::new();
    for token in text.to_lowercase().split_whitespace() {
        *tf.entry(token.to_string()).or_insert(0.0) += 1.0;
    }
    tf
}

/// Cosine of lowercase whitespace-token frequency vectors. Two empty texts
/// are identical (1.0); empty against non-empty scores 0.0.
pub fn cosine_similarity(a: &str, b: &str) -> f64 {
    let (ta, tb) = (term_frequencies(a), term_frequencies(b));
    match (ta.is_empty(), tb.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let dot: f64 = ta
        .iter()
        .filter_map(|(term, x)| tb.get(term).map(|y| x * y))
        .sum();
    let norm = |tf: &BTreeMap<String, f64>| tf.values().map(|v| v * v).sum::<f64>().sqrt();
    (dot / (norm(&ta) * norm(&tb))).clamp(0.0, 1.0)
}

pub fn cosine_passes(score: f64) -> bool {
    score > COSINE_THRESHOLD
}

/// How trajectories are scored.
#[derive(Clone)]
pub struct MetricConfig {
    pub metric: Metric,
    pub judge: Option<Arc<dyn ChatBackend>>,
    pub templates: Arc<PromptTemplates>,
    pub similarity: Arc<dyn TextSimilarity>,
}

impl MetricConfig {
    pub fn new(metric: Metric) -> Self {
        Self {
            metric,
            judge: None,
            templates: Arc::new(PromptTemplates::default()),
            similarity: Arc::new(TermFrequencyCosine),
        }
    }

    pub fn with_judge(mut self, judge: Arc<dyn ChatBackend>) -> Self {
        self.judge = Some(judge);
        self
    }
}

/// Reads a YES/NO verdict from the first word-like token that is one.
pub fn parse_verdict(reply: &str) -> Option<bool> {
    reply
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .find_map(|t| match t.to_ascii_uppercase().as_str() {
            "YES" => Some(true),
            "NO" => Some(false),
            _ => None,
        })
}

fn judge(cfg: &MetricConfig, prediction: &str, gold: &str) -> Result<bool, EvalError> {
    let backend = cfg.judge.as_ref().ok_or(EvalError::NoJudge)?;
    let mut messages = vec![ChatMessage::user(render(
        &cfg.templates.judge,
        &[("gold", gold), ("prediction", prediction)],
    ))];
    let mut reply = String::new();
    for attempt in 0..2 {
        if attempt > 0 {
            messages.push(ChatMessage::assistant(reply.clone()));
            messages.push(ChatMessage::user(cfg.templates.judge_reminder.clone()));
        }
        reply = backend
            .complete(&ModelRequest::new(messages.clone()))?
            .content_or_empty()
            .to_string();
        if let Some(verdict) = parse_verdict(&reply) {
            return Ok(verdict);
        }
    }
    Err(EvalError::JudgeVerdict { reply })
}

pub fn evaluate(prediction: &str, gold: Option<&str>, cfg: &MetricConfig) -> Result<EvalOutcome, EvalError> {
    let metric = cfg.metric;
    let gold = gold.ok_or(EvalError::MissingGold { metric })?;
    let (score, passed) = match metric {
        Metric::ExactMatch => {
            let ok = score_answer(prediction, gold);
            (if ok { 1.0 } else { 0.0 }, ok)
        }
        Metric::CosineSim => {
            let score = cfg.similarity.similarity(prediction, gold).clamp(0.0, 1.0);
            (score, cosine_passes(score))
        }
        Metric::Judge => {
            let ok = judge(cfg, prediction, gold)?;
            (if ok { 1.0 } else { 0.0 }, ok)
        }
    };
    Ok(EvalOutcome { metric, score, passed })
}

/// Scores the trajectory's final answer and stores the outcome on it.
pub fn evaluate_trajectory(trajectory: &mut Trajectory, cfg: &MetricConfig) -> Result<EvalOutcome, EvalError> {
    let outcome = evaluate(
        &trajectory.run.final_answer,
        trajectory.gold_answer.as_deref(),
        cfg,
    )?;
    trajectory.eval = Some(outcome);
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCount {
    pub total: usize,
    pub retained: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftSelection {
    pub retained: Vec<Trajectory>,
    pub counts: BTreeMap<Dataset, FilterCount>,
}

fn require_eval(trajectories: &[Trajectory]) -> Result<(), TrajectoryError> {
    match trajectories.iter().position(|t| t.eval.is_none()) {
        Some(index) => Err(TrajectoryError::Unevaluated {
            index,
            question_id: trajectories[index].question_id().to_string(),
        }),
        None => Ok(()),
    }
}

/// Keeps exactly the passing trajectories, in input order.
pub fn filter_sft(trajectories: &[Trajectory]) -> Result<SftSelection, TrajectoryError> {
    require_eval(trajectories)?;
    let mut counts: BTreeMap<Dataset, FilterCount> = BTreeMap::new();
    let mut retained = Vec::new();
    for t in trajectories {
        let count = counts.entry(t.dataset).or_default();
        count.total += 1;
        if t.passed() == Some(true) {
            count.retained += 1;
            retained.push(t.clone());
        }
    }
    for (dataset, c) in &counts {
        log::info!("sft filter {}: kept {} of {}", dataset.name(), c.retained, c.total);
    }
    Ok(SftSelection { retained, counts })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingPolicy {
    /// Upper bound on pairs per question; `None` keeps all of them.
    pub max_pairs_per_question: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSet {
    pub pairs: Vec<PreferencePair>,
    /// |chosen| x |rejected| before deduplication and capping.
    pub pre_dedup: usize,
}

/// The initial decomposition of a run: (user prompt, raw plan text).
fn decomposition(run: &RunRecord) -> Option<(&str, &str)> {
    let call = run.planner_calls.first()?;
    let prompt = call
        .messages
        .iter()
        .find(|m| m.role == crate::backend::Role::User)?;
    Some((prompt.content.as_str(), call.raw_text.as_str()))
}

/// Full bipartite pairing of passing against failing rollouts of one
/// question, deduplicated on identical (chosen, rejected) plan texts.
pub fn build_dpo_pairs(rollouts: &[Trajectory], policy: PairingPolicy) -> Result<PairSet, TrajectoryError> {
    require_eval(rollouts)?;
    if let Some(first) = rollouts.first() {
        if let Some(other) = rollouts.iter().find(|t| t.question_id() != first.question_id()) {
            return Err(TrajectoryError::MixedQuestions {
                first: first.question_id().to_string(),
                other: other.question_id().to_string(),
            });
        }
    }
    let plans = |passed: bool| -> Vec<(&str, &str)> {
        rollouts
            .iter()
            .filter(|t| t.passed() == Some(passed))
            .filter_map(|t| decomposition(&t.run))
            .collect()
    };
    let (chosen, rejected) = (plans(true), plans(false));
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::new();
    for (prompt, good) in &chosen {
        for (_, bad) in &rejected {
            if policy.max_pairs_per_question.is_some_and(|cap| pairs.len() >= cap) {
                break;
            }
            if seen.insert((*good, *bad)) {
                pairs.push(PreferencePair {
                    planner_prompt: prompt.to_string(),
                    chosen_plan: good.to_string(),
                    rejected_plan: bad.to_string(),
                    source_question_id: rollouts[0].question_id().to_string(),
                });
            }
        }
    }
    Ok(PairSet {
        pairs,
        pre_dedup: chosen.len() * rejected.len(),
    })
}

/// Groups trajectories by question id, keeping first-seen order.
pub fn group_by_question(trajectories: &[Trajectory]) -> Vec<(String, Vec<Trajectory>)> {
    let mut groups: Vec<(String, Vec<Trajectory>)> = Vec::new();
    for t in trajectories {
        match groups.iter_mut().find(|(id, _)| id == t.question_id()) {
            Some((_, members)) => members.push(t.clone()),
            None => groups.push((t.question_id().to_string(), vec![t.clone()])),
        }
    }
    groups
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub count: usize,
    pub avg_subtasks: f64,
    pub avg_steps: f64,
}

impl DatasetStats {
    /// A row in the form `name | count | avg subtasks | avg steps`.
    pub fn row(&self, name: &str) -> String {
        format!(
            "{name} | {} | {:.2} | {:.2}",
            self.count, self.avg_subtasks, self.avg_steps
        )
    }
}

/// Means of final-plan subtask counts and total worker steps.
pub fn dataset_stats(trajectories: &[Trajectory]) -> DatasetStats {
    let count = trajectories.len();
    if count == 0 {
        return DatasetStats {
            count,
            avg_subtasks: 0.0,
            avg_steps: 0.0,
        };
    }
    let subtasks: usize = trajectories
        .iter()
        .map(|t| t.run.final_plan().map_or(0, |p| p.subtasks.len()))
        .sum();
    let steps: u64 = trajectories.iter().map(|t| t.run.total_steps()).sum();
    DatasetStats {
        count,
        avg_subtasks: subtasks as f64 / count as f64,
        avg_steps: steps as f64 / count as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportHeader {
    pub format_version: u32,
    pub kind: String,
    pub rollouts_per_question: u32,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub format_version: u32,
    pub question_id: String,
    pub dataset: Dataset,
    pub system: String,
    pub prompt: String,
    pub completion: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpoRecord {
    pub format_version: u32,
    pub question_id: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

/// Planner sample for a retained trajectory: the call that produced the
/// final plan. Runs without any planner call yield nothing.
pub fn sft_record(trajectory: &Trajectory) -> Option<SftRecord> {
    let call = trajectory.run.planner_calls.last()?;
    let content_of = |role| {
        call.messages
            .iter()
            .find(|m| m.role == role)
            .map(|m| m.content.clone())
            .unwrap_or_default()
    };
    Some(SftRecord {
        format_version: FORMAT_VERSION,
        question_id: trajectory.question_id().to_string(),
        dataset: trajectory.dataset,
        system: content_of(crate::backend::Role::System),
        prompt: content_of(crate::backend::Role::User),
        completion: call.raw_text.clone(),
    })
}

pub fn dpo_record(pair: &PreferencePair) -> DpoRecord {
    DpoRecord {
        format_version: FORMAT_VERSION,
        question_id: pair.source_question_id.clone(),
        prompt: pair.planner_prompt.clone(),
        chosen: pair.chosen_plan.clone(),
        rejected: pair.rejected_plan.clone(),
    }
}

/// Writes a header line followed by one JSON object per record.
pub fn write_export<T: Serialize>(
    out: &mut impl Write,
    kind: &str,
    rollouts_per_question: u32,
    records: &[T],
) -> std::io::Result<()> {
    let header = ExportHeader {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        rollouts_per_question,
        records: records.len(),
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for record in records {
        writeln!(out, "{}", serde_json::to_string(record)?)?;
    }
    Ok(())
}

pub fn write_jsonl<T: Serialize>(out: &mut impl Write, items: &[T]) -> std::io::Result<()> {
    for item in items {
        writeln!(out, "{}", serde_json::to_string(item)?)?;
    }
    Ok(())
}

#[derive(Debug, Error)]
#[error("line {line}: {source}")]
pub struct JsonlError {
    pub line: usize,
    #[source]
    pub source: serde_json::Error,
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(input: impl BufRead) -> Result<Vec<T>, JsonlError> {
    let mut items = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| JsonlError {
            line: i + 1,
            source: serde_json::Error::io(e),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).map_err(|source| JsonlError { line: i + 1, source })?);
    }
    Ok(items)
}
