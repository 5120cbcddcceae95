//! Command-line front end: configuration loading and the `run`, `bench`,
//! `synth`, `pairs` and `sweep` commands.
//!
//! Exit codes: 0 on success, 1 on configuration or usage errors, 2 when any
//! run aborted.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::PromptTemplates;
use crate::backend::{
    BernoulliWorkerBackend, ChatBackend, ScriptedBackend, TraceSink, TracingBackend, WireBackend,
    WireConfig,
};
use crate::harness::{replanning_sweep, run_benchmark, sweep_csv, trial_seed, SweepConfig};
use crate::model::{RunConfig, TaskSpec, WorkerDescriptor};
use crate::orchestrator::{RoleBackends, Workforce};
use crate::toolkit::{register_offline_suite, ExecutorEntry, ScriptedExecutor, ToolContext, ToolRegistry};
use crate::trajectory::{
    build_dpo_pairs, dpo_record, evaluate_trajectory, filter_sft, group_by_question, read_jsonl,
    sft_record, write_export, write_jsonl, Dataset, Metric, MetricConfig, PairingPolicy, Trajectory,
    DEFAULT_ROLLOUTS_PER_QUESTION,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_ABORTED: i32 = 2;

/// How to reach the model behind one role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    Scripted { script: PathBuf },
    Wire(WireConfig),
    /// Simulated worker that succeeds with probability `p`.
    Bernoulli { p: f64, seed: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(default)]
    pub workspace: Option<PathBuf>,
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Directory of prompt template overrides.
    #[serde(default)]
    pub templates: Option<PathBuf>,
    /// JSON list of canned code-execution outputs.
    #[serde(default)]
    pub executor: Option<PathBuf>,
}

/// Config file contents. Backend keys are `planner`, `coordinator`,
/// `worker`, `worker:<id>` for a per-worker override, and `default` as a
/// fallback for any role without its own entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub backends: BTreeMap<String, BackendSpec>,
    pub workers: Vec<WorkerDescriptor>,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub judge: Option<BackendSpec>,
    #[serde(default)]
    pub metric: Option<Metric>,
    #[serde(default)]
    pub dataset: Option<Dataset>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{what} not found: {}", path.display())]
    MissingPath { what: String, path: PathBuf },
    #[error("{0}")]
    Invalid(String),
}

fn parse_error(path: &Path, err: serde_json::Error) -> ConfigError {
    ConfigError::Parse {
        path: path.to_path_buf(),
        line: err.line(),
        column: err.column(),
        message: err.to_string(),
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn require(what: &str, path: &Path) -> Result<(), ConfigError> {
    if path.exists() {
        Ok(())
    } else {
        Err(ConfigError::MissingPath {
            what: what.to_string(),
            path: path.to_path_buf(),
        })
    }
}

/// A validated configuration with relative paths resolved against the
/// config file's directory.
pub struct LoadedConfig {
    pub config: AppConfig,
    pub templates: Arc<PromptTemplates>,
    pub tools: Arc<ToolRegistry>,
    pub tool_ctx: ToolContext,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: AppConfig = serde_json::from_str(&text).map_err(|e| parse_error(path, e))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();

        for (role, spec) in config
            .backends
            .iter_mut()
            .map(|(k, v)| (k.clone(), v))
            .chain(config.judge.iter_mut().map(|v| ("judge".to_string(), v)))
        {
            if let BackendSpec::Scripted { script } = spec {
                *script = resolve(&base, script);
                require(&format!("script for `{role}`"), script)?;
            }
        }
        let paths = &mut config.paths;
        for (what, slot) in [
            ("workspace", &mut paths.workspace),
            ("corpus", &mut paths.corpus),
            ("templates", &mut paths.templates),
            ("executor", &mut paths.executor),
        ] {
            if let Some(p) = slot {
                *p = resolve(&base, p);
                require(what, p)?;
            }
        }
        if let Some(p) = &mut paths.output {
            *p = resolve(&base, p);
        }
        config.run.workspace_dir = match &paths.workspace {
            Some(p) => p.clone(),
            None => resolve(&base, &config.run.workspace_dir),
        };
        config
            .run
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;

        if config.workers.is_empty() {
            return Err(ConfigError::Invalid("config lists no workers".into()));
        }
        for key in config.backends.keys() {
            let known = match key.strip_prefix("worker:") {
                Some(id) => config.workers.iter().any(|w| w.worker_id == id),
                None => ["planner", "coordinator", "worker", "default"].contains(&key.as_str()),
            };
            if !known {
                return Err(ConfigError::Invalid(format!("unknown backend role `{key}`")));
            }
        }
        for role in ["planner", "coordinator", "worker"] {
            if !config.backends.contains_key(role) && !config.backends.contains_key("default") {
                return Err(ConfigError::Invalid(format!("no backend configured for `{role}`")));
            }
        }

        let templates = match &config.paths.templates {
            Some(dir) => PromptTemplates::load_dir(dir).map_err(|source| ConfigError::Io {
                path: dir.clone(),
                source,
            })?,
            None => PromptTemplates::default(),
        };
        let executor = match &config.paths.executor {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.clone(),
                    source,
                })?;
                let entries: Vec<ExecutorEntry> =
                    serde_json::from_str(&text).map_err(|e| parse_error(p, e))?;
                ScriptedExecutor::from_entries(entries).map_err(ConfigError::Invalid)?
            }
            None => ScriptedExecutor::new(),
        };
        let mut tools = ToolRegistry::new();
        register_offline_suite(&mut tools, executor).map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let mut tool_ctx = ToolContext::new(config.run.workspace_dir.clone())
            .with_blocklist(config.run.blocklist.clone());
        if let Some(corpus) = &config.paths.corpus {
            tool_ctx = tool_ctx.with_corpus(corpus.clone());
        }
        Ok(Self {
            config,
            templates: Arc::new(templates),
            tools: Arc::new(tools),
            tool_ctx,
        })
    }

    fn spec_for(&self, role: &str) -> Option<&BackendSpec> {
        self.config
            .backends
            .get(role)
            .or_else(|| self.config.backends.get("default"))
    }

    /// Fresh backends and workforce for one run. Roles with identical specs
    /// share one backend instance, so a single script can drive every role.
    pub fn build_workforce(&self, trace: Option<&TraceSink>) -> Result<Workforce, String> {
        self.build_workforce_for(trace, 0)
    }

    /// Like [`build_workforce`](Self::build_workforce) for the given rollout
    /// of a task: scripts enable their `rollout`-matched entries and
    /// simulated workers derive a per-rollout seed.
    pub fn build_workforce_for(&self, trace: Option<&TraceSink>, rollout: u32) -> Result<Workforce, String> {
        let mut cache: BTreeMap<String, Arc<dyn ChatBackend>> = BTreeMap::new();
        let mut instance = |spec: &BackendSpec| -> Result<Arc<dyn ChatBackend>, String> {
            let key = serde_json::to_string(spec).map_err(|e| e.to_string())?;
            if let Some(backend) = cache.get(&key) {
                return Ok(backend.clone());
            }
            let backend = instantiate(spec, rollout)?;
            cache.insert(key, backend.clone());
            Ok(backend)
        };
        let wrap = |role: &str, backend: Arc<dyn ChatBackend>| -> Arc<dyn ChatBackend> {
            match trace {
                Some(sink) => Arc::new(TracingBackend::new(backend, role, sink.clone())),
                None => backend,
            }
        };
        let mut get = |role: &str| -> Result<Arc<dyn ChatBackend>, String> {
            let spec = self
                .spec_for(role)
                .ok_or_else(|| format!("no backend configured for `{role}`"))?
                .clone();
            Ok(wrap(role, instance(&spec)?))
        };
        let planner = get("planner")?;
        let coordinator = get("coordinator")?;
        let worker = get("worker")?;
        let mut worker_overrides = BTreeMap::new();
        for key in self.config.backends.keys() {
            if let Some(id) = key.strip_prefix("worker:") {
                worker_overrides.insert(id.to_string(), get(key)?);
            }
        }
        Workforce::new(
            self.config.workers.clone(),
            RoleBackends {
                planner,
                coordinator,
                worker,
                worker_overrides,
            },
            self.tools.clone(),
            self.templates.clone(),
            self.config.run.clone(),
            self.tool_ctx.clone(),
        )
        .map_err(|e| e.to_string())
    }

    pub fn metric_config(&self, metric: Metric) -> Result<MetricConfig, String> {
        let mut cfg = MetricConfig::new(metric);
        cfg.templates = self.templates.clone();
        if let Some(spec) = &self.config.judge {
            cfg = cfg.with_judge(instantiate(spec, 0)?);
        }
        Ok(cfg)
    }
}

fn instantiate(spec: &BackendSpec, rollout: u32) -> Result<Arc<dyn ChatBackend>, String> {
    Ok(match spec {
        BackendSpec::Scripted { script } => Arc::new(
            ScriptedBackend::from_path(script)
                .map_err(|e| format!("{}: {e}", script.display()))?
                .named(script.display().to_string())
                .for_rollout(rollout),
        ),
        BackendSpec::Wire(cfg) => Arc::new(WireBackend::new(cfg.clone()).map_err(|e| e.to_string())?),
        BackendSpec::Bernoulli { p, seed } => {
            let seed = if rollout == 0 { *seed } else { trial_seed(*seed, rollout) };
            Arc::new(BernoulliWorkerBackend::new(*p, seed))
        }
    })
}

/// One line of a task suite: a task plus optional scoring hints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteEntry {
    #[serde(flatten)]
    pub task: TaskSpec,
    #[serde(default)]
    pub dataset: Option<Dataset>,
    #[serde(default)]
    pub metric: Option<Metric>,
}

pub fn load_suite(path: &Path) -> Result<Vec<SuiteEntry>, ConfigError> {
    let file = fs::File::open(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let entries: Vec<SuiteEntry> = read_jsonl(BufReader::new(file)).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        line: e.line,
        column: e.source.column(),
        message: e.source.to_string(),
    })?;
    for entry in &entries {
        entry
            .task
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
    }
    Ok(entries)
}

/// `--task` accepts a JSON task file, a plain-text file, or inline text.
pub fn load_task(arg: &str) -> Result<TaskSpec, ConfigError> {
    let path = Path::new(arg);
    let task = if path.is_file() {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| parse_error(path, e))?
        } else {
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "task".into());
            TaskSpec::new(id, text.trim())
        }
    } else {
        TaskSpec::new("inline", arg)
    };
    task.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(task)
}

#[derive(Debug, Parser)]
#[command(name = "workforce", about = "Planner/coordinator/worker task orchestration", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one task and write its trajectory
    Run(RunArgs),
    /// Score a task suite with pass@k
    Bench(BenchArgs),
    /// Run a suite and write evaluated trajectories
    Synth(SynthArgs),
    /// Build SFT samples and preference pairs from evaluated trajectories
    Pairs(PairsArgs),
    /// Success rate against replanning budget with a simulated worker
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Config file (JSON)
    #[arg(long)]
    pub config: PathBuf,
    /// Task: a JSON task file, a text file, or inline text
    #[arg(long)]
    pub task: String,
    /// Print redacted backend request/response lines to stderr
    #[arg(long, default_value_t = false)]
    pub trace: bool,
    /// Trajectory output file [default: <paths.output>/<task_id>.jsonl]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Task suite (JSONL, one task per line)
    #[arg(long)]
    pub suite: PathBuf,
    /// Config file (JSON)
    #[arg(long)]
    pub config: PathBuf,
    /// Runs per task; a task passes if any run is correct [default: run.pass_k]
    #[arg(long)]
    pub pass_k: Option<u32>,
    /// Output directory for report.json, report.md and runs.jsonl
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Parallel runs
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Task suite (JSONL, one task per line)
    #[arg(long)]
    pub suite: PathBuf,
    /// Config file (JSON)
    #[arg(long)]
    pub config: PathBuf,
    /// Output trajectory file (JSONL)
    #[arg(long)]
    pub out: PathBuf,
    /// Rollouts per task
    #[arg(long, default_value_t = 1)]
    pub rollouts: u32,
    /// Parallel runs
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct PairsArgs {
    /// Evaluated trajectories (JSONL)
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory for sft.jsonl and dpo.jsonl
    #[arg(long)]
    pub out: PathBuf,
    /// Rollouts expected per question, recorded in the output headers
    #[arg(long, default_value_t = DEFAULT_ROLLOUTS_PER_QUESTION)]
    pub rollouts_per_question: u32,
    /// Cap on preference pairs per question [default: unlimited]
    #[arg(long)]
    pub max_pairs_per_question: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Largest replanning budget K; budgets 0..=K are swept
    #[arg(long, default_value_t = 3)]
    pub k_max: u32,
    /// Trials per budget
    #[arg(long, default_value_t = 200)]
    pub trials: u32,
    /// Per-subtask success probability of the simulated worker
    #[arg(long, default_value_t = 0.6)]
    pub p: f64,
    /// Base seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Subtasks per simulated plan
    #[arg(long, default_value_t = 3)]
    pub subtasks: usize,
    /// CSV output file (also printed to stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Parallel trials
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

/// Errors that end a command, mapped to exit codes.
#[derive(Debug, Error)]
enum Failure {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

/// Entry point used by the binary and by tests. Returns the exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a, out, err),
        Command::Bench(a) => cmd_bench(a, out, err),
        Command::Synth(a) => cmd_synth(a, out, err),
        Command::Pairs(a) => cmd_pairs(a, out, err),
        Command::Sweep(a) => cmd_sweep(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
    }
}

fn cmd_run(args: RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Failure> {
    let loaded = LoadedConfig::load(&args.config)?;
    let task = load_task(&args.task)?;
    let sink = args.trace.then(TraceSink::new);
    let workforce = loaded.build_workforce(sink.as_ref()).map_err(Failure::Usage)?;
    let record = workforce.run(&task);

    if let Some(sink) = &sink {
        for line in sink.lines() {
            let _ = writeln!(err, "{line}");
        }
    }
    let path = args.out.unwrap_or_else(|| {
        loaded
            .config
            .paths
            .output
            .clone()
            .unwrap_or_else(|| PathBuf::from("."))
            .join(format!("{}.jsonl", task.task_id))
    });
    write_file(&path, format!("{}\n", record.to_json_line()).as_bytes())?;

    if record.is_aborted() {
        let _ = writeln!(
            err,
            "run aborted: {}",
            record.abort_reason.as_deref().unwrap_or("unknown reason")
        );
        return Ok(EXIT_ABORTED);
    }
    let _ = writeln!(out, "{}", record.final_answer);
    let _ = writeln!(
        err,
        "terminated by {:?} after {} failure(s); trajectory written to {}",
        record.terminated_by,
        record.failure_count,
        path.display()
    );
    Ok(EXIT_OK)
}

fn cmd_bench(args: BenchArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Failure> {
    let loaded = LoadedConfig::load(&args.config)?;
    let tasks: Vec<TaskSpec> = load_suite(&args.suite)?.into_iter().map(|e| e.task).collect();
    let pass_k = args.pass_k.unwrap_or(loaded.config.run.pass_k);
    let bench = run_benchmark(&tasks, |_, run| loaded.build_workforce_for(None, run), pass_k, args.jobs)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let table = bench.report.to_table();
    let _ = write!(out, "{table}");
    if let Some(dir) = &args.out {
        write_file(&dir.join("report.json"), format!("{}\n", bench.report.to_json()).as_bytes())?;
        write_file(&dir.join("report.md"), table.as_bytes())?;
        let mut runs = Vec::new();
        let flat: Vec<_> = bench.records.iter().flatten().cloned().collect();
        write_jsonl(&mut runs, &flat).map_err(io_err(dir))?;
        write_file(&dir.join("runs.jsonl"), &runs)?;
    }
    if bench.report.aborted.is_empty() {
        Ok(EXIT_OK)
    } else {
        let _ = writeln!(err, "{} run(s) aborted", bench.report.aborted.len());
        Ok(EXIT_ABORTED)
    }
}

fn cmd_synth(args: SynthArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Failure> {
    let loaded = LoadedConfig::load(&args.config)?;
    let entries = load_suite(&args.suite)?;
    let default_metric = loaded.config.metric.unwrap_or(Metric::ExactMatch);
    let default_dataset = loaded.config.dataset.unwrap_or(Dataset::Custom);

    let mut jobs = Vec::new();
    for entry in &entries {
        if entry.task.gold_answer.is_none() {
            let _ = writeln!(
                err,
                "warning: skipping task {}: no gold answer for {:?}",
                entry.task.task_id,
                entry.metric.unwrap_or(default_metric)
            );
            continue;
        }
        for rollout in 0..args.rollouts {
            jobs.push((entry, rollout));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let runs: Result<Vec<_>, String> = pool.install(|| {
        jobs.par_iter()
            .map(|(entry, rollout)| {
                let record = loaded.build_workforce_for(None, *rollout)?.run(&entry.task);
                let mut t = Trajectory::new(
                    record,
                    entry.dataset.unwrap_or(default_dataset),
                    entry.task.gold_answer.clone(),
                );
                t.rollout = *rollout;
                let metric = loaded.metric_config(entry.metric.unwrap_or(default_metric))?;
                let eval = evaluate_trajectory(&mut t, &metric).map_err(|e| e.to_string());
                Ok((t, eval.err()))
            })
            .collect()
    });
    let mut trajectories = Vec::new();
    let mut aborted = 0;
    for (t, eval_error) in runs.map_err(Failure::Usage)? {
        if let Some(e) = eval_error {
            let _ = writeln!(
                err,
                "warning: excluding {} rollout {}: {e}",
                t.question_id(),
                t.rollout
            );
            continue;
        }
        aborted += usize::from(t.run.is_aborted());
        trajectories.push(t);
    }
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &trajectories).map_err(io_err(&args.out))?;
    write_file(&args.out, &buf)?;
    let passed = trajectories.iter().filter(|t| t.passed() == Some(true)).count();
    let _ = writeln!(
        out,
        "wrote {} trajectories ({} passed) to {}",
        trajectories.len(),
        passed,
        args.out.display()
    );
    Ok(if aborted > 0 { EXIT_ABORTED } else { EXIT_OK })
}

fn cmd_pairs(args: PairsArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Failure> {
    let file = fs::File::open(&args.input).map_err(io_err(&args.input))?;
    let trajectories: Vec<Trajectory> = read_jsonl(BufReader::new(file)).map_err(|e| {
        Failure::Config(ConfigError::Parse {
            path: args.input.clone(),
            line: e.line,
            column: e.source.column(),
            message: e.source.to_string(),
        })
    })?;
    let selection = filter_sft(&trajectories).map_err(|e| Failure::Usage(e.to_string()))?;
    let sft: Vec<_> = selection.retained.iter().filter_map(sft_record).collect();

    let policy = PairingPolicy {
        max_pairs_per_question: args.max_pairs_per_question,
    };
    let mut dpo = Vec::new();
    let mut pre_dedup = 0;
    for (question, rollouts) in group_by_question(&trajectories) {
        if rollouts.len() != args.rollouts_per_question as usize {
            let _ = writeln!(
                err,
                "warning: question {question} has {} rollouts, expected {}",
                rollouts.len(),
                args.rollouts_per_question
            );
        }
        let set = build_dpo_pairs(&rollouts, policy).map_err(|e| Failure::Usage(e.to_string()))?;
        pre_dedup += set.pre_dedup;
        dpo.extend(set.pairs.iter().map(dpo_record));
    }

    let mut sft_buf = Vec::new();
    write_export(&mut sft_buf, "sft", args.rollouts_per_question, &sft).map_err(io_err(&args.out))?;
    write_file(&args.out.join("sft.jsonl"), &sft_buf)?;
    let mut dpo_buf = Vec::new();
    write_export(&mut dpo_buf, "dpo", args.rollouts_per_question, &dpo).map_err(io_err(&args.out))?;
    write_file(&args.out.join("dpo.jsonl"), &dpo_buf)?;

    for (dataset, count) in &selection.counts {
        let _ = writeln!(out, "{}: kept {} of {}", dataset.name(), count.retained, count.total);
    }
    let _ = writeln!(out, "sft records: {}", sft.len());
    let _ = writeln!(out, "dpo pairs: {} ({} before dedup)", dpo.len(), pre_dedup);
    Ok(EXIT_OK)
}

fn cmd_sweep(args: SweepArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    if !(0.0..=1.0).contains(&args.p) {
        return Err(Failure::Usage(format!("--p must be within [0, 1], got {}", args.p)));
    }
    if args.subtasks == 0 {
        return Err(Failure::Usage("--subtasks must be at least 1".into()));
    }
    let cfg = SweepConfig {
        p: args.p,
        trials: args.trials,
        seed: args.seed,
        subtasks_per_plan: args.subtasks,
    };
    let ks: Vec<u32> = (0..=args.k_max).collect();
    let curve = replanning_sweep(&ks, &cfg, args.jobs).map_err(|e| Failure::Usage(e.to_string()))?;
    let csv = sweep_csv(&curve);
    let _ = write!(out, "{csv}");
    if let Some(path) = &args.out {
        write_file(path, csv.as_bytes())?;
    }
    Ok(EXIT_OK)
}

pub fn help_text(subcommand: Option<&str>) -> String {
    use clap::CommandFactory;
    let mut command = Cli::command();
    match subcommand {
        None => command.render_help().to_string(),
        Some(name) => command
            .find_subcommand_mut(name)
            .map(|c| c.render_help().to_string())
            .unwrap_or_default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let mut argv = vec!["workforce"];
        argv.extend_from_slice(args);
        let code = main_with(argv, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(&["bogus"]).0, EXIT_USAGE);
        assert_eq!(run(&["run", "--task", "x"]).0, EXIT_USAGE);
        let (code, out, _) = run(&["--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("sweep"));
    }

    #[test]
    fn sweep_prints_csv() {
        let (code, out, _) = run(&["sweep", "--k-max", "1", "--trials", "10", "--p", "1.0"]);
        assert_eq!(code, EXIT_OK);
        assert_eq!(out, "K,rate\n0,1.0000\n1,1.0000\n");
        assert_eq!(run(&["sweep", "--p", "1.5"]).0, EXIT_USAGE);
    }

    #[test]
    fn config_errors_name_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, "{\n  \"backends\": {},\n  \"workers\": [,]\n}").unwrap();
        let (code, _, err) = run(&["run", "--config", path.to_str().unwrap(), "--task", "q"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("cfg.json:3:"), "{err}");

        fs::write(
            &path,
            r#"{"backends": {"default": {"type": "scripted", "script": "missing.json"}},
                "workers": [{"worker_id": "w", "description": "d", "tool_names": []}]}"#,
        )
        .unwrap();
        let (code, _, err) = run(&["run", "--config", path.to_str().unwrap(), "--task", "q"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("missing.json"), "{err}");
    }

    #[test]
    fn task_argument_forms() {
        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("t.json");
        fs::write(&json, r#"{"task_id": "t1", "content": "hello", "gold_answer": "x"}"#).unwrap();
        assert_eq!(load_task(json.to_str().unwrap()).unwrap().task_id, "t1");
        let txt = dir.path().join("question.txt");
        fs::write(&txt, "What is 2+2?\n").unwrap();
        let task = load_task(txt.to_str().unwrap()).unwrap();
        assert_eq!((task.task_id.as_str(), task.content.as_str()), ("question", "What is 2+2?"));
        assert_eq!(load_task("inline text").unwrap().task_id, "inline");
        assert!(load_task("   ").is_err());
    }
}
