//! Episode runner, experiment driver and report aggregation.
//!
//! An experiment writes `{family}__{method}.jsonl` (one [`EpisodeRecord`] per
//! line, in task order) and a `summary.csv` covering every episode file in the
//! output directory. Without `timing`, reruns with the same seed produce
//! byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_dataset, DatasetError, ImprovementDataset};
use crate::envs::{self, EnvError, PolicyParams, TaskFamily, TaskSpec};
use crate::llm_backend::{build_backend, BackendConfig, BackendError, CompletionBackend};
use crate::neighbors::NeighborError;
use crate::operators::{make_operator, ExampleBank, IterationState, Method, OperatorConfig, OperatorContext, OperatorError};
use crate::prompting::{NumberFormat, PromptError};
use crate::seed::{derive_seed, stream_rng};

pub const DEFAULT_ITERS: usize = 20;
pub const DEFAULT_N_TASKS: usize = 100;
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Neighbors(#[from] NeighborError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// `None` when the operator produced no proposal.
    pub theta: Option<[f64; 3]>,
    pub cost: Option<f64>,
    pub best_cost_so_far: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub family: TaskFamily,
    pub task_seed: u64,
    pub method: Method,
    pub init_theta: [f64; 3],
    pub iterations: Vec<IterationRecord>,
    /// Set when a fatal error ended the episode early.
    pub aborted: Option<String>,
    pub wall_ms: u64,
}

impl EpisodeRecord {
    pub fn final_best_cost(&self) -> f64 {
        self.iterations.last().map_or(f64::INFINITY, |r| r.best_cost_so_far)
    }

    /// Best-so-far at `iter`, carrying the last value past an early abort.
    pub fn best_at(&self, iter: usize) -> f64 {
        self.iterations
            .get(iter)
            .or(self.iterations.last())
            .map_or(f64::INFINITY, |r| r.best_cost_so_far)
    }
}

/// Runs one episode: the initial policy, then `iters - 1` proposals.
pub fn run_episode(
    method: Method,
    task: &TaskSpec,
    task_seed: u64,
    ctx: OperatorContext,
    iters: usize,
    rng: ChaCha8Rng,
    init: Option<PolicyParams>,
) -> Result<EpisodeRecord, HarnessError> {
    if iters == 0 {
        return Err(HarnessError::Config("iters must be at least 1".into()));
    }
    let start = Instant::now();
    let init = init.unwrap_or_else(|| task.family.bounds().midpoint());
    let mut operator = make_operator(method, ctx, task, rng)?;
    let (error, cost) = envs::evaluate(task, &init)?;
    let mut state = IterationState::new(init, error, cost);
    let mut iterations = vec![IterationRecord {
        iter: 0,
        theta: Some(init.0),
        cost: Some(cost),
        best_cost_so_far: cost,
        failed: false,
    }];
    let mut aborted = None;
    for iter in 1..iters {
        let outcome = operator
            .propose(&state)
            .and_then(|theta| Ok((theta, envs::evaluate(task, &theta)?)));
        match outcome {
            Ok((theta, (error, cost))) => {
                state.record(theta, error, cost);
                iterations.push(IterationRecord {
                    iter,
                    theta: Some(theta.0),
                    cost: Some(cost),
                    best_cost_so_far: state.best_cost,
                    failed: false,
                });
            }
            Err(e) if e.is_fatal() => {
                log::error!("{method} episode on task {task_seed} aborted at iteration {iter}: {e}");
                aborted = Some(e.to_string());
                break;
            }
            Err(e) => {
                log::warn!("{method} iteration {iter} on task {task_seed} failed: {e}");
                state.skip();
                iterations.push(IterationRecord {
                    iter,
                    theta: None,
                    cost: None,
                    best_cost_so_far: state.best_cost,
                    failed: true,
                });
            }
        }
    }
    Ok(EpisodeRecord {
        family: task.family,
        task_seed,
        method,
        init_theta: init.0,
        iterations,
        aborted,
        wall_ms: start.elapsed().as_millis() as u64,
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub family: TaskFamily,
    pub methods: Vec<Method>,
    pub n_tasks: usize,
    pub iters: usize,
    pub dataset: Option<PathBuf>,
    pub backend: BackendConfig,
    pub operator: OperatorConfig,
    pub master_seed: u64,
    pub out_dir: PathBuf,
    pub init: Option<PolicyParams>,
    /// Record wall-clock time per episode (breaks byte reproducibility).
    pub timing: bool,
}

impl ExperimentConfig {
    pub fn new(family: TaskFamily, methods: Vec<Method>, out_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            family,
            methods,
            n_tasks: DEFAULT_N_TASKS,
            iters: DEFAULT_ITERS,
            dataset: None,
            backend: BackendConfig::default(),
            operator: OperatorConfig::default(),
            master_seed: 0,
            out_dir: out_dir.into(),
            init: None,
            timing: false,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.n_tasks == 0 || self.iters == 0 {
            return Err(HarnessError::Config("n_tasks and iters must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(HarnessError::Config("no methods given".into()));
        }
        if self.dataset.is_none() {
            let offenders: Vec<&str> = self
                .methods
                .iter()
                .filter(|m| m.requirements().dataset)
                .map(|m| m.name())
                .collect();
            if !offenders.is_empty() {
                return Err(HarnessError::Config(format!(
                    "methods {} need a dataset",
                    offenders.join(", ")
                )));
            }
        }
        if let Some(init) = &self.init {
            if !self.family.bounds().contains(init) {
                return Err(HarnessError::Config("initial policy lies outside the bounds".into()));
            }
        }
        Ok(())
    }
}

/// Seed of task `index` in an experiment.
pub fn task_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, "task", index as u64)
}

/// Random stream of the episode of `method` on task `index`.
pub fn episode_rng(master: u64, method: Method, index: usize) -> ChaCha8Rng {
    stream_rng(master, &format!("episode/{method}"), index as u64)
}

pub fn episode_file(dir: &Path, family: TaskFamily, method: Method) -> PathBuf {
    dir.join(format!("{family}__{method}.jsonl"))
}

fn load_bank(path: &Path, family: TaskFamily) -> Result<ExampleBank, HarnessError> {
    let dataset: ImprovementDataset = load_dataset(path)?;
    if dataset.family != family {
        return Err(HarnessError::Config(format!(
            "dataset {} is for {}, not {family}",
            path.display(),
            dataset.family
        )));
    }
    Ok(ExampleBank::new(dataset)?)
}

/// Runs every method on the same `n_tasks` tasks and writes episode files and
/// the summary. Returns the records grouped by method, in config order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<(Method, Vec<EpisodeRecord>)>, HarnessError> {
    config.validate()?;
    let needs_bank = config.methods.iter().any(|m| m.requirements().dataset);
    let bank = match (&config.dataset, needs_bank) {
        (Some(path), true) => Some(Arc::new(load_bank(path, config.family)?)),
        _ => None,
    };
    let backend: Option<Arc<dyn CompletionBackend>> = if config.methods.iter().any(|m| m.uses_backend()) {
        Some(build_backend(&config.backend)?)
    } else {
        None
    };
    fs::create_dir_all(&config.out_dir).map_err(io_err(&config.out_dir))?;

    let tasks: Vec<(u64, TaskSpec)> = (0..config.n_tasks)
        .into_par_iter()
        .map(|i| {
            let seed = task_seed(config.master_seed, i);
            (seed, envs::sample_task(config.family, seed))
        })
        .collect();

    let mut results = Vec::new();
    for &method in &config.methods {
        let mut ctx_proto = OperatorContext::new(&tasks[0].1);
        ctx_proto.examples = bank.clone();
        ctx_proto.backend = backend.clone().filter(|_| method.uses_backend());
        ctx_proto.config = config.operator.clone();

        let run = || {
            tasks
                .par_iter()
                .enumerate()
                .map(|(i, (seed, task))| {
                    let mut ctx = ctx_proto.clone();
                    ctx.goal = task.goal;
                    let mut record = run_episode(
                        method,
                        task,
                        *seed,
                        ctx,
                        config.iters,
                        episode_rng(config.master_seed, method, i),
                        config.init,
                    )?;
                    if !config.timing {
                        record.wall_ms = 0;
                    }
                    Ok(record)
                })
                .collect::<Result<Vec<_>, HarnessError>>()
        };
        let workers = match &ctx_proto.backend {
            Some(b) => rayon::current_num_threads().min(b.max_parallel().max(1)),
            None => rayon::current_num_threads(),
        };
        let records = if workers < rayon::current_num_threads() {
            rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| HarnessError::Config(e.to_string()))?
                .install(run)?
        } else {
            run()?
        };
        write_episodes(&episode_file(&config.out_dir, config.family, method), &records)?;
        log::info!(
            "{}/{method}: mean final best cost {:.4}",
            config.family,
            mean_std(&records.iter().map(|r| r.final_best_cost()).collect::<Vec<_>>()).0
        );
        results.push((method, records));
    }
    write_summary(&config.out_dir)?;
    Ok(results)
}

pub fn write_episodes(path: &Path, records: &[EpisodeRecord]) -> Result<(), HarnessError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).expect("episode records serialize");
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_episodes(path: &Path) -> Result<Vec<EpisodeRecord>, HarnessError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(records)
}

/// Mean and sample standard deviation; the deviation of one value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// `mean (std)` to three decimals.
pub fn summary_cell(mean: f64, std: f64) -> String {
    let fmt = NumberFormat::default();
    let v = |x: f64| fmt.value(x).unwrap_or_else(|_: PromptError| "nan".to_string());
    format!("{} ({})", v(mean), v(std))
}

/// Episode files found in `dir`, keyed by `(family, method)`.
pub fn load_results(dir: &Path) -> Result<BTreeMap<(TaskFamily, Method), Vec<EpisodeRecord>>, HarnessError> {
    let mut groups = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(io_err(dir))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    for path in paths {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let Some((family, method)) = stem.split_once("__") else {
            continue;
        };
        let (Ok(family), Ok(method)) = (family.parse::<TaskFamily>(), method.parse::<Method>()) else {
            log::warn!("skipping {}", path.display());
            continue;
        };
        groups.insert((family, method), read_episodes(&path)?);
    }
    Ok(groups)
}

/// Rewrites `summary.csv` from every episode file in `dir`.
pub fn write_summary(dir: &Path) -> Result<(), HarnessError> {
    let groups = load_results(dir)?;
    let mut out = String::from("family,method,n,mean_final_best_cost,std_final_best_cost,summary\n");
    for ((family, method), records) in &groups {
        let finals: Vec<f64> = records.iter().map(|r| r.final_best_cost()).collect();
        let (mean, std) = mean_std(&finals);
        writeln!(out, "{family},{method},{},{mean},{std},{}", finals.len(), summary_cell(mean, std)).expect("write to string");
    }
    let path = dir.join(SUMMARY_FILE);
    fs::write(&path, out).map_err(io_err(&path))
}

/// Plain-text table and convergence CSV of a results directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub table: String,
    pub csv: String,
    pub iters: usize,
}

pub fn report(dir: &Path) -> Result<Report, HarnessError> {
    let groups = load_results(dir)?;
    if groups.is_empty() {
        return Err(HarnessError::Config(format!("no episode files in {}", dir.display())));
    }
    let lengths: Vec<usize> = groups
        .values()
        .flatten()
        .filter(|r| r.aborted.is_none())
        .map(|r| r.iterations.len())
        .collect();
    let max_len = groups.values().flatten().map(|r| r.iterations.len()).max().unwrap_or(0);
    let iters = lengths.iter().copied().min().unwrap_or(max_len);
    if lengths.iter().any(|&l| l != iters) {
        log::warn!("episodes have differing lengths; aligning on the first {iters} iterations");
    }

    let families: Vec<TaskFamily> = {
        let mut f: Vec<TaskFamily> = groups.keys().map(|k| k.0).collect();
        f.dedup();
        f
    };
    let methods: Vec<Method> = {
        let mut m: Vec<Method> = groups.keys().map(|k| k.1).collect();
        m.sort();
        m.dedup();
        m
    };

    let cells: Vec<Vec<String>> = methods
        .iter()
        .map(|&m| {
            families
                .iter()
                .map(|&f| match groups.get(&(f, m)) {
                    Some(records) => {
                        let (mean, std) = mean_std(&records.iter().map(|r| r.best_at(iters - 1)).collect::<Vec<_>>());
                        summary_cell(mean, std)
                    }
                    None => "-".to_string(),
                })
                .collect()
        })
        .collect();
    let mut widths = vec![methods.iter().map(|m| m.name().len()).max().unwrap_or(0).max("method".len())];
    for (j, f) in families.iter().enumerate() {
        widths.push(cells.iter().map(|row| row[j].len()).max().unwrap_or(0).max(f.name().len()));
    }
    let mut table = String::new();
    let mut row = |items: Vec<&str>| {
        let line: Vec<String> = items
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s:<w$}"))
            .collect();
        writeln!(table, "{}", line.join("  ").trim_end()).expect("write to string");
    };
    row(std::iter::once("method").chain(families.iter().map(|f| f.name())).collect());
    for (m, cells) in methods.iter().zip(&cells) {
        row(std::iter::once(m.name()).chain(cells.iter().map(String::as_str)).collect());
    }

    let prefix = families.len() > 1;
    let mut csv = String::from("method,iter,mean_best_cost,std_best_cost,n\n");
    for ((family, method), records) in &groups {
        let label = if prefix {
            format!("{family}/{method}")
        } else {
            method.to_string()
        };
        for iter in 0..iters {
            let values: Vec<f64> = records.iter().map(|r| r.best_at(iter)).collect();
            let (mean, std) = mean_std(&values);
            writeln!(csv, "{label},{iter},{mean},{std},{}", values.len()).expect("write to string");
        }
    }
    Ok(Report { table, csv, iters })
}
