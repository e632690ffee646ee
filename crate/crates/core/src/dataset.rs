//! Policy-improvement datasets of `(theta, error, delta_theta)` labels.
//!
//! Two generators are provided. Hidden-parameter families (`slide`,
//! `rope-swing`) solve each sampled task by random search and label nearby
//! executions with the correction onto that solution. Goal-conditioned
//! families relabel the outcome of a guide execution as the goal, which makes
//! the guide an exact solution by construction.
//!
//! Files are line-delimited JSON: one header object followed by one object per
//! example. Floats are written in shortest round-trip form, so loading a saved
//! dataset reproduces every value bit for bit.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{self, EnvError, ErrorVector, PolicyParams, TaskFamily, TaskSpec};
use crate::seed::{derive_seed, stream_rng};

pub const DEFAULT_SEARCH_BUDGET: usize = 2000;
pub const DEFAULT_EPSILON: f64 = 0.01;
/// Perturbations are uniform within this fraction of `theta_max - theta_min`.
pub const PERTURBATION_FRACTION: f64 = 0.25;
/// Replay threshold recorded for hindsight examples.
pub const HINDSIGHT_EPSILON: f64 = 1e-9;

const LOCAL_ROUNDS: usize = 5;
const LOCAL_START_FRACTION: f64 = 0.10;
const ADAPTIVE_UNIFORM: usize = 200;
const ADAPTIVE_PATIENCE: usize = 15;
const ADAPTIVE_MIN_WIDTH: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("no task could be solved; the dataset would be empty")]
    Empty,
    #[error("family `{family}` does not support the {generator} generator")]
    WrongFamily {
        family: TaskFamily,
        generator: Generator,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Bruteforce,
    Hindsight,
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Generator::Bruteforce => "bruteforce",
            Generator::Hindsight => "hindsight",
        })
    }
}

impl FromStr for Generator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bruteforce" => Ok(Generator::Bruteforce),
            "hindsight" => Ok(Generator::Hindsight),
            other => Err(format!("unknown dataset mode `{other}`")),
        }
    }
}

/// One improvement label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementExample {
    pub family: TaskFamily,
    /// `sample_task(family, task_seed)` reproduces the task this label belongs to.
    pub task_seed: u64,
    pub theta: [f64; 3],
    pub error: [f64; 2],
    pub delta_theta: [f64; 3],
    pub generator: Generator,
    pub epsilon: f64,
}

impl ImprovementExample {
    /// `theta + delta_theta`, the solved policy.
    pub fn target(&self) -> PolicyParams {
        PolicyParams(std::array::from_fn(|i| self.theta[i] + self.delta_theta[i]))
    }

    /// The task the label was generated against, goal included.
    pub fn task(&self) -> TaskSpec {
        envs::sample_task(self.family, self.task_seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: Generator,
    pub epsilon: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImprovementDataset {
    pub family: TaskFamily,
    pub meta: DatasetMeta,
    pub examples: Vec<ImprovementExample>,
}

impl ImprovementDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Outcome of `bruteforce_solve`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Solution {
    pub theta: PolicyParams,
    pub cost: f64,
    pub success: bool,
}

/// Random search for a policy solving `task`: `budget` uniform samples over
/// the bounds, then `budget / 4` local samples split over shrinking boxes
/// around the incumbent.
pub fn bruteforce_solve<R: Rng + ?Sized>(
    task: &TaskSpec,
    budget: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<Solution, EnvError> {
    assert!(budget >= 1 && epsilon > 0.0);
    let bounds = task.family.bounds();
    let range = bounds.range();

    let mut best = bounds.sample(rng);
    let mut best_cost = envs::evaluate(task, &best)?.1;
    let consider = |theta: PolicyParams, best: &mut PolicyParams, best_cost: &mut f64| {
        let cost = envs::evaluate(task, &theta)?.1;
        if cost < *best_cost {
            *best = theta;
            *best_cost = cost;
        }
        Ok::<_, EnvError>(())
    };
    for _ in 1..budget {
        if best_cost == 0.0 {
            break;
        }
        consider(bounds.sample(rng), &mut best, &mut best_cost)?;
    }

    let per_round = budget / 4 / LOCAL_ROUNDS;
    let mut half_width = LOCAL_START_FRACTION;
    for _ in 0..LOCAL_ROUNDS {
        for _ in 0..per_round {
            let candidate = bounds.clip(std::array::from_fn(|i| {
                best.0[i] + rng.random_range(-half_width..=half_width) * range[i]
            }));
            consider(candidate, &mut best, &mut best_cost)?;
        }
        half_width *= 0.5;
    }

    Ok(Solution {
        theta: best,
        cost: best_cost,
        success: best_cost <= epsilon,
    })
}

/// Random search that stops as soon as the cost drops to `target`: a short
/// uniform phase picks a start, then a box around the incumbent shrinks after
/// every run of unsuccessful samples. Collapsed boxes restart from a fresh
/// uniform phase until `max_evals` is spent.
pub fn adaptive_solve<R: Rng + ?Sized>(
    task: &TaskSpec,
    max_evals: usize,
    target: f64,
    rng: &mut R,
) -> Result<Solution, EnvError> {
    assert!(max_evals >= 1 && target >= 0.0);
    let bounds = task.family.bounds();
    let range = bounds.range();
    let mut evals = 0;
    let eval = |theta: &PolicyParams, evals: &mut usize| {
        *evals += 1;
        envs::evaluate(task, theta).map(|r| r.1)
    };
    let mut global = bounds.sample(rng);
    let mut global_cost = eval(&global, &mut evals)?;
    while evals < max_evals && global_cost > target {
        let mut best = bounds.sample(rng);
        let mut best_cost = eval(&best, &mut evals)?;
        for _ in 1..ADAPTIVE_UNIFORM.min(max_evals - evals + 1) {
            let theta = bounds.sample(rng);
            let cost = eval(&theta, &mut evals)?;
            if cost < best_cost {
                best = theta;
                best_cost = cost;
            }
        }
        let mut half_width = LOCAL_START_FRACTION;
        let mut misses = 0;
        while evals < max_evals && best_cost > target && half_width > ADAPTIVE_MIN_WIDTH {
            let theta = bounds.clip(std::array::from_fn(|i| {
                best.0[i] + rng.random_range(-half_width..=half_width) * range[i]
            }));
            let cost = eval(&theta, &mut evals)?;
            if cost < best_cost {
                best = theta;
                best_cost = cost;
                misses = 0;
            } else {
                misses += 1;
                if misses == ADAPTIVE_PATIENCE {
                    half_width *= 0.5;
                    misses = 0;
                }
            }
        }
        if best_cost < global_cost {
            global = best;
            global_cost = best_cost;
        }
    }
    Ok(Solution {
        theta: global,
        cost: global_cost,
        success: global_cost <= target,
    })
}

/// `clip(center + u)` with `u` uniform within `PERTURBATION_FRACTION` of the range.
pub fn perturb<R: Rng + ?Sized>(family: TaskFamily, center: &PolicyParams, rng: &mut R) -> PolicyParams {
    let bounds = family.bounds();
    let range = bounds.range();
    bounds.clip(std::array::from_fn(|i| {
        let h = PERTURBATION_FRACTION * range[i];
        center.0[i] + rng.random_range(-h..=h)
    }))
}

/// Labels an execution of `theta` on `task` with the correction onto `target`.
pub fn label(
    task: &TaskSpec,
    target: &PolicyParams,
    theta: &PolicyParams,
    generator: Generator,
    epsilon: f64,
) -> Result<ImprovementExample, EnvError> {
    let (ErrorVector(error), _) = envs::evaluate(task, theta)?;
    Ok(ImprovementExample {
        family: task.family,
        task_seed: task.seed,
        theta: theta.0,
        error,
        delta_theta: std::array::from_fn(|i| target.0[i] - theta.0[i]),
        generator,
        epsilon,
    })
}

/// Per-task search plus `per_task` perturbed labels for each solved task.
/// Tasks whose search does not reach `epsilon` are skipped.
pub fn build_bruteforce_dataset(
    family: TaskFamily,
    n_tasks: usize,
    per_task: usize,
    epsilon: f64,
    seed: u64,
) -> Result<ImprovementDataset, DatasetError> {
    build_bruteforce_dataset_with_budget(family, n_tasks, per_task, epsilon, DEFAULT_SEARCH_BUDGET, seed)
}

pub fn build_bruteforce_dataset_with_budget(
    family: TaskFamily,
    n_tasks: usize,
    per_task: usize,
    epsilon: f64,
    budget: usize,
    seed: u64,
) -> Result<ImprovementDataset, DatasetError> {
    if family.is_goal_conditioned() {
        return Err(DatasetError::WrongFamily {
            family,
            generator: Generator::Bruteforce,
        });
    }
    let per_task_examples: Vec<Option<Vec<ImprovementExample>>> = (0..n_tasks as u64)
        .into_par_iter()
        .map(|i| {
            let task = envs::sample_task(family, derive_seed(seed, "task", i));
            let mut rng = stream_rng(seed, "search", i);
            let solution = bruteforce_solve(&task, budget, epsilon, &mut rng)?;
            if !solution.success {
                log::warn!(
                    "{family} task {i}: search reached {:.4} > {epsilon}, skipped",
                    solution.cost
                );
                return Ok(None);
            }
            let examples = (0..per_task)
                .map(|_| {
                    let theta = perturb(family, &solution.theta, &mut rng);
                    label(&task, &solution.theta, &theta, Generator::Bruteforce, epsilon)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Some(examples))
        })
        .collect::<Result<_, EnvError>>()?;

    let examples: Vec<_> = per_task_examples.into_iter().flatten().flatten().collect();
    if examples.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(ImprovementDataset {
        family,
        meta: DatasetMeta {
            generator: Generator::Bruteforce,
            epsilon,
            seed,
        },
        examples,
    })
}

/// Guide executions relabeled as goals, plus `per_guide` alternatives per guide.
pub fn build_hindsight_dataset(
    family: TaskFamily,
    n_guides: usize,
    per_guide: usize,
    seed: u64,
) -> Result<ImprovementDataset, DatasetError> {
    if !family.is_goal_conditioned() {
        return Err(DatasetError::WrongFamily {
            family,
            generator: Generator::Hindsight,
        });
    }
    let per_guide_examples: Vec<Vec<ImprovementExample>> = (0..n_guides as u64)
        .into_par_iter()
        .map(|i| {
            // sample_task draws the guide and relabels its outcome as the goal
            let task = envs::sample_task(family, derive_seed(seed, "guide", i));
            let guide = task.guide.expect("goal-conditioned tasks carry their guide");
            let mut rng = stream_rng(seed, "alternatives", i);
            (0..per_guide)
                .map(|_| {
                    let theta = perturb(family, &guide, &mut rng);
                    label(&task, &guide, &theta, Generator::Hindsight, HINDSIGHT_EPSILON)
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, EnvError>>()?;

    Ok(ImprovementDataset {
        family,
        meta: DatasetMeta {
            generator: Generator::Hindsight,
            epsilon: HINDSIGHT_EPSILON,
            seed,
        },
        examples: per_guide_examples.into_iter().flatten().collect(),
    })
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    family: TaskFamily,
    generator: Generator,
    epsilon: f64,
    seed: u64,
    count: usize,
}

const FORMAT_TAG: &str = "icpi-dataset/1";

pub fn save_dataset(dataset: &ImprovementDataset, path: &Path) -> Result<(), DatasetError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    let header = Header {
        format: FORMAT_TAG.to_string(),
        family: dataset.family,
        generator: dataset.meta.generator,
        epsilon: dataset.meta.epsilon,
        seed: dataset.meta.seed,
        count: dataset.examples.len(),
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for ex in &dataset.examples {
        writeln!(out, "{}", serde_json::to_string(ex).expect("example serializes"))?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<ImprovementDataset, DatasetError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines();
    let parse_err = |line: usize, message: String| DatasetError::Parse { line, message };

    let header_line = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header".into()))??;
    let header: Header =
        serde_json::from_str(&header_line).map_err(|e| parse_err(1, format!("bad header: {e}")))?;
    if header.format != FORMAT_TAG {
        return Err(parse_err(1, format!("unsupported format `{}`", header.format)));
    }

    let mut examples = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: ImprovementExample =
            serde_json::from_str(&line).map_err(|e| parse_err(line_no, e.to_string()))?;
        if ex.family != header.family {
            return Err(parse_err(
                line_no,
                format!("family {} does not match header family {}", ex.family, header.family),
            ));
        }
        examples.push(ex);
    }
    if examples.len() != header.count {
        return Err(parse_err(
            examples.len() + 2,
            format!("header declares {} examples, found {}", header.count, examples.len()),
        ));
    }
    Ok(ImprovementDataset {
        family: header.family,
        meta: DatasetMeta {
            generator: header.generator,
            epsilon: header.epsilon,
            seed: header.seed,
        },
        examples,
    })
}
