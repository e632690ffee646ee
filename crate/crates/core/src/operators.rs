//! Policy-improvement operators.
//!
//! Every method maps the best execution so far to the next policy to try. An
//! [`Operator`] is built per episode from an [`OperatorContext`] and owns its
//! random stream and any surrogate state.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as StdNormal};

use crate::dataset::{adaptive_solve, bruteforce_solve, ImprovementDataset, DEFAULT_EPSILON, DEFAULT_SEARCH_BUDGET};
use crate::envs::{Bounds, EnvError, ErrorVector, Point2, PolicyParams, TaskFamily, TaskSpec};
use crate::llm_backend::{BackendError, CompletionBackend, CompletionRequest};
use crate::neighbors::{NeighborError, NeighborIndex, NeighborKey};
use crate::prompting::{
    build_icpi_prompt, build_icsi_prompt, build_iw_prompt, parse_values, Encoding, Execution, NumberFormat,
    PromptError, PromptText, TaskConstants,
};
use crate::regression::fit_affine;

pub const LINEAR_KNN_LAMBDA: f64 = 1e-8;
pub const LINEAR_KNN_REFINE_STEPS: usize = 2;
pub const BO_UNIFORM_CANDIDATES: usize = 2048;
pub const BO_LOCAL_CANDIDATES: usize = 64;
pub const BO_LOCAL_SCALE: f64 = 0.05;
pub const BO_NOISE: f64 = 1e-6;
pub const ORACLE_MAX_EVALS: usize = 4000;

#[derive(Debug, thiserror::Error)]
pub enum OperatorError {
    #[error("method `{method}` needs {field}")]
    MissingContext { method: Method, field: &'static str },
    #[error("no usable completion after {attempts} attempts: {last}")]
    Completion { attempts: usize, last: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Neighbors(#[from] NeighborError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

impl OperatorError {
    /// Errors that end the episode rather than a single iteration.
    pub fn is_fatal(&self) -> bool {
        match self {
            OperatorError::Backend(e) => !matches!(e, BackendError::Mock(_)),
            OperatorError::MissingContext { .. } | OperatorError::Env(_) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "bayes")]
    Bayes,
    #[serde(rename = "knn5")]
    Knn5,
    #[serde(rename = "linknn20")]
    LinKnn20,
    #[serde(rename = "icpi")]
    Icpi,
    #[serde(rename = "icsi")]
    Icsi,
    #[serde(rename = "iw")]
    Iw,
    #[serde(rename = "oracle")]
    Oracle,
}

/// Context a method cannot run without.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Requirements {
    pub dataset: bool,
    pub backend: bool,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Random,
        Method::Bayes,
        Method::Knn5,
        Method::LinKnn20,
        Method::Icpi,
        Method::Icsi,
        Method::Iw,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Bayes => "bayes",
            Method::Knn5 => "knn5",
            Method::LinKnn20 => "linknn20",
            Method::Icpi => "icpi",
            Method::Icsi => "icsi",
            Method::Iw => "iw",
            Method::Oracle => "oracle",
        }
    }

    pub fn requirements(self) -> Requirements {
        Requirements {
            dataset: matches!(self, Method::Knn5 | Method::LinKnn20 | Method::Icpi),
            backend: matches!(self, Method::Icpi | Method::Icsi | Method::Iw),
        }
    }

    pub fn uses_backend(self) -> bool {
        self.requirements().backend
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

/// Best execution so far plus the full attempt history.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationState {
    pub best_theta: PolicyParams,
    pub best_error: ErrorVector,
    pub best_cost: f64,
    pub history: Vec<(PolicyParams, ErrorVector, f64)>,
    pub iteration: usize,
}

impl IterationState {
    pub fn new(theta: PolicyParams, error: ErrorVector, cost: f64) -> Self {
        IterationState {
            best_theta: theta,
            best_error: error,
            best_cost: cost,
            history: vec![(theta, error, cost)],
            iteration: 0,
        }
    }

    /// Appends an execution; returns whether it became the new best.
    /// Ties keep the earlier entry.
    pub fn record(&mut self, theta: PolicyParams, error: ErrorVector, cost: f64) -> bool {
        self.iteration += 1;
        self.history.push((theta, error, cost));
        let improved = cost < self.best_cost;
        if improved {
            self.best_theta = theta;
            self.best_error = error;
            self.best_cost = cost;
        }
        improved
    }

    /// Advances the counter for an iteration that produced no execution.
    pub fn skip(&mut self) {
        self.iteration += 1;
    }
}

/// Labelled examples with their search index and per-example goals.
#[derive(Debug, Clone)]
pub struct ExampleBank {
    pub dataset: ImprovementDataset,
    pub index: NeighborIndex,
    pub goals: Vec<Point2>,
}

impl ExampleBank {
    pub fn new(dataset: ImprovementDataset) -> Result<ExampleBank, NeighborError> {
        let index = NeighborIndex::build(&dataset)?;
        let goals = dataset.examples.par_iter().map(|ex| ex.task().goal).collect();
        Ok(ExampleBank { dataset, index, goals })
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    /// Neighbors of the query, farthest first.
    pub fn neighbors(&self, theta: &PolicyParams, error: &ErrorVector, k: usize) -> (NeighborKey, Vec<usize>) {
        if k > self.len() {
            log::warn!("k={k} exceeds the {} available examples", self.len());
        }
        let key = self.index.key(&theta.0, &error.0);
        let found = self.index.query_knn(&key, k).into_iter().map(|n| n.index).collect();
        (key, found)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorConfig {
    pub knn_k: usize,
    pub linear_knn_k: usize,
    pub icpi_k: usize,
    pub encoding: Encoding,
    /// Re-queries after an unparseable completion.
    pub max_parse_retries: usize,
    pub model_name: String,
    pub max_tokens: usize,
    pub number_format: NumberFormat,
    pub epsilon: f64,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        OperatorConfig {
            knn_k: 5,
            linear_knn_k: 20,
            icpi_k: 20,
            encoding: Encoding::RelativeError,
            max_parse_retries: 2,
            model_name: "mock".to_string(),
            max_tokens: 64,
            number_format: NumberFormat::default(),
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Per-episode inputs shared by all methods.
#[derive(Clone)]
pub struct OperatorContext {
    pub family: TaskFamily,
    pub bounds: Bounds,
    /// The task goal, observable by every method.
    pub goal: Point2,
    pub examples: Option<Arc<ExampleBank>>,
    pub backend: Option<Arc<dyn CompletionBackend>>,
    pub config: OperatorConfig,
}

impl OperatorContext {
    pub fn new(task: &TaskSpec) -> Self {
        OperatorContext {
            family: task.family,
            bounds: task.family.bounds(),
            goal: task.goal,
            examples: None,
            backend: None,
            config: OperatorConfig::default(),
        }
    }

    /// Lists the missing requirements of `method`.
    pub fn missing(&self, method: Method) -> Vec<&'static str> {
        let req = method.requirements();
        let mut missing = Vec::new();
        if req.dataset && self.examples.is_none() {
            missing.push("a dataset");
        }
        if req.backend && self.backend.is_none() {
            missing.push("a completion backend");
        }
        missing
    }

    fn examples(&self, method: Method) -> Result<&ExampleBank, OperatorError> {
        self.examples.as_deref().ok_or(OperatorError::MissingContext {
            method,
            field: "a dataset",
        })
    }

    fn backend(&self, method: Method) -> Result<&dyn CompletionBackend, OperatorError> {
        self.backend.as_deref().ok_or(OperatorError::MissingContext {
            method,
            field: "a completion backend",
        })
    }
}

/// Proposes the next policy for one episode.
pub trait Operator: Send {
    fn method(&self) -> Method;
    fn propose(&mut self, state: &IterationState) -> Result<PolicyParams, OperatorError>;
}

/// Builds the operator for `method`. `task` is consulted only by the oracle.
pub fn make_operator(
    method: Method,
    ctx: OperatorContext,
    task: &TaskSpec,
    rng: ChaCha8Rng,
) -> Result<Box<dyn Operator>, OperatorError> {
    if let Some(field) = ctx.missing(method).first() {
        return Err(OperatorError::MissingContext { method, field });
    }
    let op: Box<dyn Operator> = match method {
        Method::Oracle => Box::new(OracleOperator::new(task, ctx.config.epsilon, rng)?),
        Method::Bayes => Box::new(BayesOperator {
            ctx,
            optimizer: BayesOptimizer::new(3),
            rng,
        }),
        _ => Box::new(StepOperator { method, ctx, rng }),
    };
    Ok(op)
}

/// Stateless methods dispatched to their step functions.
struct StepOperator {
    method: Method,
    ctx: OperatorContext,
    rng: ChaCha8Rng,
}

impl Operator for StepOperator {
    fn method(&self) -> Method {
        self.method
    }

    fn propose(&mut self, state: &IterationState) -> Result<PolicyParams, OperatorError> {
        match self.method {
            Method::Random => Ok(random_shooting_step(state, &self.ctx, &mut self.rng)),
            Method::Knn5 => knn_avg_step(state, &self.ctx, self.ctx.config.knn_k),
            Method::LinKnn20 => linear_knn_step(state, &self.ctx, self.ctx.config.linear_knn_k),
            Method::Icpi => icpi_step(state, &self.ctx),
            Method::Icsi => icsi_step(state, &self.ctx, &mut self.rng),
            Method::Iw => iw_step(state, &self.ctx),
            Method::Bayes | Method::Oracle => unreachable!("stateful methods have their own operators"),
        }
    }
}

// ---------------------------------------------------------------------------
// random shooting

/// Per-dimension `N(0, (0.5 c range_d)^2)` offset.
pub fn random_offset<R: Rng + ?Sized>(cost: f64, range: &[f64; 3], rng: &mut R) -> [f64; 3] {
    std::array::from_fn(|i| {
        let std = 0.5 * cost * range[i];
        if std > 0.0 && std.is_finite() {
            Normal::new(0.0, std).expect("valid std").sample(rng)
        } else {
            0.0
        }
    })
}

pub fn random_shooting_step<R: Rng + ?Sized>(state: &IterationState, ctx: &OperatorContext, rng: &mut R) -> PolicyParams {
    let offset = random_offset(state.best_cost, &ctx.bounds.range(), rng);
    ctx.bounds.clip(state.best_theta.offset(&offset))
}

// ---------------------------------------------------------------------------
// nearest-neighbor regressors

pub fn knn_avg_step(state: &IterationState, ctx: &OperatorContext, k: usize) -> Result<PolicyParams, OperatorError> {
    let bank = ctx.examples(Method::Knn5)?;
    let (_, found) = bank.neighbors(&state.best_theta, &state.best_error, k);
    if found.is_empty() {
        return Err(NeighborError::Empty.into());
    }
    let mut delta = [0.0; 3];
    for &i in &found {
        for d in 0..3 {
            delta[d] += bank.dataset.examples[i].delta_theta[d];
        }
    }
    delta.iter_mut().for_each(|v| *v /= found.len() as f64);
    Ok(ctx.bounds.clip(state.best_theta.offset(&delta)))
}

/// Affine fit from the neighbors' keys to their labels, evaluated at the
/// query key. Returned unclipped.
pub fn linear_knn_delta(bank: &ExampleBank, theta: &PolicyParams, error: &ErrorVector, k: usize) -> Result<[f64; 3], OperatorError> {
    let (key, found) = bank.neighbors(theta, error, k);
    if found.is_empty() {
        return Err(NeighborError::Empty.into());
    }
    let inputs: Vec<Vec<f64>> = found.iter().map(|&i| bank.index.key_of(i).0.to_vec()).collect();
    let outputs: Vec<Vec<f64>> = found
        .iter()
        .map(|&i| bank.dataset.examples[i].delta_theta.to_vec())
        .collect();
    let model = fit_affine(&inputs, &outputs, LINEAR_KNN_LAMBDA, LINEAR_KNN_REFINE_STEPS);
    let p = model.predict(&key.0);
    Ok([p[0], p[1], p[2]])
}

pub fn linear_knn_step(state: &IterationState, ctx: &OperatorContext, k: usize) -> Result<PolicyParams, OperatorError> {
    let bank = ctx.examples(Method::LinKnn20)?;
    let delta = linear_knn_delta(bank, &state.best_theta, &state.best_error, k)?;
    Ok(ctx.bounds.clip(state.best_theta.offset(&delta)))
}

// ---------------------------------------------------------------------------
// in-context methods

/// Sends `prompt` until a completion parses to three finite values.
fn query_values(backend: &dyn CompletionBackend, prompt: PromptText, config: &OperatorConfig) -> Result<[f64; 3], OperatorError> {
    let mut request = CompletionRequest::new(prompt, &config.model_name);
    request.max_tokens = config.max_tokens;
    let attempts = config.max_parse_retries + 1;
    let mut last = String::new();
    for _ in 0..attempts {
        let text = match backend.complete(&request) {
            Ok(t) => t,
            Err(e @ BackendError::Mock(_)) => {
                last = e.to_string();
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        match parse_values(&text, 3) {
            Ok(v) if v.iter().all(|x| x.is_finite()) => return Ok([v[0], v[1], v[2]]),
            Ok(_) => last = format!("non-finite values in `{text}`"),
            Err(e) => last = format!("{e} in `{text}`"),
        }
    }
    Err(OperatorError::Completion { attempts, last })
}

/// ICPI prompt for the best execution, using the nearest examples in index
/// order (farthest first).
pub fn icpi_prompt(state: &IterationState, ctx: &OperatorContext) -> Result<PromptText, OperatorError> {
    let bank = ctx.examples(Method::Icpi)?;
    let (_, found) = bank.neighbors(&state.best_theta, &state.best_error, ctx.config.icpi_k);
    let examples: Vec<(Execution, [f64; 3])> = found
        .iter()
        .map(|&i| {
            let ex = &bank.dataset.examples[i];
            let exec = Execution {
                theta: ex.theta,
                error: ex.error,
                goal: bank.goals[i],
            };
            (exec, ex.delta_theta)
        })
        .collect();
    let query = Execution {
        theta: state.best_theta.0,
        error: state.best_error.0,
        goal: ctx.goal,
    };
    Ok(build_icpi_prompt(&examples, &query, ctx.config.encoding, &ctx.config.number_format)?)
}

/// The completed delta, unclipped.
pub fn icpi_delta(state: &IterationState, ctx: &OperatorContext) -> Result<[f64; 3], OperatorError> {
    let prompt = icpi_prompt(state, ctx)?;
    query_values(ctx.backend(Method::Icpi)?, prompt, &ctx.config)
}

pub fn icpi_step(state: &IterationState, ctx: &OperatorContext) -> Result<PolicyParams, OperatorError> {
    let delta = icpi_delta(state, ctx)?;
    Ok(ctx.bounds.clip(state.best_theta.offset(&delta)))
}

/// Target cost uniform on `[0, best_cost)`.
pub fn icsi_target_cost<R: Rng + ?Sized>(best_cost: f64, rng: &mut R) -> f64 {
    if best_cost > 0.0 && best_cost.is_finite() {
        rng.random_range(0.0..best_cost)
    } else {
        0.0
    }
}

pub fn icsi_step<R: Rng + ?Sized>(state: &IterationState, ctx: &OperatorContext, rng: &mut R) -> Result<PolicyParams, OperatorError> {
    let backend = ctx.backend(Method::Icsi)?;
    let target = icsi_target_cost(state.best_cost, rng);
    let history: Vec<(f64, [f64; 3])> = state.history.iter().map(|(t, _, c)| (*c, t.0)).collect();
    let prompt = build_icsi_prompt(&history, target, &ctx.config.number_format)?;
    Ok(ctx.bounds.clip(query_values(backend, prompt, &ctx.config)?))
}

pub fn iw_prompt(state: &IterationState, ctx: &OperatorContext) -> Result<PromptText, OperatorError> {
    let history: Vec<([f64; 3], [f64; 2])> = state.history.iter().map(|(t, e, _)| (t.0, e.0)).collect();
    Ok(build_iw_prompt(
        ctx.family,
        &TaskConstants { goal: ctx.goal },
        &history,
        &ctx.config.number_format,
    )?)
}

pub fn iw_step(state: &IterationState, ctx: &OperatorContext) -> Result<PolicyParams, OperatorError> {
    let backend = ctx.backend(Method::Iw)?;
    let prompt = iw_prompt(state, ctx)?;
    Ok(ctx.bounds.clip(query_values(backend, prompt, &ctx.config)?))
}

// ---------------------------------------------------------------------------
// oracle

/// Solves the task at construction and always proposes the solution.
pub struct OracleOperator {
    solution: PolicyParams,
    bounds: Bounds,
}

impl OracleOperator {
    pub fn new<R: Rng>(task: &TaskSpec, epsilon: f64, mut rng: R) -> Result<Self, EnvError> {
        let mut best = adaptive_solve(task, ORACLE_MAX_EVALS, 0.5 * epsilon, &mut rng)?;
        if best.cost > epsilon {
            let fallback = bruteforce_solve(task, DEFAULT_SEARCH_BUDGET, epsilon, &mut rng)?;
            if fallback.cost < best.cost {
                best = fallback;
            }
        }
        Ok(OracleOperator {
            solution: best.theta,
            bounds: task.family.bounds(),
        })
    }

    pub fn solution(&self) -> PolicyParams {
        self.solution
    }
}

impl Operator for OracleOperator {
    fn method(&self) -> Method {
        Method::Oracle
    }

    fn propose(&mut self, state: &IterationState) -> Result<PolicyParams, OperatorError> {
        let delta: [f64; 3] = std::array::from_fn(|i| self.solution.0[i] - state.best_theta.0[i]);
        Ok(self.bounds.clip(state.best_theta.offset(&delta)))
    }
}

// ---------------------------------------------------------------------------
// Bayesian optimization

fn matern52(r: f64) -> f64 {
    let s = 5f64.sqrt() * r;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

/// Zero-mean GP on standardized targets with a Matérn-5/2 kernel.
pub struct GaussianProcess {
    x: Vec<Vec<f64>>,
    length_scale: f64,
    signal_var: f64,
    y_mean: f64,
    y_scale: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

fn correlation(x: &[Vec<f64>], length_scale: f64, noise: f64) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| {
        matern52(distance(&x[i], &x[j]) / length_scale) + if i == j { noise } else { 0.0 }
    })
}

impl GaussianProcess {
    /// Profiled log marginal likelihood and the pieces needed to predict.
    fn profile(x: &[Vec<f64>], y: &DVector<f64>, length_scale: f64) -> Option<(f64, f64, Cholesky<f64, Dyn>, DVector<f64>)> {
        let n = x.len() as f64;
        let chol = correlation(x, length_scale, BO_NOISE).cholesky()?;
        let alpha = chol.solve(y);
        let signal_var = (y.dot(&alpha) / n).max(1e-12);
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let ll = -0.5 * n * signal_var.ln() - 0.5 * log_det;
        ll.is_finite().then_some((ll, signal_var, chol, alpha))
    }

    /// Fits the length scale by maximizing the marginal likelihood with the
    /// signal variance profiled out: a log-spaced grid, then golden-section
    /// refinement around the best grid point.
    pub fn fit(x: Vec<Vec<f64>>, y: &[f64]) -> Option<GaussianProcess> {
        if x.is_empty() || x.len() != y.len() || y.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let n = y.len() as f64;
        let y_mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n;
        let y_scale = if var > 1e-24 { var.sqrt() } else { 1.0 };
        let ys = DVector::from_iterator(y.len(), y.iter().map(|v| (v - y_mean) / y_scale));

        const GRID: usize = 24;
        let (lo, hi) = (0.01f64.ln(), 3.0f64.ln());
        let at = |i: usize| lo + (hi - lo) * i as f64 / (GRID - 1) as f64;
        let score = |log_l: f64| Self::profile(&x, &ys, log_l.exp()).map(|p| p.0).unwrap_or(f64::NEG_INFINITY);
        let (best_i, best_ll) = (0..GRID)
            .map(|i| (i, score(at(i))))
            .fold((0, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc });
        if !best_ll.is_finite() {
            return None;
        }
        let (mut a, mut b) = (at(best_i.saturating_sub(1)), at((best_i + 1).min(GRID - 1)));
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..20 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if score(c) >= score(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let mut log_l = 0.5 * (a + b);
        if score(log_l) < best_ll {
            log_l = at(best_i);
        }
        let length_scale = log_l.exp();
        let (_, signal_var, chol, alpha) = Self::profile(&x, &ys, length_scale)?;
        Some(GaussianProcess {
            x,
            length_scale,
            signal_var,
            y_mean,
            y_scale,
            chol,
            alpha,
        })
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    /// Posterior mean and standard deviation in the original units.
    pub fn predict(&self, q: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| matern52(distance(xi, q) / self.length_scale)));
        let mean = k.dot(&self.alpha);
        let v = self.chol.solve(&k);
        let var = (1.0 + BO_NOISE - k.dot(&v)).max(0.0) * self.signal_var;
        (self.y_mean + self.y_scale * mean, self.y_scale * var.sqrt())
    }
}

/// Expected improvement below `best` for a Gaussian prediction.
pub fn expected_improvement(mean: f64, std: f64, best: f64) -> f64 {
    let gap = best - mean;
    if std <= 1e-12 {
        return gap.max(0.0);
    }
    let z = gap / std;
    let n = StdNormal::standard();
    gap * n.cdf(z) + std * n.pdf(z)
}

/// Expected-improvement minimizer over the unit cube.
#[derive(Debug, Clone)]
pub struct BayesOptimizer {
    dim: usize,
}

impl BayesOptimizer {
    pub fn new(dim: usize) -> Self {
        BayesOptimizer { dim }
    }

    /// Next point given `(x, cost)` observations with `x` in `[0, 1]^dim`.
    pub fn propose<R: Rng + ?Sized>(&self, observations: &[(Vec<f64>, f64)], rng: &mut R) -> Vec<f64> {
        let uniform = |rng: &mut R| (0..self.dim).map(|_| rng.random::<f64>()).collect::<Vec<_>>();
        let x: Vec<Vec<f64>> = observations.iter().map(|o| o.0.clone()).collect();
        let y: Vec<f64> = observations.iter().map(|o| o.1).collect();
        let Some(gp) = GaussianProcess::fit(x, &y) else {
            log::warn!("GP fit failed on {} observations; sampling uniformly", observations.len());
            return uniform(rng);
        };
        let (incumbent, best) = observations
            .iter()
            .fold((&observations[0].0, f64::INFINITY), |acc, o| if o.1 < acc.1 { (&o.0, o.1) } else { acc });
        let local = Normal::new(0.0, BO_LOCAL_SCALE).expect("valid std");
        let mut best_x = uniform(rng);
        let mut best_ei = f64::NEG_INFINITY;
        for i in 0..BO_UNIFORM_CANDIDATES + BO_LOCAL_CANDIDATES {
            let cand = if i < BO_UNIFORM_CANDIDATES {
                uniform(rng)
            } else {
                incumbent.iter().map(|v| (v + local.sample(rng)).clamp(0.0, 1.0)).collect()
            };
            let (m, s) = gp.predict(&cand);
            let ei = expected_improvement(m, s, best);
            if ei > best_ei {
                best_ei = ei;
                best_x = cand;
            }
        }
        best_x
    }
}

struct BayesOperator {
    ctx: OperatorContext,
    optimizer: BayesOptimizer,
    rng: ChaCha8Rng,
}

impl Operator for BayesOperator {
    fn method(&self) -> Method {
        Method::Bayes
    }

    fn propose(&mut self, state: &IterationState) -> Result<PolicyParams, OperatorError> {
        Ok(bayes_opt_step(state, &self.ctx, &self.optimizer, &mut self.rng))
    }
}

pub fn bayes_opt_step<R: Rng + ?Sized>(
    state: &IterationState,
    ctx: &OperatorContext,
    optimizer: &BayesOptimizer,
    rng: &mut R,
) -> PolicyParams {
    let obs: Vec<(Vec<f64>, f64)> = state
        .history
        .iter()
        .map(|(t, _, c)| (ctx.bounds.normalize(t).to_vec(), *c))
        .collect();
    let u = optimizer.propose(&obs, rng);
    let theta = ctx.bounds.denormalize([u[0], u[1], u[2]]);
    ctx.bounds.clip(theta.0)
}
