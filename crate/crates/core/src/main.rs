use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use icpi::dataset::{build_bruteforce_dataset_with_budget, build_hindsight_dataset, save_dataset, DEFAULT_EPSILON, DEFAULT_SEARCH_BUDGET};
use icpi::envs::{PolicyParams, TaskFamily};
use icpi::harness::{report, run_experiment, ExperimentConfig, HarnessError, DEFAULT_ITERS, DEFAULT_N_TASKS};
use icpi::llm_backend::{BackendConfig, BackendKind, DEFAULT_API_KEY_ENV};
use icpi::operators::Method;
use icpi::prompting::Encoding;

#[derive(Parser)]
#[command(name = "icpi", version, about = "Iterative policy-improvement benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Bruteforce,
    Hindsight,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Mock,
    Remote,
}

#[derive(Subcommand)]
enum Command {
    /// Build an improvement dataset.
    GenDataset {
        #[arg(long)]
        family: TaskFamily,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Number of examples.
        #[arg(long, default_value_t = 300)]
        n: usize,
        /// Examples per solved task or guide.
        #[arg(long, default_value_t = 10)]
        per_task: usize,
        #[arg(long, default_value_t = DEFAULT_SEARCH_BUDGET)]
        budget: usize,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run improvement episodes for one or more methods.
    Run {
        #[arg(long)]
        family: TaskFamily,
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<Method>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "mock")]
        backend: Backend,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, default_value = DEFAULT_API_KEY_ENV)]
        api_key_env: String,
        #[arg(long, default_value = "mock")]
        model: String,
        #[arg(long, default_value = "error")]
        encoding: Encoding,
        #[arg(long, default_value_t = DEFAULT_N_TASKS)]
        n_tasks: usize,
        #[arg(long, default_value_t = DEFAULT_ITERS)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Initial policy as three comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 3)]
        init: Option<Vec<f64>>,
        #[arg(long, default_value_t = 60.0)]
        timeout: f64,
        #[arg(long, default_value_t = 3)]
        max_retries: u32,
        #[arg(long, default_value_t = 4)]
        max_parallel: usize,
        /// Append every backend request and response to this file.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Record episode wall-clock times.
        #[arg(long)]
        timing: bool,
    },
    /// Summarize a results directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn gen_dataset(
    family: TaskFamily,
    mode: Mode,
    n: usize,
    per_task: usize,
    budget: usize,
    epsilon: f64,
    seed: u64,
    out: PathBuf,
) -> Result<(), HarnessError> {
    if per_task == 0 || n == 0 {
        return Err(HarnessError::Config("--n and --per-task must be positive".into()));
    }
    let groups = n.div_ceil(per_task);
    let mut dataset = match mode {
        Mode::Bruteforce => build_bruteforce_dataset_with_budget(family, groups, per_task, epsilon, budget, seed)?,
        Mode::Hindsight => build_hindsight_dataset(family, groups, per_task, seed)?,
    };
    dataset.examples.truncate(n);
    if dataset.len() < n {
        log::warn!("only {} of {n} examples generated (unsolved tasks are skipped)", dataset.len());
    }
    let generator = dataset.meta.generator;
    save_dataset(&dataset, &out)?;
    println!("wrote {} {generator} examples for {family} to {}", dataset.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenDataset {
            family,
            mode,
            n,
            per_task,
            budget,
            epsilon,
            seed,
            out,
        } => gen_dataset(family, mode, n, per_task, budget, epsilon, seed, out),
        Command::Run {
            family,
            methods,
            dataset,
            backend,
            endpoint,
            api_key_env,
            model,
            encoding,
            n_tasks,
            iters,
            seed,
            out,
            init,
            timeout,
            max_retries,
            max_parallel,
            transcript,
            timing,
        } => {
            let mut config = ExperimentConfig::new(family, methods, out);
            config.n_tasks = n_tasks;
            config.iters = iters;
            config.dataset = dataset;
            config.master_seed = seed;
            config.timing = timing;
            config.init = init.map(|v| PolicyParams([v[0], v[1], v[2]]));
            config.backend = BackendConfig {
                kind: match backend {
                    Backend::Mock => BackendKind::Mock,
                    Backend::Remote => BackendKind::Remote,
                },
                endpoint_url: endpoint,
                api_key_env,
                timeout_s: timeout,
                max_retries,
                max_parallel,
                transcript,
                ..BackendConfig::default()
            };
            config.operator.model_name = model;
            config.operator.encoding = encoding;
            run_experiment(&config).and_then(|_| {
                print!("{}", report(&config.out_dir)?.table);
                Ok(())
            })
        }
        Command::Report { input, csv } => report(&input).and_then(|r| {
            print!("{}", r.table);
            if let Some(path) = csv {
                std::fs::write(&path, &r.csv).map_err(|source| HarnessError::Io { path, source })?;
            }
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
