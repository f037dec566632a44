//! `relbn`: run the learning pipeline stage by stage over a workspace
//! directory (`vdb/`, `cdb/`, `mdb/`, `predictions/`, `metrics/`, `bench/`).
//!
//! Exit codes: 0 success, 1 invalid input, 2 missing or stale upstream stage,
//! 3 internal consistency failure.

mod config;
mod stages;
mod workspace;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use relbn::count::CountScope;
use relbn::learn::LearnConfig;

use config::{CountMode, PipelineConfig, PredictConfig, PredictMode};
use stages::Pipeline;
use workspace::Workspace;

#[derive(Debug)]
pub enum Failure {
    Invalid(String),
    Missing(String),
    Consistency(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Missing(_) => 2,
            Failure::Consistency(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Invalid(m) | Failure::Missing(m) | Failure::Consistency(m) => f.write_str(m),
        }
    }
}

impl From<relbn::Error> for Failure {
    fn from(e: relbn::Error) -> Failure {
        match e {
            relbn::Error::Consistency(_) => Failure::Consistency(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "relbn", version, about = "Learn Bayesian networks over relational datasets")]
struct Cli {
    /// Workspace directory holding the stage outputs.
    #[arg(long, global = true, default_value = "workspace")]
    workspace: PathBuf,

    /// Seed for synthetic generation (overrides the seed in the synth file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Replace existing stage outputs.
    #[arg(long, global = true)]
    overwrite: bool,

    /// Count backend: `builtin`, `sqlite::memory:` or `sqlite:<path>`.
    #[arg(long, global = true, default_value = "builtin")]
    backend: String,

    /// TOML file whose settings override the flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScopeArg {
    Family,
    Joint,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the random variable database from a dataset manifest.
    Analyze {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Compute sufficient statistics.
    Count {
        #[arg(long, value_enum, default_value = "precount")]
        mode: CountMode,
        #[arg(long, default_value_t = 10_000_000)]
        max_joint_rows: u64,
    },
    /// Learn structure and parameters.
    Learn {
        #[arg(long)]
        max_iterations: Option<usize>,
        #[arg(long)]
        max_parents: Option<usize>,
        /// Count each family over its own variables or over all of them.
        #[arg(long, value_enum)]
        scope: Option<ScopeArg>,
        #[arg(long)]
        no_indicator_constraint: bool,
    },
    /// Class probabilities for one entity attribute.
    Predict {
        #[arg(long)]
        target: String,
        /// Entities to predict; all entities of the target's table if omitted.
        #[arg(long = "entity")]
        entities: Vec<String>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Conditional log-likelihood and accuracy on a test split.
    Evaluate {
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, value_enum)]
        mode: Option<PredictMode>,
    },
    /// Time blocked against single-instance prediction on a test split.
    Bench {
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Generate a synthetic dataset (and test split) from a TOML spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn build_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut config = PipelineConfig {
        manifest: None,
        workspace: cli.workspace.clone(),
        seed: cli.seed,
        backend: cli.backend.clone(),
        count_mode: CountMode::Precount,
        max_joint_rows: 10_000_000,
        learn: LearnConfig::default(),
        predict: PredictConfig::default(),
    };
    match &cli.command {
        Command::Analyze { manifest } => config.manifest = manifest.clone(),
        Command::Count { mode, max_joint_rows } => {
            config.count_mode = *mode;
            config.max_joint_rows = *max_joint_rows;
        }
        Command::Learn {
            max_iterations,
            max_parents,
            scope,
            no_indicator_constraint,
        } => {
            if let Some(n) = max_iterations {
                config.learn.max_iterations = *n;
            }
            if let Some(n) = max_parents {
                config.learn.max_parents = *n;
            }
            if let Some(s) = scope {
                config.learn.count_scope = match s {
                    ScopeArg::Family => CountScope::Family,
                    ScopeArg::Joint => CountScope::Joint,
                };
            }
            config.learn.indicator_constraint = !no_indicator_constraint;
        }
        Command::Predict { alpha, .. } | Command::Bench { alpha, .. } => {
            if let Some(a) = alpha {
                config.predict.alpha = *a;
            }
        }
        Command::Evaluate { alpha, mode, .. } => {
            if let Some(a) = alpha {
                config.predict.alpha = *a;
            }
            if let Some(m) = mode {
                config.predict.mode = *m;
            }
        }
        Command::Synth { .. } => {}
    }
    if let Some(path) = &cli.config {
        config = config.merge_file(path)?;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = build_config(&cli)?;
    let pipeline = Pipeline {
        ws: Workspace::new(config.workspace.clone(), cli.overwrite),
        config,
    };
    match &cli.command {
        Command::Analyze { .. } => pipeline.analyze(),
        Command::Count { .. } => pipeline.count(),
        Command::Learn { .. } => pipeline.learn(),
        Command::Predict { target, entities, .. } => pipeline.predict(target, entities),
        Command::Evaluate { test, .. } => pipeline.evaluate(test),
        Command::Bench { test, .. } => pipeline.bench(test),
        Command::Synth { spec, out } => pipeline.synth(spec, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
