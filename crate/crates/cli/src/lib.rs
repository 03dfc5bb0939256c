//! Driver behind the `fracpe` binary: configuration, run directories,
//! manifests and the experiment runners.

pub mod config;
pub mod experiments;
pub mod manifest;
pub mod rundir;

use std::path::PathBuf;

pub use config::{Experiment, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("resume refused: {0}")]
    Resume(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] fracpe::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    /// The experiment ran and its criterion failed.
    Fail,
    /// A run without a PASS/FAIL criterion finished.
    Complete,
    /// Stopped early at the step limit; resumable.
    Stopped {
        step: usize,
    },
}

impl Outcome {
    pub fn from_verdict(v: fracpe::noise::Verdict) -> Self {
        if v.passed() {
            Self::Pass
        } else {
            Self::Fail
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Self::Fail => 2,
            _ => 0,
        }
    }
}

/// Everything a run needs besides the config itself.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub resume: Option<PathBuf>,
    pub max_steps: Option<usize>,
}

/// Load, resolve and run one experiment.
pub fn run(experiment: Experiment, inv: &Invocation) -> Result<Outcome> {
    if let Some(dir) = &inv.resume {
        return experiments::resume(experiment, dir, inv);
    }
    let cfg = match &inv.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let out = inv
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("fracpe-out").join(experiment.name()));
    init_threads(inv.threads.or(cfg.threads))?;
    let cfg = cfg.resolve(experiment, inv.seed)?;
    experiments::run_fresh(&cfg, &out, inv.max_steps)
}

pub(crate) fn init_threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Config("thread count must be at least 1".into()));
        }
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}
