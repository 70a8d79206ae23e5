//! Seed fan-out, parameter sweeps and the thread-pool executor.

use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use fldb_core::{AgentExecutor, AgentState, ConfigError, Environment, RatingsDataset, TrialError, TrialOutput};
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};
use thiserror::Error;

use crate::config::SimConfig;
use crate::ingest::{ingest_ratings, IngestError};
use crate::output::render_csv;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("seed {seed}: {source}")]
    Trial {
        seed: u64,
        #[source]
        source: TrialError,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot start worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl RunError {
    /// Process exit status: 1 for configuration problems, 2 for everything
    /// that went wrong while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            RunError::Trial {
                source: TrialError::Config(_),
                ..
            } => 1,
            _ => 2,
        }
    }
}

/// Runs agent work on a rayon pool. Results are collected in agent order,
/// so output does not depend on the number of threads.
pub struct Parallel {
    pool: ThreadPool,
}

impl Parallel {
    pub fn new(workers: Option<usize>) -> Result<Self, rayon::ThreadPoolBuildError> {
        let mut builder = ThreadPoolBuilder::new();
        if let Some(n) = workers {
            builder = builder.num_threads(n);
        }
        Ok(Parallel { pool: builder.build()? })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }
}

impl AgentExecutor for Parallel {
    fn map_agents<T, F>(&self, agents: &mut [AgentState], f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&mut AgentState) -> T + Sync + Send,
    {
        self.pool.install(|| agents.par_iter_mut().map(f).collect())
    }

    fn map_indices<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

/// All trials of one configuration, in seed-list order.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub trials: Vec<TrialOutput>,
}

impl RunResult {
    pub fn csv(&self) -> String {
        render_csv(&self.trials)
    }
}

fn load_dataset(config: &SimConfig) -> Result<Option<RatingsDataset>, RunError> {
    match &config.dataset {
        Some(spec) => Ok(Some(ingest_ratings(spec, config.trial.dim)?)),
        None => Ok(None),
    }
}

/// Runs every seed of `config` on `exec`; seeds run concurrently.
pub fn run_with(config: &SimConfig, dataset: Option<&RatingsDataset>, exec: &Parallel) -> Result<RunResult, RunError> {
    config.validate()?;
    let env = match dataset {
        Some(ds) => Environment::Ratings(ds),
        None => Environment::Synthetic,
    };
    let trials: Vec<Result<TrialOutput, RunError>> = exec.install(|| {
        config
            .seeds
            .par_iter()
            .map(|&seed| {
                fldb_core::run_trial(&config.trial_for(seed), env, exec)
                    .map_err(|source| RunError::Trial { seed, source })
            })
            .collect()
    });
    Ok(RunResult {
        trials: trials.into_iter().collect::<Result<_, _>>()?,
    })
}

/// Loads the dataset (if any), runs all seeds and writes the CSV when an
/// output path is configured.
pub fn run(config: &SimConfig) -> Result<RunResult, RunError> {
    config.validate()?;
    let dataset = load_dataset(config)?;
    let exec = Parallel::new(config.workers)?;
    let result = run_with(config, dataset.as_ref(), &exec)?;
    if let Some(path) = &config.out {
        write_file(path, &result.csv())?;
    }
    Ok(result)
}

pub fn write_file(path: &PathBuf, text: &str) -> Result<(), RunError> {
    fs::write(path, text).map_err(|source| RunError::Io {
        path: path.clone(),
        source,
    })
}

/// The parameters a sweep may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Agents,
    Tau,
    Sigma,
    Arms,
}

impl SweepAxis {
    pub fn key(self) -> &'static str {
        match self {
            SweepAxis::Agents => "N",
            SweepAxis::Tau => "tau",
            SweepAxis::Sigma => "sigma",
            SweepAxis::Arms => "K",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "N" => Ok(SweepAxis::Agents),
            "tau" => Ok(SweepAxis::Tau),
            "sigma" => Ok(SweepAxis::Sigma),
            "K" => Ok(SweepAxis::Arms),
            other => Err(ConfigError::new("axis", format!("expected N, tau, sigma or K, got {other:?}"))),
        }
    }
}

/// Expands a sweep into one configuration per value; every configuration is
/// validated before anything runs.
pub fn sweep_configs(base: &SimConfig, axis: SweepAxis, values: &[String]) -> Result<Vec<SimConfig>, ConfigError> {
    if values.is_empty() {
        return Err(ConfigError::new("values", "at least one value is required"));
    }
    values
        .iter()
        .map(|v| {
            let mut cfg = base.clone();
            cfg.set(axis.key(), v)?;
            cfg.validate()?;
            Ok(cfg)
        })
        .collect()
}

/// Runs each swept configuration and concatenates the trials.
pub fn sweep(base: &SimConfig, axis: SweepAxis, values: &[String]) -> Result<RunResult, RunError> {
    let configs = sweep_configs(base, axis, values)?;
    let dataset = load_dataset(base)?;
    let exec = Parallel::new(base.workers)?;
    let mut trials = Vec::new();
    for cfg in &configs {
        trials.extend(run_with(cfg, dataset.as_ref(), &exec)?.trials);
    }
    let result = RunResult { trials };
    if let Some(path) = &base.out {
        write_file(path, &result.csv())?;
    }
    Ok(result)
}
