//! Experiment configuration: a flat `key = value` file plus overrides.
//!
//! Keys mirror the command-line flags (`algo`, `T`, `N`, `K`, `d`, `tau`,
//! `alpha`, `lambda`, `delta`, `sigma`, `seed`, `runs`, `out`, ...). Blank
//! lines and `#` comments are ignored. Later assignments win, so command-line
//! overrides are applied after the file.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fldb_core::{Algorithm, ConfigError, TrialConfig};

/// Where the ratings matrix comes from and how it is cut down.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub n_users: usize,
    pub n_items: usize,
    pub feature_rows: usize,
}

/// A full experiment: one trial template run over several seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub trial: TrialConfig,
    pub seeds: Vec<u64>,
    pub dataset: Option<DatasetSpec>,
    pub out: Option<PathBuf>,
    /// Worker threads; `None` uses all cores.
    pub workers: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            trial: TrialConfig::default(),
            seeds: vec![0, 1, 2],
            dataset: None,
            out: None,
            workers: None,
        }
    }
}

fn parse<T: FromStr>(field: &'static str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e: T::Err| ConfigError::new(field, format!("cannot parse {value:?}: {e}")))
}

fn parse_bool(field: &'static str, value: &str) -> Result<bool, ConfigError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        other => Err(ConfigError::new(field, format!("expected a boolean, got {other:?}"))),
    }
}

/// The keys that `SimConfig::set` understands, in canonical spelling.
pub const KEYS: &[&str] = &[
    "algo",
    "T",
    "N",
    "K",
    "d",
    "tau",
    "alpha",
    "lambda",
    "delta",
    "sigma",
    "gap_bound",
    "kappa",
    "seed",
    "runs",
    "seeds",
    "normalize_theta_star",
    "recenter_projection",
    "tol",
    "max_iter",
    "dataset",
    "n_users",
    "n_items",
    "feature_rows",
    "out",
    "workers",
];

impl SimConfig {
    /// Assigns one key. `seed` and `runs` both rewrite the seed list as
    /// `seed, seed + 1, ..., seed + runs - 1`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let t = &mut self.trial;
        match key {
            "algo" => {
                t.algo = value
                    .trim()
                    .parse::<Algorithm>()
                    .map_err(|e| ConfigError::new("algo", e.to_string()))?
            }
            "T" => t.horizon = parse("T", value)?,
            "N" => t.agents = parse("N", value)?,
            "K" => t.arms = parse("K", value)?,
            "d" => t.dim = parse("d", value)?,
            "tau" => t.tau = parse("tau", value)?,
            "alpha" => t.alpha = parse("alpha", value)?,
            "lambda" => {
                t.lambda = match value.trim() {
                    "auto" | "1/T" => None,
                    v => Some(parse("lambda", v)?),
                }
            }
            "delta" => t.delta = parse("delta", value)?,
            "sigma" => t.sigma = parse("sigma", value)?,
            "gap_bound" | "B" => t.gap_bound = parse("gap_bound", value)?,
            "kappa" => {
                t.kappa_override = match value.trim() {
                    "auto" => None,
                    v => Some(parse("kappa", v)?),
                }
            }
            "seed" => {
                let start: u64 = parse("seed", value)?;
                let runs = self.seeds.len().max(1) as u64;
                self.seeds = (start..start + runs).collect();
            }
            "runs" => {
                let runs: u64 = parse("runs", value)?;
                if runs == 0 {
                    return Err(ConfigError::new("runs", "must be at least 1"));
                }
                let start = self.seeds.first().copied().unwrap_or(0);
                self.seeds = (start..start + runs).collect();
            }
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse("seeds", s))
                    .collect::<Result<_, _>>()?;
            }
            "normalize_theta_star" => t.normalize_theta_star = parse_bool(key_name(key), value)?,
            "recenter_projection" => t.recenter_projection = parse_bool(key_name(key), value)?,
            "tol" => t.newton.tol = parse("tol", value)?,
            "max_iter" => t.newton.max_iter = parse("max_iter", value)?,
            "dataset" => self.dataset_mut().path = PathBuf::from(value.trim()),
            "n_users" => self.dataset_mut().n_users = parse("n_users", value)?,
            "n_items" => self.dataset_mut().n_items = parse("n_items", value)?,
            "feature_rows" => self.dataset_mut().feature_rows = parse("feature_rows", value)?,
            "out" => self.out = Some(PathBuf::from(value.trim())),
            "workers" => {
                let w: usize = parse("workers", value)?;
                self.workers = if w == 0 { None } else { Some(w) };
            }
            _ => return Err(ConfigError::new("key", format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    fn dataset_mut(&mut self) -> &mut DatasetSpec {
        self.dataset.get_or_insert_with(|| DatasetSpec {
            path: PathBuf::new(),
            n_users: 200,
            n_items: 200,
            feature_rows: 20,
        })
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_str(&mut self, text: &str) -> Result<(), ConfigError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError::new("file", format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))?;
        let mut cfg = SimConfig::default();
        cfg.apply_str(&text)?;
        Ok(cfg)
    }

    /// The trial for one seed.
    pub fn trial_for(&self, seed: u64) -> TrialConfig {
        TrialConfig {
            seed,
            ..self.trial.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.trial.validate()?;
        if self.seeds.is_empty() {
            return Err(ConfigError::new("seeds", "at least one seed is required"));
        }
        if let Some(ds) = &self.dataset {
            if ds.path.as_os_str().is_empty() {
                return Err(ConfigError::new("dataset", "path is empty"));
            }
            if ds.feature_rows == 0 || ds.feature_rows >= ds.n_users {
                return Err(ConfigError::new(
                    "feature_rows",
                    format!("must lie in [1, n_users), got {}", ds.feature_rows),
                ));
            }
            if self.trial.dim > ds.feature_rows.min(ds.n_items) {
                return Err(ConfigError::new(
                    "d",
                    format!(
                        "embedding width {} exceeds the rank limit min(feature_rows, n_items) = {}",
                        self.trial.dim,
                        ds.feature_rows.min(ds.n_items)
                    ),
                ));
            }
            if self.trial.arms > ds.n_items {
                return Err(ConfigError::new("K", format!("{} exceeds n_items = {}", self.trial.arms, ds.n_items)));
            }
        }
        if self.workers == Some(0) {
            return Err(ConfigError::new("workers", "must be at least 1"));
        }
        Ok(())
    }
}

fn key_name(key: &str) -> &'static str {
    KEYS.iter().copied().find(|k| *k == key).unwrap_or("key")
}
