//! Federated contextual linear dueling bandits.
//!
//! This crate holds the allocation-only algorithmic core: the preference
//! model and its maximum-likelihood solver, the per-agent arm-pair selection
//! and accumulation logic, the central server for both the federated
//! gradient-descent (`FLDB-GD`) and online-gradient-descent (`FLDB-OGD`)
//! protocols, regret bookkeeping, and a deterministic protocol driver.
//!
//! Everything that touches files, threads or the command line lives in the
//! `fldb` companion crate.
#![no_std]

extern crate alloc;

pub mod agent;
pub mod environment;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod protocol;
pub mod rng;
pub mod server;

pub use agent::{select_pair, AgentState, Broadcast, ProtocolError, Upload};
pub use environment::{ArmSet, GroundTruth, RatingsDataset};
pub use linalg::{InfoMatrix, Matrix, Vector};
pub use metrics::{summarize, Algorithm, RegretCurve, RoundRecord, Summary};
pub use model::{ConfidenceSchedule, LinkConstants, ModelError, Sample};
pub use protocol::{
    ground_truth, run_trial, AgentExecutor, ConfigError, Environment, Sequential, TrialConfig, TrialError,
    TrialOutput,
};
pub use server::{CommLedger, GdServer, OgdServer, ProjectionCenter};
