//! Experiment runner for federated linear dueling bandits.
//!
//! Wraps the `fldb-core` protocol with everything that needs `std`: config
//! files, ratings ingestion, a thread-pool executor, sweeps and CSV output.

pub mod config;
pub mod ingest;
pub mod output;
pub mod runner;

pub use config::{DatasetSpec, SimConfig};
pub use ingest::{ingest_ratings, ratings_from_str, IngestError};
pub use output::{fmt_real, render_csv, HEADER};
pub use runner::{run, run_with, sweep, Parallel, RunError, RunResult, SweepAxis};
