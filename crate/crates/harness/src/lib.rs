//! Scenario runner for the resilience-index experiments: calibration,
//! Monte Carlo trials, benchmark aggregation and SVG plots.

pub mod bench;
pub mod config;
pub mod error;
pub mod plot;
pub mod seeding;
pub mod trial;

pub use bench::{run_scenarios, summarize, RunOptions, SummaryRow};
pub use config::{AdaptationMode, BenchMatrix, ProfileParams, ScenarioConfig};
pub use error::{HarnessError, Result};
pub use trial::{calibrate_source, run_trial, CalibrationCache, Calibrated, TrialResult};
