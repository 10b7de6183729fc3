//! Experiment harness behind the `sis` binary: configuration files, fit files,
//! the calibration and estimation stages, CSV results and reports.

pub mod app;
pub mod config;
pub mod fit;
pub mod report;
pub mod runner;

pub use config::ExperimentSpec;
pub use fit::{FitEntry, PilotFit};
pub use report::{render, summarize, ReportLine};
pub use runner::{read_rows, run_all, run_calibrate, run_estimate, write_rows, ResultRow};
