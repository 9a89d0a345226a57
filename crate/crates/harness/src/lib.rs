//! Experiment runner for noisescale: run configs, benchmark matrices, tensor and image files.

pub mod bench;
pub mod config;
pub mod error;
pub mod pgm;
pub mod report;
pub mod tensor;

pub use bench::{run_benchmark, run_one, RunOutput, World};
pub use config::{Metric, Mode, RunConfig};
pub use error::{HarnessError, Result};
pub use report::MetricsReport;
