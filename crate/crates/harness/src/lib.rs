//! Training harness: model assembly, the training loop, checkpoints,
//! profiling, ablation drivers and the `qrcl` command-line tool.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod model;
pub mod profile;
pub mod report;
pub mod train;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use model::{InputShape, Model};
pub use report::MetricsReport;
