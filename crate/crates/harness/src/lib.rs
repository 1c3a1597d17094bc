//! Experiment driver for the 6DMA cell-free uplink: runs every scheme over
//! independent realizations with shared random inputs, scores the final
//! designs by their ergodic sum rate, and writes CSV results, CDFs and
//! optimizer traces.

pub mod config;
pub mod error;
pub mod experiment;
pub mod report;
pub mod stats;

pub use config::{ExperimentConfig, Sweep, SweepAxis};
pub use error::{HarnessError, Result};
pub use experiment::{
    run_experiment, run_experiment_detailed, ExperimentOutput, ResultRow, TraceRow,
};
pub use report::{compute_cdf, emit_cdf_csv, emit_csv, emit_trace_csv, read_csv};
