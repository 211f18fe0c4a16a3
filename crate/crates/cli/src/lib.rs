//! Experiment harness around the `esbcpo` library: configuration, seeded
//! multi-seed training, ablations, comparisons and trajectory replay.

pub mod compare;
pub mod config;
pub mod metrics_csv;
pub mod replay;
pub mod run;

pub use config::RunConfig;
