//! Metrics, experiment configs and the task runner behind the `ctes` binary.

mod config;
mod metrics;
mod run;

pub use config::*;
pub use metrics::*;
pub use run::*;
