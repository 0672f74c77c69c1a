//! Configuration, replicated experiments, rate and cost diagnostics, and
//! exact-likelihood oracles.

pub mod config;
pub mod cost;
pub mod experiment;
pub mod oracle;
pub mod rates;

pub use config::{ConfigError, RunConfig};
pub use cost::{cost_model_report, CostReport};
pub use experiment::{run_experiment, ExperimentError, ExperimentReport};
pub use oracle::{exact_mcmc, McmcSummary};
pub use rates::{rate_diagnostics, RateSettings, RateTable};
