//! Experiment harness for `roughflow`: config files, the drift and diffusion
//! registry, scenario runs and the verification manifest.

pub mod checks;
pub mod config;
pub mod registry;
pub mod report;
pub mod scenarios;

pub use config::{echo, parse_config, ConfigError, ExperimentConfig, Scenario};
pub use report::{CheckResult, RunReport};
pub use scenarios::run;
