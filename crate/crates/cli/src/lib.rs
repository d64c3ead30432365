//! Configuration, artifact persistence and end-to-end pipelines behind the
//! `spadfuse` command-line tool.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use config::{EvalConfig, Pipeline, RunConfig, CONFIG_VERSION};
pub use error::{CliError, CliResult};
pub use manifest::{verify_manifest, Manifest};
pub use pipeline::{evaluate, mtf_experiment, run_e2e, run_simulate, simulate, Dataset, E2eReport, Overrides};
