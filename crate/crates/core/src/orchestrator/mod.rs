//! End-to-end pipeline, result persistence and the HTTP service.

mod config;
mod pipeline;
mod results;
pub mod server;

pub use config::{ConfigError, PipelineConfig, ReasonerSettings, ENV_PREFIX, REASONER_KEY};
pub use pipeline::{EndpointHealth, Pipeline, PipelineError, PIPELINE_VERSION};
pub use results::{read_result, CaseResult, ResultStore, StageTimings};
pub use server::{router, serve, serve_with_shutdown, ServeError};
