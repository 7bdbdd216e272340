//! Multi-agent image classification over vision-language model backends.

pub mod backend;
pub mod baselines;
pub mod cache;
pub mod config;
pub mod datasets;
pub mod harness;
pub mod error;
pub mod fixtures;
pub mod parser;
pub mod pipeline;
pub mod prompts;
pub mod types;

pub use error::{ConfigError, CoreError};
pub use types::*;
