//! Multi-objective evolutionary search over text prompts, with pluggable
//! model gateways, scoring objectives, evaluation metrics, and run
//! persistence.

pub mod analysis;
pub mod error;
pub mod fitness;
pub mod gateway;
pub mod genome;
pub mod metrics;
pub mod moea;
pub mod runner;

pub use error::{Error, Result};
