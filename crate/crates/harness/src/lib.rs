//! Training pipelines, experiment plans and result tables.

pub mod adaptation;
pub mod data;
mod error;
pub mod experiments;
pub mod finetune;
pub mod ner;
pub mod plan;

pub use error::{HarnessError, Result};
