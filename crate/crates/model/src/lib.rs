//! Desk-scale character-level encoder-decoder transformer.
//!
//! Training runs in `f32`; the same network can be cast to `f64` for
//! finite-difference gradient verification.

pub mod checkpoint;
pub mod config;
pub mod decode;
pub mod error;
pub mod float;
pub mod gradcheck;
pub mod layers;
pub mod linalg;
pub mod optim;
pub mod params;
pub mod train;
pub mod transformer;
pub mod vocab;

pub use checkpoint::ModelCheckpoint;
pub use config::{ModelConfig, OptimizerConfig};
pub use decode::{decode, DecodeMode, Hypothesis, ModelScorer};
pub use error::{ModelError, Result};
pub use layers::Fault;
pub use train::{StepReport, Trainer};
pub use transformer::{Batch, Seq2Seq};
pub use vocab::Vocab;
