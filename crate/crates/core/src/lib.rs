//! Persona dialogue corpus construction and validation.
//!
//! The pipeline runs from raw comment dumps to a persona-annotated dialogue
//! dataset: [`ingest`] threads comments into sessions, [`extract`] summarizes
//! each utterance into a persona triple, [`filter`] applies the quality
//! rules, [`profile`] merges triples into per-speaker profiles and training
//! examples, and [`augment`] adds unrelated personas to counter the
//! profile/response bias. [`encoding`] produces the four-channel model input
//! and attention mask consumed by the small unified transformer in
//! [`model`]. [`eval`] computes distinct-n, NLI ratios and the consistency
//! score; [`synthetic`] generates a world where those metrics are exact.

pub mod ablation;
pub mod augment;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod extract;
pub mod filter;
pub mod ingest;
pub mod model;
pub mod persona;
pub mod pipeline;
pub mod profile;
pub mod rng;
pub mod synthetic;

pub use error::{ConfigError, Error, FormatError, FormatReason, Result};
