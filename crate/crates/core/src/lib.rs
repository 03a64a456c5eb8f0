//! Demographic bias auditing for spoken language understanding outputs.
//!
//! Records carry reference and hypothesis transcripts and parses together
//! with speaker demographics. Scores (exact match, word error rate) are
//! computed per utterance and tested for dependence on the demographic
//! variables with logistic regression, likelihood-ratio adjustment tests,
//! chi-squared contingency tests and one-way ANOVA.

pub mod bias_tests;
pub mod data_model;
pub mod error;
pub mod fixtures;
pub mod glm;
pub mod ingestion;
pub mod metrics;
pub mod report;
pub mod specfun;

pub use error::{Error, ErrorClass, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
