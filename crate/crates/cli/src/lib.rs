//! Pipeline commands for semi-supervised acoustic model training: synthetic
//! corpus generation, feature extraction, teacher training, top-k target
//! generation, scheduled student training, evaluation and reporting.

pub mod commands;
pub mod data;
pub mod error;
pub mod features;
pub mod manifest;
pub mod report;
pub mod synth;
pub mod util;

pub use error::{CliError, Result};
