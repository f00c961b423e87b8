//! Command-line front end for the lensless CRB toolkit: configuration,
//! serialization (CSV, 16-bit PGM, JSON manifests), the single-case CRB
//! pipeline, the reduced-size self-checks and the two canned studies.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod pipeline;
pub mod study;
pub mod verify;

pub use config::{ExperimentConfig, Settings};
pub use error::{CliError, Result};
