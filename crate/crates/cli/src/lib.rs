//! Command-line driver for the seedclass pipeline: configuration, artifact
//! plumbing, deterministic seeding, and a bundled synthetic corpus
//! generator. All numeric work lives in the seedclass library crate.

pub mod artifacts;
pub mod config;
pub mod inspect;
pub mod pipeline;
pub mod synth;

use std::path::PathBuf;

use thiserror::Error;

/// Error taxonomy mapped onto exit codes: validation 1, runtime 2,
/// missing artifact 3.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("stage {stage}: missing prerequisite artifact {}", .path.display())]
    MissingArtifact { stage: &'static str, path: PathBuf },
    #[error("stage {stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError::Validation(message.into())
    }

    pub fn stage(stage: &'static str, error: impl std::fmt::Display) -> Self {
        CliError::Stage {
            stage,
            message: error.to_string(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Stage { .. } | CliError::Io(_) => 2,
            CliError::MissingArtifact { .. } => 3,
        }
    }
}
