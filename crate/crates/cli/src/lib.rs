//! Scenario runner and SVG renderer for `difflab`.
//!
//! The binary is a thin wrapper over this library so the same code paths are
//! exercised by integration tests.

pub mod bundled;
pub mod render;
pub mod runner;
pub mod scenario;

pub use runner::{run, RunOptions, RunReport};
pub use scenario::{load_scenario, LoadedScenario, Scenario};

pub const EXIT_IO: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

/// Name of the environment variable holding the output root directory.
pub const OUTPUT_ROOT_ENV: &str = "DIFFLAB_OUTPUT_ROOT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] difflab::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        use difflab::Error as E;
        match self {
            CliError::Validation(_) | CliError::Usage(_) => EXIT_VALIDATION,
            CliError::Io { .. } => EXIT_IO,
            CliError::Core(e) => match e {
                E::BlowUp { .. }
                | E::NoConvergence { .. }
                | E::GridTooCoarse { .. }
                | E::SingularPosterior
                | E::NonFiniteCandidate { .. }
                | E::Numeric(_)
                | E::Inconsistent { .. } => EXIT_NUMERIC,
                E::Io(_) => EXIT_IO,
                E::Domain { .. }
                | E::Invalid { .. }
                | E::Dimension { .. }
                | E::Parse { .. }
                | E::InsufficientData(_)
                | E::Unsupported(_)
                | E::Json(_)
                | E::Csv(_) => EXIT_VALIDATION,
            },
        }
    }
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
