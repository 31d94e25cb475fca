//! Orchestration behind the `srbm` binary: manifest loading, the four run
//! modes and their reports.
//!
//! Exit codes: 0 success, 1 usage or parse error, 2 assumption failure,
//! 3 certificate violation, 4 scheme diagnostic.

// `!(x > 0.0)` is the NaN-rejecting form; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use std::path::PathBuf;

use thiserror::Error;

pub mod commands;
pub mod manifest;
pub mod output;
pub mod presets;

pub use commands::{run_check, run_certify, run_converge, run_simulate, Options};
pub use manifest::{LoadedManifest, Mode, RunManifest};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },

    #[error("invalid input: {0}")]
    Input(srbm_core::Error),

    #[error("assumption check failed: {0}")]
    Assumption(String),

    #[error("{0} certificate violation(s)")]
    Violation(usize),

    #[error("scheme diagnostic: {0}")]
    Scheme(srbm_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Io { .. } | Self::Parse { .. } | Self::Input(_) => 1,
            Self::Assumption(_) => 2,
            Self::Violation(_) => 3,
            Self::Scheme(_) => 4,
        }
    }

    /// Sorts an error raised while running the scheme: runtime diagnostics
    /// exit with 4, configuration mistakes with 1.
    pub fn from_run(e: srbm_core::Error) -> Self {
        use srbm_core::Error as E;
        match e {
            E::AccumulationSuspected { .. }
            | E::JumpNotInterior { .. }
            | E::WeightsInfeasible { .. }
            | E::NotOnBoundary { .. }
            | E::SingularPoint { .. }
            | E::ZeroDirection { .. }
            | E::NoConvergence { .. } => Self::Scheme(e),
            other => Self::Input(other),
        }
    }
}
