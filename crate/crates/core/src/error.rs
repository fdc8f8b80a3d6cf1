use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("input outside the operating domain: {0}")]
    OutOfDomain(String),

    #[error("CBF-QP infeasible: best achievable margin {margin_max:.6}")]
    Infeasible { margin_max: f64 },

    #[error("empty unsafe set (threshold quantile {quantile} -> Φ_thr = {threshold})")]
    EmptyUnsafeSet { quantile: f64, threshold: f64 },

    #[error("training diverged at epoch {epoch}, member {member}")]
    Diverged { epoch: usize, member: usize },

    #[error("bound is vacuous: {0}")]
    Vacuous(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("corrupt artifact {}: {reason}", .path.display())]
    CorruptArtifact { path: PathBuf, reason: String },

    #[error("config digest mismatch: {path} carries {found}, expected {expected}")]
    DigestMismatch {
        path: String,
        found: String,
        expected: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code: 2 configuration or argument, 3 artifact or I/O,
    /// 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::MissingArtifact(_)
            | Error::CorruptArtifact { .. }
            | Error::DigestMismatch { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => 3,
            Error::NonFinite(_)
            | Error::OutOfDomain(_)
            | Error::Infeasible { .. }
            | Error::EmptyUnsafeSet { .. }
            | Error::Diverged { .. }
            | Error::Vacuous(_) => 4,
        }
    }
}
