use ghcm::GhcmError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),

    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] GhcmError),
}

impl CliError {
    /// 2 parse or configuration, 3 dimensions or representation,
    /// 4 degenerate test, 5 convergence, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Read { .. } => 2,
            CliError::Write { .. } => 1,
            CliError::Core(e) => match e {
                GhcmError::InvalidGrid(_)
                | GhcmError::DegenerateGrid(_)
                | GhcmError::NonFinite(_)
                | GhcmError::Scenario(_)
                | GhcmError::GroupSpec(_)
                | GhcmError::InvalidArgument(_) => 2,
                GhcmError::GridMismatch(_)
                | GhcmError::DimensionMismatch(_)
                | GhcmError::Representation(_) => 3,
                GhcmError::ZeroKernel
                | GhcmError::NegativeEigenvalue { .. }
                | GhcmError::SampleSize(_)
                | GhcmError::DegenerateTest(_) => 4,
                GhcmError::Convergence { .. } => 5,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
