use centroid_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },

    /// Input row `index` (0-based) is not a probability vector.
    #[error("row {0} is not on the probability simplex")]
    RowNotOnSimplex(usize),

    #[error("config: {0}")]
    Config(String),

    #[error("V_s has negative entries; pass --allow-negative-basis to use it anyway")]
    NegativeBasis,

    #[error("network was compiled from a different basis (hash {net}, matrix gives {matrix})")]
    BasisMismatch { net: String, matrix: String },

    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_DATA: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Core(e) => match e {
                CoreError::ConvergenceFailure { .. }
                | CoreError::UnhandledPoleOrder { .. }
                | CoreError::ZeroColumnEntry
                | CoreError::Unbounded => EXIT_NUMERIC,
                _ => EXIT_DATA,
            },
            _ => EXIT_DATA,
        }
    }
}
