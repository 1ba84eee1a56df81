use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("class {0} has no clean samples")]
    DegenerateClass(usize),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("invalid world: {0}")]
    InvalidWorld(String),

    #[error("decoupling mismatch: lhs = {lhs}, term sum = {sum}")]
    DecouplingMismatch { lhs: f64, sum: f64 },

    #[error("invalid config field `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse(format!("{other:?}")),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        if err.is_io() {
            Error::Io(err.into())
        } else {
            Error::Parse(err.to_string())
        }
    }
}

impl Error {
    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::LengthMismatch(_) => "length_mismatch",
            Error::DegenerateClass(_) => "degenerate_class",
            Error::EmptyDataset => "empty_dataset",
            Error::TrainingDiverged(_) => "training_diverged",
            Error::InvalidWorld(_) => "invalid_world",
            Error::DecouplingMismatch { .. } => "decoupling_mismatch",
            Error::InvalidConfig { .. } => "invalid_config",
            Error::Parse(_) => "parse_error",
            Error::Io(_) => "io_error",
        }
    }

    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::TrainingDiverged(_) => 3,
            Error::Io(_) => 4,
            Error::DecouplingMismatch { .. } => 5,
            Error::Parse(_) => 6,
            _ => 2,
        }
    }
}
