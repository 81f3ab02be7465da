use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad class of a failure, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed or invalid input data.
    Data,
    /// The data is valid but a prediction could not be produced.
    Prediction,
    Io,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: parse error: {message}")]
    Parse { path: String, message: String },

    #[error("{path}: schema error at {pointer}: {message}")]
    Schema {
        path: String,
        pointer: String,
        message: String,
    },

    #[error("{locator}: {message}")]
    Validation { locator: String, message: String },

    #[error("device mismatch: {left} vs {right}")]
    DeviceMismatch { left: String, right: String },

    #[error("conflicting measurements for kernel {key}")]
    Conflict { key: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("no recorded configuration for {family}/{dtype}/{transpose}")]
    NoConfigAvailable {
        family: String,
        dtype: String,
        transpose: String,
    },

    #[error("invalid tile configuration for kernel {key}")]
    InvalidTile { key: String },

    #[error("curve belongs to kernel {curve}, not {key}")]
    CurveMismatch { key: String, curve: String },

    #[error("unknown kernel family {family} for this predictor")]
    UnknownFamily { family: String },

    #[error("no throughput curve for kernel {key}")]
    UnknownKernel { key: String },

    #[error("insufficient data: {got} records, need at least {need}")]
    InsufficientData { got: usize, need: usize },

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("rational fit has a pole inside [{lo}, {hi}]")]
    PoleInRange { lo: f64, hi: f64 },

    #[error("layer {layer_id}{}: {reason}", device.as_ref().map(|d| format!(" on device {d}")).unwrap_or_default())]
    UnresolvedLayer {
        layer_id: String,
        device: Option<String>,
        reason: String,
    },

    #[error("grid point {coords} could not be predicted: {reason}")]
    UnresolvedPoint { coords: String, reason: String },

    #[error("measured latency must be > 0, got {0}")]
    ZeroMeasured(f64),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("no cache entry for {0}")]
    MissingEntry(String),

    #[error("stale cache: {0}")]
    StaleCache(String),

    #[error("corrupt cache file: {0}")]
    CorruptCache(String),
}

impl Error {
    pub(crate) fn invalid(locator: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            locator: locator.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Parse { .. }
            | Error::Schema { .. }
            | Error::Validation { .. }
            | Error::DeviceMismatch { .. }
            | Error::Conflict { .. }
            | Error::InvalidTile { .. }
            | Error::InsufficientData { .. }
            | Error::SingularSystem(_)
            | Error::PoleInRange { .. }
            | Error::ZeroMeasured(_)
            | Error::EmptyInput(_)
            | Error::StaleCache(_)
            | Error::CorruptCache(_) => ErrorKind::Data,
            Error::NoConfigAvailable { .. }
            | Error::CurveMismatch { .. }
            | Error::UnknownFamily { .. }
            | Error::UnknownKernel { .. }
            | Error::UnresolvedLayer { .. }
            | Error::UnresolvedPoint { .. }
            | Error::MissingEntry(_) => ErrorKind::Prediction,
        }
    }
}
