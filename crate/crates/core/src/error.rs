use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("{what}: expected {expected} values, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite value {value} in {what} at grid point {location}")]
    NonFinite {
        what: String,
        location: String,
        value: f64,
    },

    #[error("domain error: {what} = {value} at grid point {location} (must be > 0)")]
    NonPositiveTemperature {
        what: String,
        location: String,
        value: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular A1 reciprocal: phi = 0 at grid point {location} with zero regularization")]
    Singularity { location: String },

    #[error("entropy heat capacity d(s)/d(theta) = {value:e} <= 1e-10 at grid point {location}; A1 temperature update is not invertible")]
    HeatCapacityLoss { location: String, value: f64 },

    #[error("missing time-derivative cache: {0}")]
    MissingCache(&'static str),

    #[error("positivity failure at step {step} (t = {t}): theta = {value} at grid point {location}")]
    Positivity {
        step: usize,
        t: f64,
        location: String,
        value: f64,
    },

    #[error("time grid: {0}")]
    TimeGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed field file: {reason}")]
    Format { path: String, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for failures of the numerics (positivity, singularities, blow-up).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::NonPositiveTemperature { .. }
                | Error::Singularity { .. }
                | Error::HeatCapacityLoss { .. }
                | Error::Positivity { .. }
                | Error::Domain(_)
        )
    }
}
