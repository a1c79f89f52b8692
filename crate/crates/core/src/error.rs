use thiserror::Error;

/// Errors raised anywhere in the transmitter / link / key-rate pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A logical symbol that the protocol never prepares (e.g. a Y-basis decoy).
    #[error("invalid symbol: {0}")]
    InvalidSymbol(String),

    /// Inconsistent parameters or configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed textual input. `line` is 1-based; 0 means "not line-oriented".
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A model approximation is being used outside the range where it holds.
    #[error("model validity error: {0}")]
    ModelValidity(String),

    /// Decoy and vacuum intensities coincide, so no bound can be formed.
    #[error("degenerate decoy intensities: nu = omega = {0}")]
    DegenerateDecoy(f64),

    /// The single-photon error bound is undefined because the yield bound is zero.
    #[error("single-photon error bound undefined: y1 lower bound is zero")]
    UndefinedBound,

    /// Too few samples for the requested statistic.
    #[error("need at least {required} samples, got {got}")]
    SampleSize { required: usize, got: usize },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be finite, got {v}")))
    }
}
