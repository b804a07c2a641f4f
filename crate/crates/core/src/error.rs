use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid price {price} at observation {index}")]
    InvalidPrice { index: usize, price: f64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("insufficient events: found {n_events}, need at least 2")]
    InsufficientEvents { n_events: usize },

    #[error("tail too thin: {0}")]
    TailTooThin(String),

    #[error("degenerate fluctuation at window {window}")]
    DegenerateFluctuation { window: usize },

    #[error("q = {q} is outside the tail region (q <= -2)")]
    OutsideTailRegion { q: f64 },

    #[error("fit did not converge; best log-space residual rms {best_residual}")]
    NonConvergence { best_residual: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    /// True for failures of a numerical procedure on otherwise valid input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. } | Error::DegenerateFluctuation { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        Error::Parse {
            line,
            message: e.to_string(),
        }
    }
}
