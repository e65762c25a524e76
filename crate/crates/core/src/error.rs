use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unsupported parameter: {0}")]
    Unsupported(String),
    #[error("site {site} outside window of half-width {window}")]
    OutOfWindow { site: i64, window: u64 },
    #[error("window {window} smaller than required radius {radius}")]
    InsufficientWindow { window: u64, radius: u64 },
    #[error("inconclusive regime classification: {0}")]
    Inconclusive(String),
    #[error("degenerate maximiser: {0}")]
    DegenerateMaximiser(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("stiffness: step size underflow at t={t} (h={h:e})")]
    Stiffness { t: f64, h: f64 },
    #[error("path enumeration would visit {count} paths (cap {cap})")]
    EnumerationCap { count: u128, cap: u128 },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("wrong suite: {0}")]
    WrongSuite(String),
    #[error("underpowered: {0}")]
    Underpowered(String),
    #[error("sampler error: {0}")]
    Sampler(String),
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
