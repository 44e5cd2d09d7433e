use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("out of model domain: {0}")]
    OutOfDomain(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("invalid band: {0}")]
    InvalidBand(String),
    #[error("invalid comparison: {0}")]
    InvalidComparison(String),
    #[error("fit initialization failed: {0}")]
    Initialization(String),
    #[error("config error: {0}")]
    Config(String),
    /// `line` is 1-based; 0 refers to the file as a whole.
    #[error("{path}: {}{msg}", line_prefix(*line))]
    Format {
        path: String,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn line_prefix(line: usize) -> String {
    if line == 0 {
        String::new()
    } else {
        format!("line {line}: ")
    }
}
