use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, field {field}: {msg}")]
    Parse {
        line: usize,
        field: usize,
        msg: String,
    },

    #[error("no valid genome found after {attempts} attempts")]
    RepairExhausted { attempts: usize },

    #[error("grid {width}x{height} is too large to enumerate (limit {limit} cells)")]
    SizeTooLarge {
        width: usize,
        height: usize,
        limit: usize,
    },

    #[error("invalid genome: {0}")]
    InvalidGenome(String),

    #[error("numerical blowup: {0}")]
    NumericalBlowup(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("degenerate design matrix: {0}")]
    DegenerateDesign(String),

    /// Well-formed input whose contents contradict each other.
    #[error("inconsistent data: {0}")]
    Inconsistent(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(line: usize, field: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            field,
            msg: msg.into(),
        }
    }
}
