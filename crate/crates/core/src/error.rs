use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped so callers can map them onto coarse failure classes:
/// [`ErrorClass::Usage`] for bad requests, [`ErrorClass::Data`] for problems
/// with the input data, and [`ErrorClass::Numerical`] for failures inside the
/// solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("formula error at position {position}: {message}")]
    Formula { position: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("missing value in column '{column}' at row {row} with no override")]
    MissingData { row: usize, column: String },

    #[error("singular design matrix; dependent column(s): {}", columns.join(", "))]
    SingularDesign { columns: Vec<String> },

    #[error("solver did not converge after {iterations} iterations (last iterate {last:?})")]
    Convergence { iterations: usize, last: Vec<f64> },

    #[error("degenerate level {level} in column '{column}': absent among positively weighted rows")]
    DegenerateLevel { column: String, level: i64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("state error: {0}")]
    State(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.position() {
            Some(pos) => Error::Parse {
                line: pos.line() as usize,
                message: e.to_string(),
            },
            None => Error::Schema(format!("csv: {e}")),
        }
    }
}

/// Coarse failure class, used by the CLI to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Formula { .. } | Error::Config(_) => ErrorClass::Usage,
            Error::Parse { .. }
            | Error::Schema(_)
            | Error::MissingData { .. }
            | Error::DegenerateLevel { .. }
            | Error::Io(_) => ErrorClass::Data,
            Error::SingularDesign { .. }
            | Error::Convergence { .. }
            | Error::Numeric(_)
            | Error::State(_) => ErrorClass::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
