use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("duplicate unit id {0:?}")]
    DuplicateId(String),

    #[error("row {row}, column {column}: cannot parse {value:?} as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: missing value in column {column}")]
    MissingValue { row: usize, column: String },

    #[error("column {0:?} not found in input header")]
    MissingColumn(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("hypothesis incompatible with observed data: {0}")]
    Incompatible(String),

    #[error("no outcome recorded for pair {pair} (unit {unit:?})")]
    MissingOutcome { pair: usize, unit: String },

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("limits reached without a certified solution in strata: {}", .0.join(", "))]
    LimitReached(Vec<String>),

    #[error("matched study violates constraints: {0}")]
    Violation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
