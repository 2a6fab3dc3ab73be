use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("cross-fit plan error: {0}")]
    Plan(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("estimation error: {0}")]
    Estimation(String),
    #[error("undefined test: {0}")]
    UndefinedTest(String),
    #[error("mode error: {0}")]
    Mode(String),
    #[error("report error: {0}")]
    Report(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("subgroup error: {0}")]
    Subgroup(String),
    #[error("unknown name: {0}")]
    Name(String),
    #[error("suite error: {0}")]
    Suite(String),
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("workflow error: {0}")]
    Workflow(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad input or configuration rather than a
    /// failure inside the toolkit.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Workflow(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
