use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad parameters or options; the caller asked for something ill-posed.
    #[error("configuration error: {0}")]
    Config(String),

    /// The input data violate a contract (duplicates, dangling keys, ranges).
    #[error("data error: {0}")]
    Data(String),

    /// A numerical routine could not produce a result.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("no identifiable regressors: every column was absorbed or collinear")]
    NoIdentifiableRegressors,

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// True for errors caused by the caller's options rather than the data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
