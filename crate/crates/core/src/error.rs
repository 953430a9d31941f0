use thiserror::Error;

/// Crate-wide error type. The three non-IO categories map onto the CLI exit
/// codes: config -> 2, data -> 3, numerical -> 4.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at {path}, row {row}, column {col}: {msg}")]
    Parse {
        path: String,
        row: usize,
        col: String,
        msg: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(
        "enumeration of 3^{nu} completions exceeds enum_cap = {cap}; \
         use gibbs candidate mode for this record"
    )]
    EnumTooLarge { nu: usize, cap: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
