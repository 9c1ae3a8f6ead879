use thiserror::Error;

/// Exit code for malformed or inconsistent input.
pub const EXIT_BAD_INPUT: i32 = 2;
/// Exit code when a computation produced non-finite values.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    BadInput(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::BadInput(_) => EXIT_BAD_INPUT,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    pub(crate) fn bad(msg: impl Into<String>) -> Self {
        CliError::BadInput(msg.into())
    }
}

impl From<seval_core::Error> for CliError {
    fn from(e: seval_core::Error) -> Self {
        match e {
            seval_core::Error::Numerical(m) => CliError::Numerical(m),
            other => CliError::BadInput(other.to_string()),
        }
    }
}

macro_rules! bad_input_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::BadInput(e.to_string())
            }
        }
    )*};
}

bad_input_from!(std::io::Error, serde_json::Error, toml::de::Error, csv::Error);

pub type CliResult<T> = std::result::Result<T, CliError>;
