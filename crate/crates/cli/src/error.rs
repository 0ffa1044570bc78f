use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config line {line}, column {col}: {msg}")]
    Config { line: usize, col: usize, msg: String },
    #[error(transparent)]
    Core(#[from] ips_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn config_err(line: usize, col: usize, msg: impl Into<String>) -> CliError {
    CliError::Config {
        line,
        col,
        msg: msg.into(),
    }
}
