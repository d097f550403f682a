use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("length error in {path}: expected {expected} bytes of payload, found {found}")]
    Length { path: PathBuf, expected: usize, found: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(
        "MNIST data not found under {dir}: expected the IDX files \
         train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-images-idx3-ubyte, \
         t10k-labels-idx1-ubyte (optionally .gz). Point --data-dir or RSJ_DATA_DIR \
         at a directory containing them; scripts/fetch_mnist.sh downloads them."
    )]
    MissingData { dir: PathBuf },

    #[error(transparent)]
    Core(#[from] rsj_core::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// Process exit code: 3 for I/O, 2 for configuration/usage, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::MissingData { .. } => 3,
            CliError::Config(_) => 2,
            CliError::Format { .. } | CliError::Length { .. } => 3,
            CliError::Core(_) => 1,
        }
    }
}
