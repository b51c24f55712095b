//! CLI error taxonomy mapped onto process exit codes: configuration
//! problems exit 1, data ingestion problems exit 2, numerical failures
//! exit 3.

use std::fmt;
use std::path::PathBuf;

#[derive(Debug)]
pub enum DataError {
    BadMagic { path: PathBuf, found: u32, expected: u32 },
    TruncatedFile { path: PathBuf },
    CountMismatch { images: usize, labels: usize },
    Io { path: PathBuf, source: std::io::Error },
    Csv { path: PathBuf, line: usize, message: String },
    InsufficientData { needed: usize, available: usize },
    MissingFiles { dir: PathBuf },
    BadLabel { value: u8 },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::BadMagic { path, found, expected } => write!(
                f,
                "{}: bad magic 0x{found:08x} (expected 0x{expected:08x})",
                path.display()
            ),
            DataError::TruncatedFile { path } => {
                write!(f, "{}: file shorter than its header promises", path.display())
            }
            DataError::CountMismatch { images, labels } => {
                write!(f, "{images} images but {labels} labels")
            }
            DataError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            DataError::Csv { path, line, message } => {
                write!(f, "{}:{line}: {message}", path.display())
            }
            DataError::InsufficientData { needed, available } => {
                write!(f, "split needs {needed} examples but the pool has {available}")
            }
            DataError::MissingFiles { dir } => write!(
                f,
                "{}: found neither the IDX quartet (train-images-idx3-ubyte, …) nor train.csv/test.csv",
                dir.display()
            ),
            DataError::BadLabel { value } => write!(f, "label {value} outside 0..=9"),
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(DataError),
    Numerical(lsqtune::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Data(e) => write!(f, "data error: {e}"),
            CliError::Numerical(e) => write!(f, "numerical error: {e}"),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e)
    }
}

impl From<lsqtune::Error> for CliError {
    fn from(e: lsqtune::Error) -> Self {
        CliError::Numerical(e)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
