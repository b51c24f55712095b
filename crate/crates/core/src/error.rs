use std::fmt;

/// Errors surfaced by the solvers and the tuner.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not conform; the message names the operation.
    DimensionMismatch(String),
    /// Cholesky hit a non-positive (or negligibly small) pivot, i.e. the
    /// coefficient matrix does not have independent columns.
    RankDeficient { pivot_index: usize, pivot: f64 },
    /// The KKT matrix factorization found no usable pivot; the rank
    /// assumptions on (A, C) are violated.
    SingularKkt { pivot_index: usize },
    /// CG failed to reach the requested tolerance within the iteration cap.
    NoConvergence { columns: Vec<usize> },
    /// The operator failed the adjoint probe: <Au, v> != <u, A^T v>.
    AdjointInconsistent { relative_error: f64 },
    /// Matrix data contained NaN or infinity at construction.
    NonFiniteData(String),
    /// The tuning objective was non-finite where a finite value is required,
    /// or repeated rejections drove the step size below 1e-18.
    NonFiniteObjective(String),
    /// A configuration value violates its documented range.
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::RankDeficient { pivot_index, pivot } => write!(
                f,
                "rank deficient: Cholesky pivot {pivot_index} is {pivot:.3e} (expected positive)"
            ),
            Error::SingularKkt { pivot_index } => {
                write!(f, "singular KKT system: no pivot at elimination step {pivot_index}")
            }
            Error::NoConvergence { columns } => {
                write!(f, "CG did not converge for columns {columns:?}")
            }
            Error::AdjointInconsistent { relative_error } => write!(
                f,
                "operator adjoint probe failed: relative error {relative_error:.3e}"
            ),
            Error::NonFiniteData(msg) => write!(f, "non-finite data: {msg}"),
            Error::NonFiniteObjective(msg) => write!(f, "non-finite objective: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
        }
    }
}

impl std::error::Error for Error {}
