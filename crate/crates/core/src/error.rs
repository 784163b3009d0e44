use thiserror::Error;

/// Errors raised anywhere in the solver stack.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SoarError {
    #[error("starting vector u1 is zero")]
    ZeroStartVector,
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("matrix is numerically singular at pivot position {position}")]
    SingularMatrix { position: usize },
    #[error("generalized eigensolver failed on the projected pencil")]
    SingularPencil,
    #[error("eigensolver did not converge")]
    EigenFailure,
    #[error("shifted QR sweep left {magnitude:e} below the subdiagonal")]
    HessenbergLost { magnitude: f64 },
    #[error("matrix has row rank {rank}, expected {expected}")]
    RowRankDeficient { rank: usize, expected: usize },
    #[error("repaired basis lost orthogonality: {error:e}")]
    RepairFailure { error: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension {n} exceeds the dense limit {limit}")]
    TooLarge { n: usize, limit: usize },
    #[error("shifted eigenvalue rho is zero and has no preimage")]
    ZeroRho,
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("adaptive quadrature did not reach tolerance {tol:e}")]
    Quadrature { tol: f64 },
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file}: {message}")]
    Io { file: String, message: String },
}

pub type Result<T> = std::result::Result<T, SoarError>;
