//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum PsqError {
    #[error("operator is not positive: min eigenvalue {min_eigenvalue:.3e} is below -{tol:.3e}")]
    NotPositive { min_eigenvalue: f64, tol: f64 },

    #[error("trace {trace:.12} drifts from 1 by more than {tol:.3e}")]
    TraceDrift { trace: f64, tol: f64 },

    #[error("weight w[{index}] = {value:.3e} is negative")]
    NegativeWeight { index: usize, value: f64 },

    #[error("weight sum {sum:.12} drifts from 1 by more than {tol:.3e}")]
    WeightSumDrift { sum: f64, tol: f64 },

    #[error("truncation loss {loss:.3e} exceeds bound {bound:.3e}; raise the cutoff")]
    TruncationLoss { loss: f64, bound: f64 },

    #[error("matrix is not Hermitian: defect {defect:.3e} exceeds {tol:.3e}")]
    NotHermitian { defect: f64, tol: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("dimension {dim} is too small; need at least {min}")]
    DimTooSmall { dim: usize, min: usize },

    #[error(
        "unitarity loss {defect:.3e} on the interior block exceeds {bound:.3e}; \
         cutoff too small for this displacement"
    )]
    UnitarityLoss { defect: f64, bound: f64 },

    #[error("estimated quadrature error {estimate:.3e} exceeds bound {bound:.3e}")]
    QuadratureUnderflow { estimate: f64, bound: f64 },

    #[error("operation requires a {expected} grid")]
    WrongGridKind { expected: &'static str },

    #[error("tail mass {mass:.3e} exceeds bound {bound:.3e}; window too small")]
    TailMassExceeded { mass: f64, bound: f64 },

    #[error("generating operator is not diagonal in the number basis")]
    NotDiagonal,

    #[error("domain diagnostic failed: {0}")]
    DomainDiagnosticFailed(String),

    #[error("invalid eigendecomposition: reconstruction defect {defect:.3e} exceeds {tol:.3e}")]
    EigenDefect { defect: f64, tol: f64 },
}

pub type Result<T> = std::result::Result<T, PsqError>;
