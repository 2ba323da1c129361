use thiserror::Error;

/// Errors surfaced by the training, certification and control pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Dynamics evaluation produced a non-finite state (blow-up or a
    /// singularity of the vector field).
    #[error("dynamics evaluation left its domain at step {step}: {detail}")]
    EvaluationDomain { step: usize, detail: String },

    #[error("(A, B) pair not stabilizable: {0}")]
    NotStabilizable(String),

    /// Both the damped fixed point and the grid fallback failed to meet the
    /// first-order residual tolerance; usually a sign of a pathological
    /// value approximant.
    #[error("greedy policy solve failed at x = {state:?}, first-order residual {residual:.3e}")]
    PolicySolve { state: Vec<f64>, residual: f64 },

    #[error("least-squares fit failed: {0}")]
    FitFailed(String),

    #[error("error-margin estimation: {0}")]
    MarginEstimation(String),

    #[error("controllability estimation: {0}")]
    Controllability(String),

    #[error("certificate domain error: {0}")]
    CertificateDomain(String),

    /// The residual-ratio margin reached c >= 1; the training domain or
    /// the basis must be adjusted before any certificate can be issued.
    #[error("certification refused: error margin c = {c} >= 1")]
    MarginTooLarge { c: f64 },

    #[error("initial state lies outside the state box")]
    InfeasibleStart,

    #[error("performance bound invalid: alpha1 = {alpha1:.6e} <= 0 (horizon below threshold)")]
    BoundInvalid { alpha1: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
