use thiserror::Error;

/// Errors produced by the model, the solvers and the continuation driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown preset `{0}`; valid presets are M1, M2, M3")]
    UnknownPreset(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate transport denominator in cell {cell}")]
    DegenerateDenominator { cell: isize },

    #[error("fractional power of negative concentration: ({value})^{tau}")]
    FractionalPower { value: f64, tau: f64 },

    #[error("closed-form solution undefined: {0}")]
    Domain(String),

    #[error("residual evaluation failed for column {column}: {source}")]
    ColumnEvaluation {
        column: usize,
        source: Box<Error>,
    },

    #[error("Newton did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular Jacobian in linear solve")]
    SingularJacobian,

    #[error("eigenvalue iteration failed to converge")]
    EigenFailure,

    #[error("tangent is not unique: two-dimensional null space (branch point); refine by bisection")]
    TangentAtBranchPoint,

    #[error("continuation step rejected (corrector failed)")]
    StepRejected,

    #[error("step size underflow near lambda = {lambda}")]
    StepSizeUnderflow { lambda: f64 },

    #[error("branch switching failed: {0}")]
    SwitchFailed(String),

    #[error("state blew up at t = {time}")]
    BlowUp { time: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
