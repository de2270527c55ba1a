use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("point{} is within the cut locus tolerance (largest principal angle {angle:.3e} rad)", index.map(|i| format!(" {i}")).unwrap_or_default())]
    CutLocus { index: Option<usize>, angle: f64 },

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("non-finite state encountered at r = {r}")]
    Divergence { r: f64 },

    #[error("degenerate time warp: warped times span {span:.3e}")]
    DegenerateWarp { span: f64 },

    #[error("Karcher mean did not converge after {iterations} iterations (residual {residual:.3e})")]
    KarcherNonConvergence {
        iterations: usize,
        residual: f64,
        last: Box<crate::grassmann::GrassmannPoint>,
    },

    #[error("R² is undefined: data have zero total variance")]
    UndefinedRSquared,

    #[error("invalid cross-validation plan: {0}")]
    InvalidPlan(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable identifier, used by the CLI error record.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::DimensionMismatch(_) => "dimension-mismatch",
            Error::Degenerate(_) => "degenerate-input",
            Error::RankDeficient(_) => "rank-deficient",
            Error::CutLocus { .. } => "cut-locus",
            Error::Integration(_) => "integration-failure",
            Error::Divergence { .. } => "divergence",
            Error::DegenerateWarp { .. } => "degenerate-warp",
            Error::KarcherNonConvergence { .. } => "karcher-non-convergence",
            Error::UndefinedRSquared => "undefined-r-squared",
            Error::InvalidPlan(_) => "invalid-plan",
            Error::Format(_) => "malformed-file",
            Error::Io(_) => "io",
            Error::Json(_) => "malformed-file",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
