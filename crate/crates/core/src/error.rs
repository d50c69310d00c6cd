use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The discretization step covers the whole support, leaving a single cell.
    #[error("step {step} is not smaller than the support maximum {level_max}")]
    DegenerateCell { step: f64, level_max: f64 },

    #[error("probabilistic sequences have different steps ({left} vs {right})")]
    StepMismatch { left: f64, right: f64 },

    /// Scenario file does not satisfy the schema or its invariants.
    #[error("scenario schema: {0}")]
    Schema(String),

    /// The model is infeasible; `stage` names the triage step that failed.
    #[error("infeasible at stage `{stage}`: {detail}")]
    Infeasible { stage: String, detail: String },

    #[error("time limit reached before an optimal solution was proven")]
    TimeLimit,

    #[error("model build: {0}")]
    Build(String),

    #[error("solver backend: {0}")]
    Solver(String),

    #[error("grid of {points} points is too large: {hint}")]
    GridTooLarge { points: f64, hint: String },

    #[error("solution failed validation: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable identifier of the failure class, for scripts and exit codes.
    pub fn reason(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::DegenerateCell { .. } => "degenerate-cell",
            Error::StepMismatch { .. } => "step-mismatch",
            Error::Schema(_) | Error::Json(_) => "schema",
            Error::Infeasible { .. } => "infeasible",
            Error::TimeLimit => "time-limit",
            Error::Build(_) => "build",
            Error::Solver(_) => "solver",
            Error::GridTooLarge { .. } => "grid-too-large",
            Error::Validation(_) => "validation",
            Error::Io(_) => "io",
        }
    }
}
