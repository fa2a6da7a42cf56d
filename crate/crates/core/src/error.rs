use thiserror::Error;

/// Errors raised across the analysis, construction and simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("operation requires a square system, got {outputs} outputs and {inputs} inputs")]
    NotSquare { outputs: usize, inputs: usize },

    #[error("resolvent (jωI - A) is singular at ω = {omega}")]
    SingularResolvent { omega: f64 },

    #[error("ill-posed interconnection or transform: {0}")]
    IllPosed(String),

    #[error("system is not Hurwitz stable")]
    NotStable,

    #[error("system is already passive (Cayley transform H∞ norm {cayley_norm} ≤ 1)")]
    AlreadyPassive { cayley_norm: f64 },

    #[error("phase {theta} rad is outside (-π, 0]")]
    PhaseOutOfRange { theta: f64 },

    #[error("linearization mode unavailable: {0}")]
    ModeUnavailable(String),

    #[error("state is not interior to the simplex: x[{index}] = {value}")]
    NonInteriorState { index: usize, value: f64 },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
