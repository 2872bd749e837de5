use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The adaptive controller asked for a step below `1e-13 * max(1, t)`.
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("step limit of {max_steps} exceeded at t = {t}")]
    StepLimitExceeded { max_steps: usize, t: f64 },

    #[error("no sign change of the shooting residual on [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },

    /// Integration failed (underflow or step limit) while evaluating a shot.
    #[error("indeterminate shot at free value {free_value}: {reason}")]
    Indeterminate { free_value: f64, reason: String },

    /// A located sign change that does not satisfy the boundary condition at infinity.
    #[error("free value {free_value} is not a solution: {reason}")]
    NotASolution { free_value: f64, reason: String },

    #[error("solvability is the same at both ends of the gamma bracket [{lo}, {hi}]")]
    SameStatusAtEndpoints { lo: f64, hi: f64 },

    #[error("f vanishes at t = {t}; blowing-up coordinates are undefined there")]
    FVanishes { t: f64 },

    #[error("profile terminated by blow-up; shape is undefined")]
    RefusesBlowUpProfile,

    #[error("only {samples} samples in the fit window (need 20)")]
    WindowTooShort { samples: usize },

    #[error("log-log fit rejected: r^2 = {r_squared}")]
    PoorFit { r_squared: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),
}
