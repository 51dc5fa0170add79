use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

/// Every failure the numerical core can report.
///
/// Variant names double as the stable diagnostic vocabulary of the CLI, so
/// each message starts with the variant name.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("SingularGram: condition number {condition:e} of the constraint Gram matrix exceeds {bound:e}")]
    SingularGram { condition: f64, bound: f64 },

    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),

    #[error("UnknownScenario: no built-in scenario named `{0}`")]
    UnknownScenario(String),

    #[error("InvalidParam: `{name}`: {reason}")]
    InvalidParam { name: String, reason: String },

    #[error("InvalidGrid: {0}")]
    InvalidGrid(String),

    #[error(
        "BlowUp at time index {time_index} (t = {time}): max|grad S| = {max_gradient:e} exceeds {bound:e} or the field is no longer finite"
    )]
    BlowUp {
        time_index: usize,
        time: f64,
        max_gradient: f64,
        bound: f64,
    },

    #[error(
        "StabilityViolation at time index {time_index} (t = {time}): dt*max|sigma grad S|/m = {courant:e} exceeds 0.5*min h = {limit:e}"
    )]
    StabilityViolation {
        time_index: usize,
        time: f64,
        courant: f64,
        limit: f64,
    },

    #[error("OutOfDomain: coordinate {coordinate} on axis {axis} lies outside [{lo}, {hi}]")]
    OutOfDomain {
        axis: usize,
        coordinate: f64,
        lo: f64,
        hi: f64,
    },

    #[error("OutOfDomain: time {time} lies outside [{t0}, {t1}]")]
    TimeOutOfRange { time: f64, t0: f64, t1: f64 },

    #[error("StepFailure: non-finite state after step {step} (t = {time})")]
    StepFailure { step: usize, time: f64 },

    #[error("InadmissibleLaunch: |Omega(x0) v0| = {residual:e} exceeds {tolerance:e}")]
    InadmissibleLaunch { residual: f64, tolerance: f64 },

    #[error("NoConstraints: the scenario has k = 0 constraints, no multiplier exists")]
    NoConstraints,

    #[error("BadSampling: {0}")]
    BadSampling(String),
}
