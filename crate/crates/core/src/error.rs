use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("grid spacing mismatch: {left} vs {right}")]
    SpacingMismatch { left: f64, right: f64 },

    #[error("operation not defined for this measure kind: {0}")]
    KindMismatch(&'static str),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("total mass {0} exceeds 1")]
    MassExceeded(f64),

    #[error("step distribution must be a nondegenerate probability measure: {0}")]
    InvalidStep(String),

    #[error("mass mismatch: {left} vs {right}")]
    MassMismatch { left: f64, right: f64 },

    #[error("empty measure")]
    EmptyMeasure,

    #[error("test function violates the 1-Lipschitz/oscillation condition: {0}")]
    NotLipschitz(String),

    #[error("invalid matching: {0}")]
    InvalidMatching(String),

    #[error("separation {sep} does not exceed 2r = {two_r}")]
    SeparationTooSmall { sep: f64, two_r: f64 },

    #[error("instance too large for exhaustive evaluation: {0}")]
    InstanceTooLarge(String),

    #[error("test-function family is empty")]
    EmptyFamily,

    #[error("invalid field specification: {0}")]
    InvalidField(String),

    #[error("kappa {kappa} outside the configured domain [-{limit}, {limit}]")]
    KappaOutOfDomain { kappa: f64, limit: f64 },

    #[error("field window too small at step {step}: {detail}")]
    WindowTooSmall { step: usize, detail: String },

    #[error("trajectory has no steps")]
    EmptyTrajectory,

    #[error("normalizer underflow at step {0}")]
    Underflow(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("path enumeration cap exceeded: {0} paths")]
    EnumerationCap(u128),

    #[error("linear program failed: {0}")]
    LinearProgram(String),

    #[error("serialization: {0}")]
    Serialization(String),
}
