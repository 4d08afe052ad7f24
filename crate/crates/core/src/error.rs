use thiserror::Error;

/// Errors raised by metric evaluation, integration and tube inversion.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("tangent vector is zero")]
    ZeroVector,

    #[error("scale factor must be positive, got {0}")]
    NonpositiveScale(f64),

    #[error("complex continuation came within {modulus:.3e} of the square-root branch point (margin {margin:.1e})")]
    BranchCutProximity { modulus: f64, margin: f64 },

    #[error("fundamental tensor is numerically singular (condition estimate {condition:.3e})")]
    SingularTensor { condition: f64 },

    #[error("contact system is degenerate (value {value:.3e})")]
    DegenerateContact { value: f64 },

    #[error("adaptive step fell below {min_step:.1e} at t = {t}")]
    StepUnderflow { t: f64, min_step: f64 },

    #[error("imaginary time {r} is outside the tube of height {radius}")]
    TubeExceeded { r: f64, radius: f64 },

    #[error("real time {s} exceeds the continuation cap {cap}")]
    RealTimeCap { s: f64, cap: f64 },

    #[error("Newton inversion did not converge after {iterations} iterations (residual {residual:.3e})")]
    NewtonDiverged { residual: f64, iterations: usize },

    #[error("point lies on the zero set of u")]
    OnSingularSet,

    #[error("no tube height down to {min_radius} passed the build diagnostics")]
    TubeConstructionFailed { min_radius: f64 },

    #[error("adapted frame rotation is singular")]
    FrameMismatch,

    #[error("linear system for the X/Y frame is singular")]
    DegenerateFrame,

    #[error("direction lies outside the chart cone")]
    OutOfChart,

    #[error("curve velocity is tangent to M (normal part {normal:.3e})")]
    TangentToM { normal: f64 },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid metric specification: {0}")]
    SpecInvalid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
