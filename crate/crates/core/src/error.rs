use thiserror::Error;

/// Errors raised while constructing or transforming densities and kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("expected {expected} samples, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("negative density {value:e} at node {index} (x = {x})")]
    Negative { index: usize, x: f64, value: f64 },
    #[error("non-finite density at node {index} (x = {x})")]
    NonFinite { index: usize, x: f64 },
    #[error("moment order {0} exceeds the supported maximum of 8")]
    MomentOrder(u32),
    #[error("mutation kernel requires sigma > 0, got {0}")]
    KernelSigma(f64),
    #[error(
        "kernel support m ± 8σ = [{lo}, {hi}] does not fit inside the grid half-width {half_width}"
    )]
    KernelSupport { lo: f64, hi: f64, half_width: f64 },
    #[error("spectral convolution needs a power-of-two grid, got {0} points")]
    NotPowerOfTwo(usize),
    #[error("grids differ")]
    GridMismatch,
    #[error("margin of {margin} cells is not below n_points/4 = {limit}")]
    Margin { margin: usize, limit: usize },
    #[error("interval start {s} lies after its end {t}")]
    Interval { s: f64, t: f64 },
    #[error("density mass {0} is below 1/2; no half-mass radius exists on this grid")]
    HalfMass(f64),
    #[error("moving-frame resample lost mass: {lost:e} outside the frame grid")]
    FrameEscape { lost: f64 },
}
