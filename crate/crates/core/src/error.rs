use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("rejected step: dt = {dt:e} exceeds the admissible bound {bound:e} (cfl_fraction * h^2)")]
    CflViolation { dt: f64, bound: f64 },

    #[error("instability at step {step} (tau = {tau:e}): energy grew from {before:e} to {after:e}")]
    Instability {
        step: usize,
        tau: f64,
        before: f64,
        after: f64,
    },

    #[error("invalid probe: rho^2 = {rho_sq:e} must be < tau = {tau:e}")]
    InvalidProbe { rho_sq: f64, tau: f64 },

    #[error("wrap contamination: truncation radius {radius:e} exceeds half-period {half_period:e}")]
    WrapContamination { radius: f64, half_period: f64 },

    #[error("insufficient ladder: {got} scales, at least {need} required")]
    InsufficientLadder { got: usize, need: usize },

    #[error("time {t:e} outside snapshot range [{first:e}, {last:e}]")]
    TimeOutOfRange { t: f64, first: f64, last: f64 },

    #[error("snapshot format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
