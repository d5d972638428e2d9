use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid lattice geometry: {0}")]
    InvalidGeometry(&'static str),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("site ({x}, {y}) outside a lattice of side {side}")]
    SiteOutOfRange { x: usize, y: usize, side: usize },

    #[error("invalid spin value {0}; spins must be -1 or +1")]
    InvalidSpin(i8),

    #[error("instance too large for exact enumeration: {size} > {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("not enough samples: need at least {needed}, got {got}")]
    NotEnoughSamples { needed: usize, got: usize },

    #[error("too few usable correlator bins for a power-law fit: {usable} < 3")]
    TooFewBins { usable: usize },

    #[error("no crossing of the target value {target} in the curve")]
    NoCrossing { target: f64 },

    #[error("data distribution is not normalized (sum = {sum})")]
    Unnormalized { sum: f64 },

    #[error("lattice side {side} not divisible by 2^{steps}")]
    NotDivisible { side: usize, steps: usize },

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("label {0} is not one of the thermometer classes")]
    UnknownLabel(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}
