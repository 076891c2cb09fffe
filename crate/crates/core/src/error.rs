use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("zero vector has no polar decomposition")]
    ZeroVector,

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("bad weights: {0}")]
    BadWeights(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("measure is not canonical (weights sum to {sum})")]
    NotCanonical { sum: f64 },

    #[error("measure is not admissible at alpha = {alpha} (worst slack {slack:e})")]
    NotAdmissible { alpha: f64, slack: f64 },

    #[error("angle {0:?} is not a sphere atom of the kernel's measure")]
    UnknownAngle(Vec<f64>),

    #[error("forward and backward kernels are not adjoint: {0}")]
    KernelMismatch(String),

    #[error("test functional returned {value}, exceeding its declared bound {bound}")]
    UnboundedFunctional { value: f64, bound: f64 },

    #[error("numeric overflow at step {step}: norm {norm:e} exceeds cap {cap:e}")]
    NumericOverflow { step: usize, norm: f64, cap: f64 },

    #[error("no exceedances of threshold {threshold} with a complete window")]
    NoExceedances { threshold: f64 },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("density integrates to {integral}, not 1")]
    NotNormalized { integral: f64 },

    #[error("matrix is not power-contractive: no m <= 64 with sup |A^m x| < 1")]
    NoContraction,

    #[error("rejection sampler stalled: acceptance rate {rate:e}")]
    RejectionStall { rate: f64 },

    #[error("extinction probability undefined at angle {0:?} (spectral density vanishes)")]
    UnsupportedAngle(Vec<f64>),

    #[error("too few windows: {blocks} blocks, need at least 5")]
    TooFewWindows { blocks: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
