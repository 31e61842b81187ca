use alloc::string::String;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("non-finite coordinate at point {index}")]
    NonFinite { index: usize },
    #[error("size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },
    #[error("depth {depth} needs at least {needed} points, cloud has {points}")]
    DepthTooLarge { depth: u32, needed: usize, points: usize },
    #[error("partition depth mismatch: {left} vs {right}")]
    DepthMismatch { left: u32, right: u32 },
    #[error("leaf {leaf} size mismatch: {left} vs {right}")]
    LeafSizeMismatch { leaf: usize, left: usize, right: usize },
    #[error("sample size {sample_size} exceeds population {population}")]
    SampleTooLarge { sample_size: usize, population: usize },
    #[error("sample size {sample_size} is not divisible by patch count {patches}")]
    SampleNotDivisible { sample_size: usize, patches: usize },
    #[error("point count {points} is not divisible by patch count {patches}")]
    PatchesNotDivisible { points: usize, patches: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("unequal per-patch counts in source ids")]
    UnequalPatchCounts,
    #[error("matrix of size {size} exceeds oracle cap {cap}")]
    OracleCap { size: usize, cap: usize },
    #[error("non-finite cost at ({row}, {col})")]
    NonFiniteCost { row: usize, col: usize },
    #[error("non-finite gradient in tensor {tensor}")]
    NonFiniteGradient { tensor: String },
    #[error("k = {k} must be smaller than the point count {points}")]
    NeighborCount { k: usize, points: usize },
    #[error("point count {points} is incompatible with {kind}")]
    IncompatibleCount { points: usize, kind: &'static str },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
