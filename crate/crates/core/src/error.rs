use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-positive output extent: {0}")]
    NonPositiveOutputExtent(String),
    #[error("extent {extent} is not divisible by {divisor}")]
    IndivisibleExtent { extent: usize, divisor: usize },
    #[error("invalid dropout rate {0}")]
    InvalidRate(f64),
    #[error("backward requires a scalar loss, got {0} elements")]
    NonScalarLoss(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite input value")]
    NonFiniteInput,
    #[error("no voxel exceeds the content threshold")]
    EmptyContent,
    #[error("crop box out of range: {0}")]
    BoxOutOfRange(String),
    #[error("unexpected raw label {0}")]
    UnexpectedLabel(i64),
    #[error("label {0} outside {{0,1,2,3}}")]
    LabelOutOfRange(u8),
    #[error("duplicate case id {0:?}")]
    DuplicateIds(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("missing gradient for parameter {0:?}")]
    MissingGradient(String),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("infeasible phantom spec: {0}")]
    SpecInfeasible(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
