use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{kind}: shape mismatch {shapes:?}")]
    ShapeMismatch {
        kind: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("{kind}: non-finite output")]
    NonFinite { kind: &'static str },
    #[error("backward: loss node must be scalar, got shape {0:?}")]
    LossNotScalar(Vec<usize>),
    #[error("node {0} is not on this tape")]
    UnknownNode(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("non-finite gradient for `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite loss at step {step} (batch seed {batch_seed:#x}): {detail}")]
    NonFiniteLoss {
        step: u64,
        batch_seed: u64,
        detail: String,
    },
    #[error("image extent {extent} is not divisible by patch size {patch}")]
    IndivisibleExtent { extent: usize, patch: usize },
    #[error("noise period {period} exceeds image extent {extent}")]
    PeriodTooLarge { period: usize, extent: usize },
    #[error("anomaly source bank is empty")]
    EmptySourceBank,
    #[error("metric requires both classes, only one present")]
    SingleClass,
    #[error("no positive samples")]
    NoPositives,
    #[error("no anomalous regions in ground truth")]
    NoRegions,
    #[error("empty anomaly map")]
    EmptyMap,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
