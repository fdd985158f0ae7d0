//! Dense tensors, a tape-based reverse-mode differentiator, optimizers,
//! learning-rate schedules and a counter-based RNG.

pub mod gradcheck;
pub mod lr;
pub mod optim;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_store};
pub use lr::cosine_lr;
pub use optim::{clip_global_norm, Adam, AdamConfig, OptimizerMode};
pub use params::{Bound, ParamId, ParamStore};
pub use rng::{Draw, RngState};
pub use scalar::{Precision, Scalar};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Operand shapes that do not conform for an operation.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
pub struct ShapeError {
    pub op: &'static str,
    pub lhs: [usize; 2],
    pub rhs: [usize; 2],
}

impl ShapeError {
    pub fn new(op: &'static str, lhs: [usize; 2], rhs: [usize; 2]) -> Self {
        Self { op, lhs, rhs }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("{op}: index {index} out of range for {len} rows")]
    Index { op: &'static str, index: usize, len: usize },
    #[error("backward: root must be a 1x1 scalar, got {0:?}")]
    NonScalarRoot([usize; 2]),
    #[error("backward: already run on this tape; call reset_grads first")]
    DoubleBackward,
    #[error("backward: root is not tracked")]
    UntrackedRoot,
    #[error("optimizer: parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("optimizer: parameter `{0}` has a non-finite gradient; step skipped")]
    NonFiniteGrad(String),
    #[error("cosine_lr: step {step} outside [0, {total}]")]
    StepOutOfRange { step: usize, total: usize },
    #[error("finite difference: non-finite objective at coordinate {0}")]
    NonFiniteObjective(usize),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = NumericError> = std::result::Result<T, E>;
