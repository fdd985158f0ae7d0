//! Noise schedules, the forward noising marginal, timestep sampling and
//! the data-prediction denoising loss.

pub mod loss;
pub mod noise;
pub mod schedule;

pub use loss::{dsm_loss, dsm_loss_tape, row_losses, Reduction, Weighting};
pub use noise::{noise, noise_with, sample_per_graph, sample_per_node, NoisySample};
pub use schedule::{NoiseSchedule, ScheduleKind};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffusionError {
    #[error("unknown schedule kind `{0}` (expected linear, quad, sigmoid or inverted)")]
    UnknownSchedule(String),
    #[error("a schedule needs at least 2 timesteps, got {0}")]
    TooFewSteps(usize),
    #[error("dsm_loss: prediction {pred:?}, target {target:?}, {steps} timesteps")]
    Shape { pred: [usize; 2], target: [usize; 2], steps: usize },
    #[error("weighting: {0}")]
    Weighting(String),
}
