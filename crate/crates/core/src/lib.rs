//! Diffusion-based self-supervised graph representation learning.

pub mod config;
pub mod decoder;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod evaluator;
pub mod graph;
pub mod model;
pub mod nn;
pub mod numeric;
pub mod theory;
pub mod trainer;

pub use config::{Task, TrainConfig};
pub use error::{Error, Result};
pub use model::{ConditionKind, Dataset, Graffe, Objective, Sample};
