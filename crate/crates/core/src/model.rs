//! Encoder, decoder and their parameter groups, plus the denoising loss of
//! one pass.

use serde::{Deserialize, Serialize};

use crate::config::{DataConfig, Task, TrainConfig};
use crate::decoder::Decoder;
use crate::diffusion::{dsm_loss_tape, noise, sample_per_graph, sample_per_node, NoiseSchedule, Reduction, Weighting};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::graph::{batch_graphs, load_graph_dataset, load_node_dataset, Graph, GraphBatch};
use crate::nn::{Init, Linear, Structure};
use crate::numeric::{Bound, NumericError, ParamStore, RngState, Scalar, Tape, Tensor, Var};

/// What the decoder is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionKind {
    /// Encoder output; the full model.
    Representation,
    /// A learned linear embedding of the class label.
    Label,
    /// No condition (`z = 0`).
    None,
}

#[derive(Debug, Clone)]
pub enum Conditioner {
    Representation(Encoder),
    Label { embed: Linear, classes: usize },
    None { width: usize },
}

/// A loaded dataset.
#[derive(Debug, Clone)]
pub enum Dataset {
    Node(Graph),
    Graphs(Vec<Graph>),
}

impl Dataset {
    pub fn load(cfg: &DataConfig) -> Result<Self> {
        let path = cfg.path.as_ref().ok_or_else(|| Error::Config("data.path is not set".into()))?;
        Ok(match cfg.task {
            Task::Node => Dataset::Node(load_node_dataset(path)?),
            Task::Graph => Dataset::Graphs(load_graph_dataset(path, cfg.degree_cap)?),
        })
    }

    pub fn task(&self) -> Task {
        match self {
            Dataset::Node(_) => Task::Node,
            Dataset::Graphs(_) => Task::Graph,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Dataset::Node(g) => g.d(),
            Dataset::Graphs(gs) => gs.first().map_or(0, Graph::d),
        }
    }

    /// Number of classes among node labels (node tasks) or graph labels.
    pub fn classes(&self) -> usize {
        let max = match self {
            Dataset::Node(g) => g.node_labels.as_ref().and_then(|l| l.iter().max().copied()),
            Dataset::Graphs(gs) => gs.iter().filter_map(|g| g.graph_label).max(),
        };
        max.map_or(0, |m| m + 1)
    }
}

/// Features, structure and labels of one forward pass.
#[derive(Debug, Clone)]
pub struct Sample<S> {
    pub structure: Structure,
    pub x: Tensor<S>,
    /// Node labels for a single graph, graph labels for a batch.
    pub labels: Option<Vec<usize>>,
}

impl<S: Scalar> Sample<S> {
    pub fn from_graph(g: &Graph) -> Self {
        Self { structure: Structure::from_graph(g), x: g.x.cast(), labels: g.node_labels.clone() }
    }

    pub fn from_batch(b: &GraphBatch) -> Self {
        let labels = b.graph_labels.iter().copied().collect::<Option<Vec<_>>>();
        Self { structure: Structure::from_batch(b), x: b.graph.x.cast(), labels }
    }

    pub fn from_graphs(graphs: &[Graph]) -> Result<Self> {
        Ok(Self::from_batch(&batch_graphs(graphs)?))
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn is_batched(&self) -> bool {
        self.structure.segments.is_some()
    }
}

/// Tape handles of one loss evaluation.
#[derive(Debug, Clone)]
pub struct LossPass {
    pub loss: Var,
    pub enc: Bound,
    pub dec: Bound,
    pub prediction: Var,
    pub t: Vec<usize>,
}

/// Noise and timestep settings shared by every pass of a run.
#[derive(Debug, Clone)]
pub struct Objective {
    pub schedule: NoiseSchedule,
    pub weighting: Weighting,
    pub reduction: Reduction,
}

impl Objective {
    pub fn from_config(cfg: &TrainConfig) -> Result<Self> {
        Ok(Self {
            schedule: NoiseSchedule::new(cfg.diffusion.schedule, cfg.diffusion.steps)?,
            weighting: cfg.diffusion.weighting.clone(),
            reduction: cfg.diffusion.reduction,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Graffe<S> {
    pub conditioner: Conditioner,
    pub decoder: Decoder,
    /// Encoder-side parameters (trained at the encoder rate).
    pub enc: ParamStore<S>,
    pub dec: ParamStore<S>,
}

impl<S: Scalar> Graffe<S> {
    pub fn new(cfg: &TrainConfig, in_dim: usize, classes: usize, rng: &mut RngState) -> Result<Self> {
        let mut enc = ParamStore::new();
        let mut dec = ParamStore::new();
        let width = cfg.encoder.hidden;
        let conditioner = match cfg.trainer.condition {
            ConditionKind::Representation => {
                Conditioner::Representation(Encoder::new(&cfg.encoder, in_dim, &mut enc, rng).map_err(Error::Config)?)
            }
            ConditionKind::Label => {
                if classes == 0 {
                    return Err(Error::Config("label conditioning needs labelled data".into()));
                }
                let embed = Linear::new(&mut enc, "label_embed", classes, width, false, Init::FanIn, rng);
                Conditioner::Label { embed, classes }
            }
            ConditionKind::None => Conditioner::None { width },
        };
        let decoder = Decoder::new(&cfg.decoder, in_dim, width, &mut dec, rng).map_err(Error::Config)?;
        Ok(Self { conditioner, decoder, enc, dec })
    }

    pub fn encoder(&self) -> Option<&Encoder> {
        match &self.conditioner {
            Conditioner::Representation(e) => Some(e),
            _ => None,
        }
    }

    /// The decoder condition: one row per node, or per graph for batches.
    pub fn condition(
        &self,
        tape: &mut Tape<S>,
        enc: &Bound,
        sample: &Sample<S>,
        training: bool,
        mask_ratio: f64,
        rng: &mut RngState,
    ) -> Result<Var> {
        let s = &sample.structure;
        let rows = if sample.is_batched() { s.graph_count() } else { sample.n() };
        match &self.conditioner {
            Conditioner::Representation(e) => {
                let out = e.encode(tape, enc, s, &sample.x, mask_ratio, training, rng)?;
                Ok(out.readout.unwrap_or(out.z))
            }
            Conditioner::Label { embed, classes } => {
                let labels =
                    sample.labels.as_ref().ok_or_else(|| Error::Config("label conditioning needs labels".into()))?;
                if labels.len() != rows {
                    return Err(Error::Config(format!("{} labels for {rows} condition rows", labels.len())));
                }
                let onehot = Tensor::from_fn(rows, *classes, |r, c| if labels[r] == c { S::one() } else { S::zero() });
                let oh = tape.constant(onehot);
                Ok(embed.forward(tape, enc, oh)?)
            }
            Conditioner::None { width } => Ok(tape.constant(Tensor::zeros(rows, *width))),
        }
    }

    /// Records the denoising loss of one pass. `t` is drawn when `None`.
    #[allow(clippy::too_many_arguments)]
    pub fn loss(
        &self,
        tape: &mut Tape<S>,
        sample: &Sample<S>,
        objective: &Objective,
        t: Option<Vec<usize>>,
        training: bool,
        mask_ratio: f64,
        rng: &mut RngState,
    ) -> Result<LossPass> {
        let enc = self.enc.bind(tape);
        let dec = self.dec.bind(tape);
        let z = self.condition(tape, &enc, sample, training, mask_ratio, rng)?;
        let s = &sample.structure;
        let t = match t {
            Some(t) => t,
            None => match &s.graph_id {
                Some(gid) => sample_per_graph(gid, s.graph_count(), &objective.schedule, rng),
                None => sample_per_node(sample.n(), &objective.schedule, rng),
            },
        };
        if t.len() != sample.n() || t.iter().any(|&v| v == 0 || v > objective.schedule.steps()) {
            return Err(NumericError::Invalid(format!(
                "timesteps must be one per node in 1..={}",
                objective.schedule.steps()
            ))
            .into());
        }
        let noisy = noise(&sample.x, &t, &objective.schedule, rng);
        let xt = tape.constant(noisy.xt);
        let prediction = self.decoder.forward(tape, &dec, s, xt, &t, z)?;
        let x0 = tape.constant(sample.x.clone());
        let loss = dsm_loss_tape(tape, prediction, x0, &t, &objective.weighting, objective.reduction)?;
        Ok(LossPass { loss, enc, dec, prediction, t })
    }

    /// Per-row squared errors at a fixed step, in inference mode.
    pub fn row_errors_at(
        &self,
        sample: &Sample<S>,
        objective: &Objective,
        step: usize,
        rng: &mut RngState,
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let pass = self.loss(&mut tape, sample, objective, Some(vec![step; sample.n()]), false, 0.0, rng)?;
        Ok(crate::diffusion::row_losses(tape.value(pass.prediction), &sample.x))
    }
}
