//! Joint encoder/decoder training with cosine-annealed Adam, gradient
//! clipping and resumable checkpoints.

pub mod checkpoint;

use std::path::{Path, PathBuf};

use log::{info, warn};

use crate::config::{Task, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{Dataset, Graffe, Objective, Sample};
use crate::numeric::{clip_global_norm, cosine_lr, Adam, ParamStore, RngState, Scalar, Tape, Tensor};

pub use checkpoint::{loss_csv, read_precision, Checkpoint, EpochLoss};

/// RNG streams derived from the run seed.
const INIT_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;

#[derive(Debug, Clone)]
enum TrainData<S> {
    Node(Sample<S>),
    Graphs(Vec<Graph>),
}

/// Outcome of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Applied {
        loss: f64,
        grad_norm: f64,
    },
    /// Loss or gradient was not finite; parameters untouched.
    Skipped,
}

#[derive(Debug, Clone)]
pub struct Trainer<S> {
    pub config: TrainConfig,
    pub model: Graffe<S>,
    pub objective: Objective,
    pub enc_opt: Adam<S>,
    pub dec_opt: Adam<S>,
    pub rng: RngState,
    /// Completed epochs.
    pub epoch: usize,
    pub loss_trace: Vec<EpochLoss>,
    in_dim: usize,
    classes: usize,
    data: TrainData<S>,
}

/// Empty parameter stores for a configuration, as the trainer builds them.
pub fn build_stores<S: Scalar>(
    config: &TrainConfig,
    in_dim: usize,
    classes: usize,
) -> Result<(ParamStore<S>, ParamStore<S>)> {
    let m = build_model::<S>(config, in_dim, classes)?;
    Ok((m.enc, m.dec))
}

fn build_model<S: Scalar>(config: &TrainConfig, in_dim: usize, classes: usize) -> Result<Graffe<S>> {
    let mut rng = RngState::new(config.trainer.seed).fork(INIT_STREAM);
    Graffe::new(config, in_dim, classes, &mut rng)
}

/// Loads a checkpoint together with the model it describes.
pub fn load_model<S: Scalar>(path: impl AsRef<Path>) -> Result<(Checkpoint<S>, Graffe<S>)> {
    let ck = Checkpoint::<S>::load(path, build_stores::<S>)?;
    let model = model_from_checkpoint(&ck)?;
    Ok((ck, model))
}

/// The model a checkpoint describes, with its parameters.
pub fn model_from_checkpoint<S: Scalar>(ck: &Checkpoint<S>) -> Result<Graffe<S>> {
    let mut model = build_model::<S>(&ck.config, ck.in_dim, ck.classes)?;
    model.enc = ck.enc.clone();
    model.dec = ck.dec.clone();
    Ok(model)
}

impl<S: Scalar> Trainer<S> {
    pub fn new(config: TrainConfig, dataset: &Dataset) -> Result<Self> {
        config.validate()?;
        if dataset.task() != config.data.task {
            return Err(Error::Config(format!(
                "data.task is {:?} but the dataset is a {:?} dataset",
                config.data.task,
                dataset.task()
            )));
        }
        let in_dim = dataset.feature_dim();
        let classes = dataset.classes();
        let model = build_model(&config, in_dim, classes)?;
        let enc_opt = Adam::new(config.trainer.optimizer, &model.enc);
        let dec_opt = Adam::new(config.trainer.optimizer, &model.dec);
        let rng = RngState::new(config.trainer.seed).fork(TRAIN_STREAM);
        Ok(Self {
            objective: Objective::from_config(&config)?,
            data: Self::prepare(dataset),
            config,
            model,
            enc_opt,
            dec_opt,
            rng,
            epoch: 0,
            loss_trace: Vec::new(),
            in_dim,
            classes,
        })
    }

    /// Continues a run from a checkpoint on the same dataset.
    pub fn resume(ck: Checkpoint<S>, dataset: &Dataset) -> Result<Self> {
        if dataset.feature_dim() != ck.in_dim {
            return Err(Error::Config(format!(
                "checkpoint expects {} features, dataset has {}",
                ck.in_dim,
                dataset.feature_dim()
            )));
        }
        let mut model = build_model(&ck.config, ck.in_dim, ck.classes)?;
        model.enc = ck.enc;
        model.dec = ck.dec;
        Ok(Self {
            objective: Objective::from_config(&ck.config)?,
            data: Self::prepare(dataset),
            config: ck.config,
            model,
            enc_opt: ck.enc_opt,
            dec_opt: ck.dec_opt,
            rng: ck.rng,
            epoch: ck.epoch,
            loss_trace: ck.loss_trace,
            in_dim: ck.in_dim,
            classes: ck.classes,
        })
    }

    fn prepare(dataset: &Dataset) -> TrainData<S> {
        match dataset {
            Dataset::Node(g) => TrainData::Node(Sample::from_graph(g)),
            Dataset::Graphs(gs) => TrainData::Graphs(gs.clone()),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint<S> {
        Checkpoint {
            config: self.config.clone(),
            in_dim: self.in_dim,
            classes: self.classes,
            epoch: self.epoch,
            rng: self.rng,
            loss_trace: self.loss_trace.clone(),
            enc: self.model.enc.clone(),
            dec: self.model.dec.clone(),
            enc_opt: self.enc_opt.clone(),
            dec_opt: self.dec_opt.clone(),
        }
    }

    /// `(encoder, decoder)` learning rates for an epoch.
    pub fn learning_rates(&self, epoch: usize) -> Result<(f64, f64)> {
        let t = &self.config.trainer;
        let factor = if t.epochs == 0 { 1.0 } else { cosine_lr(epoch.min(t.epochs), t.epochs, 1.0, t.lr_min_ratio)? };
        Ok((t.encoder_lr() * factor, t.lr_decoder * factor))
    }

    /// One forward, backward and update on `sample`.
    pub fn step(&mut self, sample: &Sample<S>, lr_enc: f64, lr_dec: f64) -> Result<StepOutcome> {
        let mut tape = Tape::new();
        let mask = self.config.trainer.mask_ratio;
        let pass = self.model.loss(&mut tape, sample, &self.objective, None, true, mask, &mut self.rng)?;
        let loss = tape.value(pass.loss).item().as_f64();
        if !loss.is_finite() {
            warn!("epoch {}: non-finite loss {loss}; step skipped", self.epoch);
            return Ok(StepOutcome::Skipped);
        }
        tape.backward(pass.loss)?;
        let Graffe { enc, dec, .. } = &mut self.model;
        enc.collect_grads(&tape, &pass.enc);
        dec.collect_grads(&tape, &pass.dec);
        drop(tape);
        for p in enc.iter_mut().chain(dec.iter_mut()) {
            if p.grad.is_none() {
                p.grad = Some(Tensor::zeros(p.value.rows(), p.value.cols()));
            }
        }
        if enc.iter().chain(dec.iter()).any(|p| !p.grad.as_ref().is_some_and(Tensor::is_finite)) {
            warn!("epoch {}: non-finite gradient; step skipped", self.epoch);
            enc.zero_grads();
            dec.zero_grads();
            return Ok(StepOutcome::Skipped);
        }
        let grad_norm = match self.config.trainer.clip_norm {
            Some(c) => clip_global_norm(&mut [&mut *enc, &mut *dec], c),
            None => clip_global_norm(&mut [&mut *enc, &mut *dec], f64::INFINITY),
        };
        if !enc.is_empty() {
            self.enc_opt.step(enc, lr_enc)?;
        }
        self.dec_opt.step(dec, lr_dec)?;
        enc.zero_grads();
        dec.zero_grads();
        Ok(StepOutcome::Applied { loss, grad_norm })
    }

    /// Runs one epoch; returns the mean loss of its applied steps.
    pub fn run_epoch(&mut self) -> Result<Option<f64>> {
        let (lr_enc, lr_dec) = self.learning_rates(self.epoch)?;
        let mut losses = Vec::new();
        match self.data.clone() {
            TrainData::Node(sample) => {
                if let StepOutcome::Applied { loss, .. } = self.step(&sample, lr_enc, lr_dec)? {
                    losses.push(loss);
                }
            }
            TrainData::Graphs(graphs) => {
                let mut order: Vec<usize> = (0..graphs.len()).collect();
                self.rng.shuffle(&mut order);
                for chunk in order.chunks(self.config.trainer.batch_size) {
                    let members: Vec<Graph> = chunk.iter().map(|&i| graphs[i].clone()).collect();
                    let sample = Sample::from_graphs(&members)?;
                    if let StepOutcome::Applied { loss, .. } = self.step(&sample, lr_enc, lr_dec)? {
                        losses.push(loss);
                    }
                }
            }
        }
        self.epoch += 1;
        if losses.is_empty() {
            return Ok(None);
        }
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        self.loss_trace.push(EpochLoss { epoch: self.epoch, loss: mean });
        Ok(Some(mean))
    }

    /// Trains to `trainer.epochs`, handing checkpoints to `sink`: the initial
    /// state (fresh runs only), every `checkpoint_every` epochs, and the end.
    pub fn train(&mut self, mut sink: impl FnMut(&Checkpoint<S>) -> Result<()>) -> Result<()> {
        let total = self.config.trainer.epochs;
        let every = self.config.trainer.checkpoint_every;
        if self.epoch == 0 {
            sink(&self.checkpoint())?;
        }
        while self.epoch < total {
            let loss = self.run_epoch()?;
            if self.epoch % 50 == 0 || self.epoch == total {
                info!("epoch {}/{total}: loss {}", self.epoch, loss.map_or("skipped".into(), |l| format!("{l:.6}")));
            }
            if (every > 0 && self.epoch % every == 0) || self.epoch == total {
                sink(&self.checkpoint())?;
            }
        }
        Ok(())
    }

    /// Trains and writes `checkpoint-EEEEE.bin` files and `loss.csv` under
    /// `dir`. Returns the written paths.
    pub fn train_to_dir(&mut self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        self.train(|ck| {
            let path = dir.join(checkpoint_name(ck.epoch));
            ck.save(&path)?;
            written.push(path);
            Ok(())
        })?;
        let csv = dir.join("loss.csv");
        std::fs::write(&csv, loss_csv(&self.loss_trace)).map_err(|e| Error::io(&csv, e))?;
        written.push(csv);
        Ok(written)
    }

    pub fn task(&self) -> Task {
        self.config.data.task
    }
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("checkpoint-{epoch:05}.bin")
}
