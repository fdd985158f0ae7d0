//! Run configuration: JSON sections with dotted-key overrides.

use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::decoder::DecoderConfig;
use crate::diffusion::{Reduction, ScheduleKind, Weighting};
use crate::encoder::{EncoderConfig, EncoderKind};
use crate::error::{Error, Result};
use crate::model::ConditionKind;
use crate::numeric::{AdamConfig, Precision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Node,
    Graph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub task: Task,
    /// Degree one-hot cap for graph datasets; `None` uses the maximum degree.
    pub degree_cap: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { path: None, task: Task::Node, degree_cap: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub schedule: ScheduleKind,
    pub steps: usize,
    /// Per-step loss weights; `null` weights every step by one.
    pub weighting: Weighting,
    pub reduction: Reduction,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleKind::Sigmoid,
            steps: 1000,
            weighting: Weighting::uniform(),
            reduction: Reduction::PerElement,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub mask_ratio: f64,
    pub lr_decoder: f64,
    /// Defaults to twice `lr_decoder`.
    pub lr_encoder: Option<f64>,
    /// Floor of the cosine schedule, as a fraction of each group's peak rate.
    pub lr_min_ratio: f64,
    pub optimizer: AdamConfig,
    pub clip_norm: Option<f64>,
    pub epochs: usize,
    /// Graphs per mini-batch (graph tasks).
    pub batch_size: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Checkpoint every this many epochs; 0 writes only the initial and final ones.
    pub checkpoint_every: usize,
    pub condition: ConditionKind,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            mask_ratio: 0.7,
            lr_decoder: 1e-4,
            lr_encoder: None,
            lr_min_ratio: 0.0,
            optimizer: AdamConfig::default(),
            clip_norm: Some(1.0),
            epochs: 1000,
            batch_size: 32,
            seed: 0,
            precision: Precision::F32,
            checkpoint_every: 0,
            condition: ConditionKind::Representation,
        }
    }
}

impl TrainerConfig {
    pub fn encoder_lr(&self) -> f64 {
        self.lr_encoder.unwrap_or(2.0 * self.lr_decoder)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub diffusion: DiffusionConfig,
    pub trainer: TrainerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::node_defaults()
    }
}

impl TrainConfig {
    /// Cora-style node-classification defaults.
    pub fn node_defaults() -> Self {
        Self {
            data: DataConfig::default(),
            encoder: EncoderConfig {
                kind: EncoderKind::Gat,
                layers: 2,
                hidden: 1024,
                heads: 4,
                out_heads: 1,
                feat_drop: 0.3,
                att_drop: 0.1,
                ..EncoderConfig::default()
            },
            decoder: DecoderConfig::default(),
            diffusion: DiffusionConfig::default(),
            trainer: TrainerConfig::default(),
        }
    }

    /// MUTAG-style graph-classification defaults.
    pub fn graph_defaults() -> Self {
        Self {
            data: DataConfig { task: Task::Graph, ..DataConfig::default() },
            encoder: EncoderConfig {
                kind: EncoderKind::Gin,
                layers: 3,
                hidden: 32,
                heads: 2,
                feat_drop: 0.3,
                att_drop: 0.2,
                ..EncoderConfig::default()
            },
            decoder: DecoderConfig { hidden: 64, time_dim: 32, ..DecoderConfig::for_graph_tasks() },
            diffusion: DiffusionConfig::default(),
            trainer: TrainerConfig { mask_ratio: 0.0, epochs: 100, ..TrainerConfig::default() },
        }
    }

    pub fn defaults_for(task: Task) -> Self {
        match task {
            Task::Node => Self::node_defaults(),
            Task::Graph => Self::graph_defaults(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Error::Config(m);
        self.encoder.validate().map_err(cfg)?;
        self.decoder.validate().map_err(cfg)?;
        self.diffusion.weighting.validate(self.diffusion.steps)?;
        if self.diffusion.steps < 2 {
            return Err(cfg(format!("diffusion.steps must be at least 2, got {}", self.diffusion.steps)));
        }
        let t = &self.trainer;
        if !(0.0..=1.0).contains(&t.mask_ratio) {
            return Err(cfg(format!("trainer.mask_ratio must lie in [0, 1], got {}", t.mask_ratio)));
        }
        for (name, lr) in [("lr_decoder", t.lr_decoder), ("lr_encoder", t.encoder_lr())] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(cfg(format!("trainer.{name} must be positive, got {lr}")));
            }
        }
        if !(0.0..=1.0).contains(&t.lr_min_ratio) {
            return Err(cfg(format!("trainer.lr_min_ratio must lie in [0, 1], got {}", t.lr_min_ratio)));
        }
        if let Some(c) = t.clip_norm {
            if !(c > 0.0) {
                return Err(cfg(format!("trainer.clip_norm must be positive, got {c}")));
            }
        }
        if t.batch_size == 0 {
            return Err(cfg("trainer.batch_size must be positive".into()));
        }
        let expected = match self.data.task {
            Task::Node => EncoderKind::Gat,
            Task::Graph => EncoderKind::Gin,
        };
        if self.encoder.kind != expected {
            log::warn!("encoder.kind {:?} is unusual for {:?} tasks", self.encoder.kind, self.data.task);
        }
        Ok(())
    }

    /// Parses JSON; missing keys take the defaults of `data.task`.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let task = match value.pointer("/data/task") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("data.task: {e}")))?,
            None => Task::Node,
        };
        let mut base = serde_json::to_value(Self::defaults_for(task)).expect("config serializes");
        merge(&mut base, value);
        serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `section.key=value` overrides; see [`apply_overrides`].
    pub fn apply_overrides<'a>(&self, overrides: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        apply_overrides(self, overrides)
    }
}

/// Applies dotted `key=value` overrides to any serializable config. Values
/// parse as JSON, falling back to a plain string. Unknown keys are errors.
pub fn apply_overrides<'a, T>(config: &T, overrides: impl IntoIterator<Item = &'a str>) -> Result<T>
where
    T: Serialize + DeserializeOwned,
{
    let mut value = serde_json::to_value(config).expect("config serializes");
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{item}` is not of the form key=value")))?;
        let key = key.trim();
        let parsed: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut slot = &mut value;
        for part in key.split('.') {
            slot = match slot {
                Value::Object(map) if map.contains_key(part) => map.get_mut(part).expect("checked"),
                _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
            };
        }
        *slot = parsed;
    }
    serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        for cfg in [TrainConfig::node_defaults(), TrainConfig::graph_defaults()] {
            cfg.validate().unwrap();
            assert_eq!(TrainConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        }
    }

    #[test]
    fn partial_json_takes_task_defaults() {
        let cfg = TrainConfig::from_json(r#"{"data": {"task": "graph"}, "trainer": {"seed": 7}}"#).unwrap();
        assert_eq!(cfg.encoder.kind, EncoderKind::Gin);
        assert_eq!(cfg.trainer.seed, 7);
        assert_eq!(cfg.trainer.mask_ratio, 0.0);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = TrainConfig::from_json(r#"{"trainer": {"lr_decoer": 1e-4}}"#).unwrap_err();
        assert!(err.to_string().contains("lr_decoer"));
    }

    #[test]
    fn overrides_apply_and_name_bad_keys() {
        let cfg = TrainConfig::default();
        let out = cfg.apply_overrides(["trainer.lr_decoder=3e-4", "diffusion.schedule=quad"]).unwrap();
        assert_eq!(out.trainer.lr_decoder, 3e-4);
        assert_eq!(out.trainer.encoder_lr(), 6e-4);
        assert_eq!(out.diffusion.schedule, ScheduleKind::Quad);
        let err = cfg.apply_overrides(["trainer.lr_decoer=1e-4"]).unwrap_err();
        assert!(err.to_string().contains("trainer.lr_decoer"));
    }

    #[test]
    fn explicit_encoder_rate_overrides_ratio() {
        let cfg = TrainConfig::default().apply_overrides(["trainer.lr_encoder=5e-5"]).unwrap();
        assert_eq!(cfg.trainer.encoder_lr(), 5e-5);
    }
}
