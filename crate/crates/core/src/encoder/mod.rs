//! Graph encoder: GAT (node tasks) or GIN (graph tasks) message passing
//! after row masking, with PReLU after every layer and an optional
//! per-graph readout.

pub mod gat;
pub mod gin;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::graph::{mask_nodes, MaskRecord};
use crate::nn::{dropout, Prelu, Result, Structure};
use crate::numeric::{Bound, NumericError, ParamStore, RngState, Scalar, Tape, Tensor, Var};

pub use gat::GatLayer;
pub use gin::GinLayer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Gat,
    Gin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutKind {
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub layers: usize,
    pub hidden: usize,
    /// Heads of every hidden GAT layer (concatenated).
    pub heads: usize,
    /// Heads of the final GAT layer (averaged).
    pub out_heads: usize,
    pub feat_drop: f64,
    pub att_drop: f64,
    pub negative_slope: f64,
    pub readout: ReadoutKind,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Gat,
            layers: 2,
            hidden: 64,
            heads: 4,
            out_heads: 1,
            feat_drop: 0.0,
            att_drop: 0.0,
            negative_slope: 0.2,
            readout: ReadoutKind::Mean,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.layers == 0 || self.hidden == 0 {
            return Err("encoder.layers and encoder.hidden must be positive".into());
        }
        if self.kind == EncoderKind::Gat {
            if self.heads == 0 || self.out_heads == 0 {
                return Err("encoder.heads and encoder.out_heads must be positive".into());
            }
            if self.hidden % self.heads != 0 {
                return Err(format!(
                    "encoder.hidden ({}) must be divisible by encoder.heads ({})",
                    self.hidden, self.heads
                ));
            }
        }
        for (name, p) in [("feat_drop", self.feat_drop), ("att_drop", self.att_drop)] {
            if !(0.0..1.0).contains(&p) {
                return Err(format!("encoder.{name} must lie in [0, 1), got {p}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum EncoderLayer {
    Gat(GatLayer),
    Gin(GinLayer),
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub in_dim: usize,
    pub layers: Vec<EncoderLayer>,
    pub acts: Vec<Prelu>,
}

/// Result of one encoder pass.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// Node representations, `n x hidden`.
    pub z: Var,
    /// Per-graph readout, `B x hidden`, for batched input.
    pub readout: Option<Var>,
    pub mask: MaskRecord,
}

impl Encoder {
    pub fn new<S: Scalar>(
        config: &EncoderConfig,
        in_dim: usize,
        store: &mut ParamStore<S>,
        rng: &mut RngState,
    ) -> std::result::Result<Self, String> {
        config.validate()?;
        let mut layers = Vec::new();
        let mut acts = Vec::new();
        let mut width = in_dim;
        for l in 0..config.layers {
            let name = format!("encoder.layers.{l}");
            let last = l + 1 == config.layers;
            let layer = match config.kind {
                EncoderKind::Gat => {
                    let (heads, head_dim) = if last {
                        (config.out_heads, config.hidden)
                    } else {
                        (config.heads, config.hidden / config.heads)
                    };
                    EncoderLayer::Gat(GatLayer::new(
                        store,
                        &name,
                        width,
                        head_dim,
                        heads,
                        !last,
                        config.negative_slope,
                        rng,
                    ))
                }
                EncoderKind::Gin => {
                    EncoderLayer::Gin(GinLayer::new(store, &name, width, config.hidden, config.hidden, rng))
                }
            };
            acts.push(Prelu::new(store, &format!("encoder.acts.{l}")));
            layers.push(layer);
            width = config.hidden;
        }
        Ok(Self { config: config.clone(), in_dim, layers, acts })
    }

    /// Message passing on already-masked features.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        s: &Structure,
        x: Var,
        training: bool,
        rng: &mut RngState,
    ) -> Result<Var> {
        let [rows, cols] = tape.shape(x);
        if rows != s.n || cols != self.in_dim {
            return Err(NumericError::Invalid(format!(
                "encoder: expected {} x {} features, got {rows} x {cols}",
                s.n, self.in_dim
            )));
        }
        let (feat_drop, att_drop) = if training { (self.config.feat_drop, self.config.att_drop) } else { (0.0, 0.0) };
        let mut h = x;
        for (layer, act) in self.layers.iter().zip(&self.acts) {
            h = dropout(tape, h, feat_drop, rng)?;
            h = match layer {
                EncoderLayer::Gat(l) => l.forward(tape, bound, s, h, att_drop, rng)?,
                EncoderLayer::Gin(l) => l.forward(tape, bound, s, h)?,
            };
            h = act.forward(tape, bound, h)?;
        }
        Ok(h)
    }

    /// Masks rows (training only), encodes, and reads out batched graphs.
    #[allow(clippy::too_many_arguments)]
    pub fn encode<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        s: &Structure,
        x: &Tensor<S>,
        mask_ratio: f64,
        training: bool,
        rng: &mut RngState,
    ) -> Result<Encoded> {
        let m = if training { mask_ratio } else { 0.0 };
        let (masked, mask) = mask_nodes(x, m, rng);
        let xv = tape.constant(masked);
        let z = self.forward(tape, bound, s, xv, training, rng)?;
        let readout = match &s.segments {
            Some(seg) => Some(readout(tape, z, seg.clone(), self.config.readout)?),
            None => None,
        };
        Ok(Encoded { z, readout, mask })
    }
}

/// Per-graph mean or sum of node rows over contiguous segments.
pub fn readout<S: Scalar>(tape: &mut Tape<S>, z: Var, segments: Arc<[usize]>, kind: ReadoutKind) -> Result<Var> {
    tape.segment_rows(z, segments, kind == ReadoutKind::Mean)
}
