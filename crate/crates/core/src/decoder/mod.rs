//! Conditional denoising decoder: a UNet over feature width with additive
//! skips, a timestep embedding and per-block conditioning.

pub mod fusion;
pub mod time;

use serde::{Deserialize, Serialize};

use crate::encoder::GinLayer;
use crate::nn::{Init, Linear, Prelu, Result, Structure};
use crate::numeric::{Bound, NumericError, ParamStore, RngState, Scalar, Tape, Var};

pub use fusion::{AdaNorm, FuseSum};
pub use time::{sincos, TimeEmbedding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    /// Per-row linear maps; node tasks.
    Mlp,
    /// GIN maps; graph tasks.
    Gnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Sum,
    Adanorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    /// Number of width halvings.
    pub depth: usize,
    /// Width after the input projection.
    pub hidden: usize,
    pub layer: LayerKind,
    pub fusion: FusionKind,
    pub time_dim: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { depth: 2, hidden: 512, layer: LayerKind::Mlp, fusion: FusionKind::Sum, time_dim: 128 }
    }
}

impl DecoderConfig {
    pub fn for_graph_tasks() -> Self {
        Self { layer: LayerKind::Gnn, fusion: FusionKind::Adanorm, ..Self::default() }
    }

    pub fn widths(&self) -> Vec<usize> {
        (0..=self.depth).map(|i| self.hidden >> i).collect()
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.hidden == 0 || self.depth >= usize::BITS as usize || self.hidden % (1usize << self.depth) != 0 {
            return Err(format!(
                "decoder.hidden ({}) must be a positive multiple of 2^depth ({})",
                self.hidden,
                1u128 << self.depth.min(127)
            ));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return Err(format!("decoder.time_dim must be even and positive, got {}", self.time_dim));
        }
        match (self.layer, self.fusion) {
            (LayerKind::Mlp, FusionKind::Sum) | (LayerKind::Gnn, FusionKind::Adanorm) => Ok(()),
            (l, f) => Err(format!(
                "decoder.fusion {f:?} does not pair with decoder.layer {l:?} (mlp uses sum, gnn uses adanorm)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Fusion {
    Sum(FuseSum),
    AdaNorm(AdaNorm),
}

#[derive(Debug, Clone)]
pub enum BlockMap {
    Linear(Linear),
    Gin(GinLayer),
}

/// `PReLU(map(fuse(h, t, z)))`, mapping `in_dim -> out_dim`.
#[derive(Debug, Clone)]
pub struct Block {
    pub fusion: Fusion,
    pub map: BlockMap,
    pub act: Prelu,
}

impl Block {
    #[allow(clippy::too_many_arguments)]
    fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        config: &DecoderConfig,
        in_dim: usize,
        out_dim: usize,
        z_dim: usize,
        rng: &mut RngState,
    ) -> Self {
        let fname = format!("{name}.fuse");
        let fusion = match config.fusion {
            FusionKind::Sum => Fusion::Sum(FuseSum::new(store, &fname, in_dim, config.time_dim, z_dim, rng)),
            FusionKind::Adanorm => Fusion::AdaNorm(AdaNorm::new(store, &fname, in_dim, config.time_dim, z_dim, rng)),
        };
        let mname = format!("{name}.map");
        let map = match config.layer {
            LayerKind::Mlp => BlockMap::Linear(Linear::new(store, &mname, in_dim, out_dim, true, Init::FanIn, rng)),
            LayerKind::Gnn => BlockMap::Gin(GinLayer::new(store, &mname, in_dim, out_dim, out_dim, rng)),
        };
        let act = Prelu::new(store, &format!("{name}.act"));
        Self { fusion, map, act }
    }

    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        s: &Structure,
        h: Var,
        t_emb: Var,
        z: Var,
    ) -> Result<Var> {
        let h = match &self.fusion {
            Fusion::Sum(f) => f.forward(tape, bound, h, t_emb, z)?,
            Fusion::AdaNorm(f) => f.forward(tape, bound, h, t_emb, z)?,
        };
        let h = match &self.map {
            BlockMap::Linear(l) => l.forward(tape, bound, h)?,
            BlockMap::Gin(g) => g.forward(tape, bound, s, h)?,
        };
        self.act.forward(tape, bound, h)
    }

    /// Parameters of the block's dimensional map.
    pub fn map_params(&self) -> Vec<crate::numeric::ParamId> {
        let lin = |l: &Linear| std::iter::once(l.w).chain(l.b).collect::<Vec<_>>();
        match &self.map {
            BlockMap::Linear(l) => lin(l),
            BlockMap::Gin(g) => {
                let mut v = vec![g.eps];
                v.extend(lin(&g.lin1));
                v.push(g.act.slope);
                v.extend(lin(&g.lin2));
                v
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub data_dim: usize,
    pub z_dim: usize,
    pub time: TimeEmbedding,
    pub in_proj: Linear,
    pub down: Vec<Block>,
    pub middle: Block,
    /// `up[j]` maps width `w_{j+1}` back to `w_j`.
    pub up: Vec<Block>,
    pub out_proj: Linear,
}

/// Intermediate values of a traced forward pass.
#[derive(Debug, Clone)]
pub struct DecoderTrace {
    /// Contracting states `s_0 .. s_depth`; `s_0` is the input projection.
    pub states: Vec<Var>,
    /// Inputs of the up blocks after their skip, indexed by block `j`.
    pub up_inputs: Vec<Var>,
    /// Input of the output projection after the final skip.
    pub out_input: Var,
}

impl Decoder {
    pub fn new<S: Scalar>(
        config: &DecoderConfig,
        data_dim: usize,
        z_dim: usize,
        store: &mut ParamStore<S>,
        rng: &mut RngState,
    ) -> std::result::Result<Self, String> {
        config.validate()?;
        let w = config.widths();
        let time = TimeEmbedding::new(store, "decoder.time", config.time_dim, rng);
        let in_proj = Linear::new(store, "decoder.in_proj", data_dim, w[0], true, Init::FanIn, rng);
        let down = (0..config.depth)
            .map(|i| Block::new(store, &format!("decoder.down.{i}"), config, w[i], w[i + 1], z_dim, rng))
            .collect();
        let wd = w[config.depth];
        let middle = Block::new(store, "decoder.middle", config, wd, wd, z_dim, rng);
        let up = (0..config.depth)
            .map(|j| Block::new(store, &format!("decoder.up.{j}"), config, w[j + 1], w[j], z_dim, rng))
            .collect();
        let out_proj = Linear::new(store, "decoder.out_proj", w[0], data_dim, true, Init::Zeros, rng);
        Ok(Self { config: config.clone(), data_dim, z_dim, time, in_proj, down, middle, up, out_proj })
    }

    /// Predicts clean features from `x_t`. `t` holds one step per row; `z`
    /// has one row per node, or one per graph when `s` is batched.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        s: &Structure,
        x_t: Var,
        t: &[usize],
        z: Var,
    ) -> Result<Var> {
        Ok(self.forward_traced(tape, bound, s, x_t, t, z)?.0)
    }

    pub fn forward_traced<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        s: &Structure,
        x_t: Var,
        t: &[usize],
        z: Var,
    ) -> Result<(Var, DecoderTrace)> {
        let [n, d] = tape.shape(x_t);
        if d != self.data_dim || t.len() != n {
            return Err(NumericError::Invalid(format!(
                "decoder: expected x_t with {} columns and one step per row, got {n} x {d} with {} steps",
                self.data_dim,
                t.len()
            )));
        }
        let z = self.node_condition(tape, s, z, n)?;
        let t_emb = self.time.forward(tape, bound, t)?;

        let mut h = self.in_proj.forward(tape, bound, x_t)?;
        let mut states = vec![h];
        for block in &self.down {
            h = block.forward(tape, bound, s, h, t_emb, z)?;
            states.push(h);
        }
        h = self.middle.forward(tape, bound, s, h, t_emb, z)?;
        let mut up_inputs = vec![h; self.config.depth];
        for j in (0..self.config.depth).rev() {
            h = tape.add(h, states[j + 1])?;
            up_inputs[j] = h;
            h = self.up[j].forward(tape, bound, s, h, t_emb, z)?;
        }
        let out_input = tape.add(h, states[0])?;
        let out = self.out_proj.forward(tape, bound, out_input)?;
        Ok((out, DecoderTrace { states, up_inputs, out_input }))
    }

    fn node_condition<S: Scalar>(&self, tape: &mut Tape<S>, s: &Structure, z: Var, n: usize) -> Result<Var> {
        let [rows, cols] = tape.shape(z);
        if cols != self.z_dim {
            return Err(NumericError::Invalid(format!("decoder: expected z width {}, got {cols}", self.z_dim)));
        }
        if rows == n {
            return Ok(z);
        }
        match &s.graph_id {
            Some(gid) if rows == s.graph_count() => tape.gather_rows(z, gid.clone()),
            _ => Err(NumericError::Invalid(format!(
                "decoder: z has {rows} rows, expected {n} nodes or {} graphs",
                s.graph_count()
            ))),
        }
    }

    /// Blocks whose output feeds a skip addition: the middle block and every
    /// up block except the last.
    pub fn pre_skip_blocks(&self) -> Vec<&Block> {
        std::iter::once(&self.middle).chain(self.up.iter().skip(1)).collect()
    }
}
