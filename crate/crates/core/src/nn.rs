//! Shared layer building blocks.

use std::sync::Arc;

use crate::graph::{AttentionIndex, Graph, GraphBatch};
use crate::numeric::{Bound, NumericError, ParamId, ParamStore, RngState, Scalar, Tape, Tensor, Var};

pub type Result<T> = std::result::Result<T, NumericError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn,
    Zeros,
}

fn init_tensor<S: Scalar>(rows: usize, cols: usize, fan_in: usize, init: Init, rng: &mut RngState) -> Tensor<S> {
    match init {
        Init::Zeros => Tensor::zeros(rows, cols),
        Init::FanIn => {
            let b = 1.0 / (fan_in.max(1) as f64).sqrt();
            rng.uniform_tensor(rows, cols, -b, b)
        }
    }
}

/// `x W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        init: Init,
        rng: &mut RngState,
    ) -> Self {
        let w = store.add(format!("{name}.weight"), init_tensor(in_dim, out_dim, in_dim, init, rng));
        let b = bias.then(|| store.add(format!("{name}.bias"), init_tensor(1, out_dim, in_dim, init, rng)));
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, bound: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, bound.var(self.w))?;
        match self.b {
            Some(b) => tape.add_row(y, bound.var(b)),
            None => Ok(y),
        }
    }
}

/// PReLU with one learnable slope, initialized to 0.25.
#[derive(Debug, Clone)]
pub struct Prelu {
    pub slope: ParamId,
}

impl Prelu {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str) -> Self {
        Self { slope: store.add(format!("{name}.slope"), Tensor::scalar(S::from_f64(0.25))) }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, bound: &Bound, x: Var) -> Result<Var> {
        tape.prelu(x, bound.var(self.slope))
    }
}

/// Inverted dropout; identity when `p == 0`.
pub fn dropout<S: Scalar>(tape: &mut Tape<S>, x: Var, p: f64, rng: &mut RngState) -> Result<Var> {
    if p <= 0.0 {
        return Ok(x);
    }
    let [rows, cols] = tape.shape(x);
    let keep = S::from_f64(1.0 / (1.0 - p));
    let mask = Tensor::from_fn(rows, cols, |_, _| if rng.bernoulli(1.0 - p) { keep } else { S::zero() });
    let m = tape.constant(mask);
    tape.mul(x, m)
}

/// Index structures of a graph or batch, shared by every layer of a pass.
#[derive(Debug, Clone)]
pub struct Structure {
    pub n: usize,
    pub attention: AttentionIndex,
    pub nbr_offsets: Arc<[usize]>,
    pub nbr_indices: Arc<[usize]>,
    /// Graph boundaries for batched graphs.
    pub segments: Option<Arc<[usize]>>,
    pub graph_id: Option<Arc<[usize]>>,
}

impl Structure {
    pub fn from_graph(g: &Graph) -> Self {
        Self {
            n: g.n(),
            attention: g.adj.attention_index(),
            nbr_offsets: g.adj.offsets().clone(),
            nbr_indices: g.adj.indices().clone(),
            segments: None,
            graph_id: None,
        }
    }

    pub fn from_batch(b: &GraphBatch) -> Self {
        Self { segments: Some(b.offsets.clone()), graph_id: Some(b.graph_id.clone()), ..Self::from_graph(&b.graph) }
    }

    pub fn graph_count(&self) -> usize {
        self.segments.as_ref().map_or(1, |s| s.len() - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropout_scales_kept_entries() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::filled(100, 10, 1.0));
        let y = dropout(&mut tape, x, 0.5, &mut RngState::new(3)).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0 || v == 2.0));
        let y0 = dropout(&mut tape, x, 0.0, &mut RngState::new(3)).unwrap();
        assert_eq!(y0, x);
    }

    #[test]
    fn fan_in_bounds() {
        let mut store = ParamStore::<f64>::new();
        let lin = Linear::new(&mut store, "l", 16, 8, true, Init::FanIn, &mut RngState::new(1));
        assert!(store.value(lin.w).data().iter().all(|v| v.abs() <= 0.25));
        let zero = Linear::new(&mut store, "z", 4, 4, true, Init::Zeros, &mut RngState::new(1));
        assert!(store.value(zero.b.unwrap()).data().iter().all(|&v| v == 0.0));
    }
}
