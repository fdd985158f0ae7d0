use crate::nn::{dropout, Init, Linear, Result, Structure};
use crate::numeric::{Bound, ParamId, ParamStore, RngState, Scalar, Tape, Tensor, Var};

/// Multi-head graph attention over `N(v) + {v}`.
#[derive(Debug, Clone)]
pub struct GatLayer {
    pub fc: Linear,
    pub attn_l: ParamId,
    pub attn_r: ParamId,
    pub bias: ParamId,
    pub heads: usize,
    pub head_dim: usize,
    /// Concatenate heads; otherwise average them.
    pub concat: bool,
    pub negative_slope: f64,
}

impl GatLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        in_dim: usize,
        head_dim: usize,
        heads: usize,
        concat: bool,
        negative_slope: f64,
        rng: &mut RngState,
    ) -> Self {
        let width = heads * head_dim;
        let fc = Linear::new(store, &format!("{name}.fc"), in_dim, width, false, Init::FanIn, rng);
        let b = 1.0 / (head_dim as f64).sqrt();
        let attn_l = store.add(format!("{name}.attn_l"), rng.uniform_tensor(1, width, -b, b));
        let attn_r = store.add(format!("{name}.attn_r"), rng.uniform_tensor(1, width, -b, b));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, width));
        Self { fc, attn_l, attn_r, bias, heads, head_dim, concat, negative_slope }
    }

    pub fn out_dim(&self) -> usize {
        if self.concat {
            self.heads * self.head_dim
        } else {
            self.head_dim
        }
    }

    /// Layer output and the `E x heads` attention coefficients, edges ordered
    /// as in `s.attention`.
    pub fn forward_with_attention<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        s: &Structure,
        h: Var,
        att_drop: f64,
        rng: &mut RngState,
    ) -> Result<(Var, Var)> {
        let att = &s.attention;
        let wh = self.fc.forward(tape, bound, h)?;
        let l = tape.mul_row(wh, bound.var(self.attn_l))?;
        let el = tape.head_sum(l, self.heads)?;
        let r = tape.mul_row(wh, bound.var(self.attn_r))?;
        let er = tape.head_sum(r, self.heads)?;
        let es = tape.gather_rows(el, att.src.clone())?;
        let ed = tape.gather_rows(er, att.dst.clone())?;
        let e = tape.add(es, ed)?;
        let e = tape.leaky_relu(e, S::from_f64(self.negative_slope));
        let alpha = tape.segment_softmax(e, att.offsets.clone())?;
        let a = dropout(tape, alpha, att_drop, rng)?;
        let out = tape.edge_aggregate(a, wh, att.src.clone(), att.dst.clone())?;
        let out = tape.add_row(out, bound.var(self.bias))?;
        let out = if self.concat { out } else { tape.head_mean(out, self.heads)? };
        Ok((out, alpha))
    }

    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        s: &Structure,
        h: Var,
        att_drop: f64,
        rng: &mut RngState,
    ) -> Result<Var> {
        Ok(self.forward_with_attention(tape, bound, s, h, att_drop, rng)?.0)
    }
}
