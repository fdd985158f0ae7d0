use crate::nn::{Init, Linear, Result};
use crate::numeric::{Bound, NumericError, ParamStore, RngState, Scalar, Tape, Tensor, Var};

/// Sinusoidal encoding, `[sin(t w_0) .. sin(t w_{h-1}), cos(t w_0) .. cos(t w_{h-1})]`
/// with `w_k = 10000^(-2k / width)` and `h = width / 2`.
pub fn sincos<S: Scalar>(t: &[usize], width: usize) -> Result<Tensor<S>> {
    if width == 0 || width % 2 != 0 {
        return Err(NumericError::Invalid(format!("time embedding width must be even and positive, got {width}")));
    }
    let half = width / 2;
    let freqs: Vec<f64> = (0..half).map(|k| 10000f64.powf(-2.0 * k as f64 / width as f64)).collect();
    Ok(Tensor::from_fn(t.len(), width, |r, c| {
        let arg = t[r] as f64 * freqs[c % half];
        S::from_f64(if c < half { arg.sin() } else { arg.cos() })
    }))
}

/// `SiLU(Lin(SiLU(Lin(sincos(t)))))`.
#[derive(Debug, Clone)]
pub struct TimeEmbedding {
    pub width: usize,
    pub lin1: Linear,
    pub lin2: Linear,
}

impl TimeEmbedding {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, width: usize, rng: &mut RngState) -> Self {
        let lin1 = Linear::new(store, &format!("{name}.0"), width, width, true, Init::FanIn, rng);
        let lin2 = Linear::new(store, &format!("{name}.1"), width, width, true, Init::FanIn, rng);
        Self { width, lin1, lin2 }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, bound: &Bound, t: &[usize]) -> Result<Var> {
        let enc = tape.constant(sincos::<S>(t, self.width)?);
        let h = self.lin1.forward(tape, bound, enc)?;
        let h = tape.silu(h);
        let h = self.lin2.forward(tape, bound, h)?;
        Ok(tape.silu(h))
    }
}
