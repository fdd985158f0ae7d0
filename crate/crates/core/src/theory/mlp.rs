//! A small fully connected denoiser trained on fresh samples of a toy.

use serde::{Deserialize, Serialize};

use super::discrete::{Denoiser, DiscreteToy};
use super::NoiseLevel;
use crate::error::Result;
use crate::nn::{Init, Linear};
use crate::numeric::tape::sigmoid;
use crate::numeric::{cosine_lr, Adam, AdamConfig, ParamStore, RngState, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub width: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_min: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { width: 64, steps: 4_000, batch: 128, lr: 3e-3, lr_min: 1e-5 }
    }
}

/// `x_t -> x_0` through two SiLU hidden layers.
#[derive(Debug, Clone)]
pub struct DenoisingMlp {
    store: ParamStore<f64>,
    layers: [Linear; 3],
    /// Final training-batch losses, one per step.
    pub losses: Vec<f64>,
}

impl DenoisingMlp {
    pub fn new(dim: usize, width: usize, rng: &mut RngState) -> Self {
        let mut store = ParamStore::new();
        let layers = [
            Linear::new(&mut store, "mlp.0", dim, width, true, Init::FanIn, rng),
            Linear::new(&mut store, "mlp.1", width, width, true, Init::FanIn, rng),
            Linear::new(&mut store, "mlp.2", width, dim, true, Init::FanIn, rng),
        ];
        Self { store, layers, losses: Vec::new() }
    }

    fn forward(
        &self,
        tape: &mut Tape<f64>,
        bound: &crate::numeric::Bound,
        x: crate::numeric::Var,
    ) -> Result<crate::numeric::Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, bound, h)?;
            if i + 1 < self.layers.len() {
                h = tape.silu(h);
            }
        }
        Ok(h)
    }

    /// Adam on the squared error against `x_0` with a cosine rate.
    pub fn train(toy: &DiscreteToy, level: NoiseLevel, cfg: &MlpConfig, rng: &mut RngState) -> Result<Self> {
        let mut mlp = Self::new(toy.dim(), cfg.width, rng);
        let mut adam = Adam::new(AdamConfig::default(), &mlp.store);
        for step in 0..cfg.steps {
            let (_, x0, xt) = toy.sample(level, cfg.batch, rng);
            let mut tape = Tape::new();
            let bound = mlp.store.bind(&mut tape);
            let input = tape.constant(xt);
            let pred = mlp.forward(&mut tape, &bound, input)?;
            let target = tape.constant(x0);
            let diff = tape.sub(pred, target)?;
            let sq = tape.mul(diff, diff)?;
            let sum = tape.sum_all(sq);
            let loss = tape.scale(sum, 1.0 / cfg.batch as f64);
            tape.backward(loss)?;
            mlp.losses.push(tape.value(loss).item());
            mlp.store.collect_grads(&tape, &bound);
            adam.step(&mut mlp.store, cosine_lr(step, cfg.steps, cfg.lr, cfg.lr_min)?)?;
        }
        Ok(mlp)
    }
}

impl Denoiser for DenoisingMlp {
    /// Same arithmetic as the training forward pass, without a tape.
    fn denoise(&self, xt: &Tensor<f64>, _: &[usize]) -> Tensor<f64> {
        let mut h = xt.matmul(self.store.value(self.layers[0].w)).expect("input width matches");
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = h.matmul(self.store.value(layer.w)).expect("layer widths match");
            }
            if let Some(b) = layer.b {
                let bias = self.store.value(b).data();
                for r in 0..h.rows() {
                    h.row_mut(r).iter_mut().zip(bias).for_each(|(v, b)| *v += b);
                }
            }
            if i + 1 < self.layers.len() {
                h.data_mut().iter_mut().for_each(|v| *v *= sigmoid(*v));
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inference_matches_the_tape() {
        let mlp = DenoisingMlp::new(2, 8, &mut RngState::new(4));
        let x = RngState::new(5).normal_tensor::<f64>(7, 2);
        let mut tape = Tape::new();
        let bound = mlp.store.bind_frozen(&mut tape);
        let input = tape.constant(x.clone());
        let out = mlp.forward(&mut tape, &bound, input).unwrap();
        assert_eq!(tape.value(out), &mlp.denoise(&x, &[]));
    }

    #[test]
    fn learns_the_prior_mean_at_pure_noise() {
        let toy = DiscreteToy::new(vec![vec![-1.0], vec![3.0]], vec![0.5, 0.5]).unwrap();
        let cfg = MlpConfig { width: 16, steps: 1500, batch: 64, ..Default::default() };
        let mlp = DenoisingMlp::train(&toy, NoiseLevel::new(0.0, 1.0), &cfg, &mut RngState::new(1)).unwrap();
        let out = mlp.denoise(&Tensor::from_f64(2, 1, &[-0.5, 0.7]).unwrap(), &[0, 0]);
        assert!(out.data().iter().all(|v| (v - 1.0).abs() < 0.1), "{out:?}");
    }
}
