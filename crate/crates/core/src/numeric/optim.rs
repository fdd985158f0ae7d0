//! Adam and AdamW with bias correction, plus global-norm clipping.

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::scalar::Scalar;
use super::tensor::Tensor;
use super::{NumericError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerMode {
    /// Weight decay folded into the gradient.
    Adam,
    /// Decoupled weight decay.
    AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub mode: OptimizerMode,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, mode: OptimizerMode::Adam }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
    pub step: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig, store: &ParamStore<S>) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.rows(), p.value.cols())).collect();
        Self { config, m: zeros(), v: zeros(), step: 0 }
    }

    /// One update at learning rate `lr`. On a missing or non-finite gradient
    /// nothing is modified and an error is returned.
    pub fn step(&mut self, store: &mut ParamStore<S>, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(NumericError::Invalid(format!("learning rate must be positive, got {lr}")));
        }
        if self.m.len() != store.len() {
            return Err(NumericError::Invalid("optimizer state does not match parameter store".into()));
        }
        for p in store.iter() {
            match &p.grad {
                None => return Err(NumericError::MissingGrad(p.name.clone())),
                Some(g) if !g.is_finite() => return Err(NumericError::NonFiniteGrad(p.name.clone())),
                Some(_) => {}
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = S::from_f64(c.beta1);
        let b2 = S::from_f64(c.beta2);
        let bc1 = S::from_f64(1.0 - c.beta1.powi(t));
        let bc2 = S::from_f64(1.0 - c.beta2.powi(t));
        let eps = S::from_f64(c.eps);
        let lr_s = S::from_f64(lr);
        let wd = S::from_f64(c.weight_decay);
        let one = S::one();
        for (i, p) in store.iter_mut().enumerate() {
            let g = p.grad.as_ref().expect("checked above");
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let theta = p.value.data_mut();
            for k in 0..theta.len() {
                let mut gk = g.data()[k];
                match c.mode {
                    OptimizerMode::Adam => gk = gk + wd * theta[k],
                    OptimizerMode::AdamW => theta[k] = theta[k] * (one - lr_s * wd),
                }
                let mk = b1 * m.data()[k] + (one - b1) * gk;
                let vk = b2 * v.data()[k] + (one - b2) * gk * gk;
                m.data_mut()[k] = mk;
                v.data_mut()[k] = vk;
                let mhat = mk / bc1;
                let vhat = vk / bc2;
                theta[k] = theta[k] - lr_s * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<S: Scalar>(stores: &mut [&mut ParamStore<S>], max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for store in stores.iter() {
        for p in store.iter() {
            if let Some(g) = &p.grad {
                sq += g.data().iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
            }
        }
    }
    let norm = sq.sqrt();
    if norm.is_finite() && norm > max_norm {
        let k = S::from_f64(max_norm / norm);
        for store in stores.iter_mut() {
            for p in store.iter_mut() {
                if let Some(g) = &mut p.grad {
                    g.scale_assign(k);
                }
            }
        }
    }
    norm
}
