/// Per-row unweighted squared errors `||x_pred_r - x0_r||^2`.//! Data-prediction denoising loss `lambda(t) * ||x_pred - x_0||^2`.
use serde::{Deserialize, Serialize};

use super::DiffusionError;
use crate::numeric::{NumericError, Scalar, Tape, Tensor, Var};

/// How squared errors are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Row-wise squared norm, averaged over rows.
    PerNode,
    /// Average over rows and feature columns.
    PerElement,
}

/// Per-timestep weight `lambda(t)`; `None` means `lambda = 1`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Weighting(pub Option<Vec<f64>>);

impl Weighting {
    pub fn uniform() -> Self {
        Self(None)
    }

    pub fn is_uniform(&self) -> bool {
        self.0.is_none()
    }

    pub fn weight(&self, t: usize) -> f64 {
        self.0.as_ref().map_or(1.0, |w| w[t - 1])
    }

    pub fn validate(&self, steps: usize) -> Result<(), DiffusionError> {
        if let Some(w) = &self.0 {
            if w.len() != steps {
                return Err(DiffusionError::Weighting(format!("{} weights for {steps} timesteps", w.len())));
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(DiffusionError::Weighting("weights must be finite and non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Reduced loss as plain numbers.
pub fn dsm_loss<S: Scalar>(
    x_pred: &Tensor<S>,
    x0: &Tensor<S>,
    t: &[usize],
    weighting: &Weighting,
    reduction: Reduction,
) -> Result<f64, DiffusionError> {
    if x_pred.shape() != x0.shape() || t.len() != x0.rows() {
        return Err(DiffusionError::Shape { pred: x_pred.shape(), target: x0.shape(), steps: t.len() });
    }
    let mut total = 0.0;
    for (r, &tr) in t.iter().enumerate() {
        let row: f64 = x_pred.row(r).iter().zip(x0.row(r)).map(|(&a, &b)| (a - b).as_f64().powi(2)).sum();
        total += weighting.weight(tr) * row;
    }
    let denom = match reduction {
        Reduction::PerNode => x0.rows(),
        Reduction::PerElement => x0.rows() * x0.cols(),
    };
    Ok(total / denom.max(1) as f64)
}

/// Per-row unweighted squared errors `||x_pred_r - x0_r||^2`.
pub fn row_losses<S: Scalar>(x_pred: &Tensor<S>, x0: &Tensor<S>) -> Vec<f64> {
    (0..x0.rows()).map(|r| x_pred.row(r).iter().zip(x0.row(r)).map(|(&a, &b)| (a - b).as_f64().powi(2)).sum()).collect()
}

/// The same loss recorded on a tape. `x0` is normally a constant.
pub fn dsm_loss_tape<S: Scalar>(
    tape: &mut Tape<S>,
    x_pred: Var,
    x0: Var,
    t: &[usize],
    weighting: &Weighting,
    reduction: Reduction,
) -> Result<Var, NumericError> {
    let [rows, cols] = tape.shape(x0);
    if t.len() != rows {
        return Err(NumericError::Invalid(format!("dsm_loss: {} timesteps for {rows} rows", t.len())));
    }
    let diff = tape.sub(x_pred, x0)?;
    let mut sq = tape.mul(diff, diff)?;
    if !weighting.is_uniform() {
        let w = Tensor::from_fn(rows, 1, |r, _| S::from_f64(weighting.weight(t[r])));
        let wv = tape.constant(w);
        sq = tape.mul_col(sq, wv)?;
    }
    let total = tape.sum_all(sq);
    let denom = match reduction {
        Reduction::PerNode => rows,
        Reduction::PerElement => rows * cols,
    };
    Ok(tape.scale(total, S::from_f64(1.0 / denom.max(1) as f64)))
}
