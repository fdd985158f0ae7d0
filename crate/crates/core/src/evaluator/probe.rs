//! Multinomial logistic regression trained by full-batch Adam with an L2
//! penalty on the weights.

use serde::{Deserialize, Serialize};

use crate::numeric::{RngState, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub l2_grid: Vec<f64>,
    pub lr: f64,
    pub epochs: usize,
    /// Node probes: number of seeds.
    pub seeds: usize,
    /// Graph probes: folds per run and number of runs.
    pub folds: usize,
    pub runs: usize,
    pub base_seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            l2_grid: vec![1e-4, 1e-3, 1e-2, 1e-1],
            lr: 0.01,
            epochs: 300,
            seeds: 20,
            folds: 10,
            runs: 5,
            base_seed: 0,
        }
    }
}

/// Fitted `x W + b` classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub w: Tensor<f64>,
    pub b: Vec<f64>,
}

impl LogisticModel {
    pub fn classes(&self) -> usize {
        self.b.len()
    }

    pub fn logits(&self, x: &Tensor<f64>) -> Tensor<f64> {
        let mut z = x.matmul(&self.w).expect("feature width matches");
        for r in 0..z.rows() {
            z.row_mut(r).iter_mut().zip(&self.b).for_each(|(v, b)| *v += b);
        }
        z
    }

    /// Argmax per row; ties go to the lowest class index.
    pub fn predict(&self, x: &Tensor<f64>) -> Vec<usize> {
        let z = self.logits(x);
        (0..z.rows()).map(|r| argmax(z.row(r))).collect()
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Percentage of matching entries.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    100.0 * pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

/// Fits on rows `x` with labels `y` in `0..classes`.
pub fn fit_logistic(
    x: &Tensor<f64>,
    y: &[usize],
    classes: usize,
    l2: f64,
    cfg: &ProbeConfig,
    rng: &mut RngState,
) -> LogisticModel {
    let (n, d) = (x.rows(), x.cols());
    let bound = 1.0 / (d.max(1) as f64).sqrt();
    let mut w: Tensor<f64> = rng.uniform_tensor(d, classes, -bound, bound);
    let mut b = vec![0.0; classes];
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut mw = vec![0.0; d * classes];
    let mut vw = vec![0.0; d * classes];
    let mut mb = vec![0.0; classes];
    let mut vb = vec![0.0; classes];
    let xt = x.transpose();
    for step in 1..=cfg.epochs {
        let mut p = LogisticModel { w: w.clone(), b: b.clone() }.logits(x);
        for r in 0..n {
            softmax_in_place(p.row_mut(r));
            p.row_mut(r)[y[r]] -= 1.0;
        }
        p.scale_assign(1.0 / n.max(1) as f64);
        let mut gw = xt.matmul(&p).expect("shapes agree");
        gw.data_mut().iter_mut().zip(w.data()).for_each(|(g, &wv)| *g += 2.0 * l2 * wv);
        let gb: Vec<f64> = (0..classes).map(|c| (0..n).map(|r| p.get(r, c)).sum()).collect();
        let (c1, c2) = (1.0 - b1.powi(step as i32), 1.0 - b2.powi(step as i32));
        let adam = |theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for k in 0..theta.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                theta[k] -= cfg.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            }
        };
        adam(w.data_mut(), gw.data(), &mut mw, &mut vw);
        adam(&mut b, &gb, &mut mb, &mut vb);
    }
    LogisticModel { w, b }
}

/// Column mean and standard deviation over `rows`, applied to all rows.
pub fn standardize(x: &Tensor<f64>, rows: &[usize]) -> Tensor<f64> {
    crate::graph::standardize_columns(x, rows)
}
