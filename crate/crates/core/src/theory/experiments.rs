//! Denoising loss under different conditions, and the rank correlation
//! between denoising loss and probe accuracy across checkpoints.

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::evaluator::{embed, linear_probe_node, ProbeConfig};
use crate::graph::{Graph, Split};
use crate::model::{ConditionKind, Dataset, Graffe, Objective, Sample};
use crate::numeric::{RngState, Scalar};
use crate::trainer::{model_from_checkpoint, Checkpoint, Trainer};

/// Stream for evaluation noise, shared by every model under comparison.
const EVAL_STREAM: u64 = 2;

/// Steps at `0.1 T, 0.2 T, ..., 0.9 T`.
pub fn default_t_grid(schedule: &NoiseSchedule) -> Vec<usize> {
    (1..=9).map(|i| schedule.step_at(i as f64 / 10.0)).collect()
}

/// Test-split nodes, or every node when the graph has no split.
pub fn heldout_rows(graph: &Graph) -> Vec<usize> {
    let test = graph.split_nodes(Split::Test);
    if test.is_empty() {
        (0..graph.n()).collect()
    } else {
        test
    }
}

/// Mean per-element squared error on `rows` at each step of `t_grid`,
/// averaged over `repeats` noise draws. The draws depend only on `seed`.
pub fn heldout_curve<S: Scalar>(
    model: &Graffe<S>,
    sample: &Sample<S>,
    objective: &Objective,
    rows: &[usize],
    t_grid: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let d = sample.x.cols().max(1) as f64;
    t_grid
        .iter()
        .map(|&t| {
            let mut rng = RngState::new(seed).fork(EVAL_STREAM).fork(t as u64);
            let mut total = 0.0;
            for _ in 0..repeats.max(1) {
                let errs = model.row_errors_at(sample, objective, t, &mut rng)?;
                total += rows.iter().map(|&r| errs[r]).sum::<f64>() / (rows.len().max(1) as f64 * d);
            }
            Ok(total / repeats.max(1) as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCurves {
    pub t_grid: Vec<usize>,
    pub vanilla: Vec<f64>,
    pub label: Vec<f64>,
    pub representation: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

impl ConditionCurves {
    /// `(vanilla, label, representation)` averaged over the grid.
    pub fn means(&self) -> (f64, f64, f64) {
        (mean(&self.vanilla), mean(&self.label), mean(&self.representation))
    }

    /// Representation below label below vanilla on average.
    pub fn ordered(&self) -> bool {
        let (v, l, r) = self.means();
        r < l && l < v
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,vanilla,label,representation\n");
        for (i, t) in self.t_grid.iter().enumerate() {
            s.push_str(&format!("{t},{},{},{}\n", self.vanilla[i], self.label[i], self.representation[i]));
        }
        s
    }
}

/// Trains one model per condition with the same configuration and budget,
/// then evaluates each on the held-out nodes over `t_grid`.
pub fn condition_comparison<S: Scalar>(
    cfg: &TrainConfig,
    graph: &Graph,
    t_grid: &[usize],
    repeats: usize,
) -> Result<ConditionCurves> {
    if graph.node_labels.is_none() {
        return Err(Error::Theory("the label condition needs node labels".into()));
    }
    let data = Dataset::Node(graph.clone());
    let sample = Sample::<S>::from_graph(graph);
    let rows = heldout_rows(graph);
    let curve = |kind: ConditionKind| -> Result<Vec<f64>> {
        let mut c = cfg.clone();
        c.trainer.condition = kind;
        let mut tr = Trainer::<S>::new(c, &data)?;
        tr.train(|_| Ok(()))?;
        heldout_curve(&tr.model, &sample, &tr.objective, &rows, t_grid, repeats, cfg.trainer.seed)
    };
    Ok(ConditionCurves {
        t_grid: t_grid.to_vec(),
        vanilla: curve(ConditionKind::None)?,
        label: curve(ConditionKind::Label)?,
        representation: curve(ConditionKind::Representation)?,
    })
}

/// Ranks from 1 with ties sharing their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; `None` when either input is constant or
/// fewer than two pairs are given.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 || a.iter().chain(b).any(|v| v.is_nan()) {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let (ma, mb) = (mean(&ra), mean(&rb));
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub epoch: usize,
    /// Mean held-out denoising loss over the grid.
    pub loss: f64,
    /// Probe accuracy in percent.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub points: Vec<SeriesPoint>,
    /// Rank correlation of `-log loss` with accuracy; `None` if undefined.
    pub rho: Option<f64>,
}

impl CorrelationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,neg_log_loss,accuracy\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{},{}\n", p.epoch, p.loss, -p.loss.ln(), p.accuracy));
        }
        s
    }
}

pub fn loss_accuracy_correlation(points: &[SeriesPoint]) -> CorrelationReport {
    let nll: Vec<f64> = points.iter().map(|p| -p.loss.ln()).collect();
    let acc: Vec<f64> = points.iter().map(|p| p.accuracy).collect();
    CorrelationReport { points: points.to_vec(), rho: spearman(&nll, &acc) }
}

/// Held-out loss and probe accuracy for each checkpoint of a node run.
pub fn checkpoint_series<S: Scalar>(
    checkpoints: &[Checkpoint<S>],
    graph: &Graph,
    probe: &ProbeConfig,
    repeats: usize,
) -> Result<Vec<SeriesPoint>> {
    let data = Dataset::Node(graph.clone());
    let sample = Sample::<S>::from_graph(graph);
    let rows = heldout_rows(graph);
    checkpoints
        .iter()
        .map(|ck| {
            let model = model_from_checkpoint(ck)?;
            let objective = Objective::from_config(&ck.config)?;
            let grid = default_t_grid(&objective.schedule);
            let curve = heldout_curve(&model, &sample, &objective, &rows, &grid, repeats, ck.config.trainer.seed)?;
            let z = embed(&model, &data)?;
            let report = linear_probe_node(&z, graph, probe)?;
            Ok(SeriesPoint { epoch: ck.epoch, loss: mean(&curve), accuracy: report.mean })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 0.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
        assert_eq!(spearman(&[1.0], &[1.0]), None);
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(ranks(&[5.0, 1.0, 5.0, 3.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn correlation_ignores_order() {
        let pts: Vec<SeriesPoint> = (0..12)
            .map(|i| SeriesPoint { epoch: i, loss: 1.0 / (1.0 + i as f64), accuracy: 50.0 + (i * 7 % 5) as f64 })
            .collect();
        let mut rev = pts.clone();
        rev.reverse();
        let a = loss_accuracy_correlation(&pts).rho.unwrap();
        let b = loss_accuracy_correlation(&rev).rho.unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn constant_loss_series_is_undefined() {
        let pts: Vec<SeriesPoint> = (0..10).map(|i| SeriesPoint { epoch: i, loss: 0.5, accuracy: i as f64 }).collect();
        assert_eq!(loss_accuracy_correlation(&pts).rho, None);
    }
}
