//! Frozen-encoder inference and linear-probe evaluation.

pub mod probe;

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Split};
use crate::model::{Dataset, Graffe, Sample};
use crate::numeric::{RngState, Scalar, Tape, Tensor};

pub use probe::{accuracy, fit_logistic, LogisticModel, ProbeConfig};

/// Graphs per inference batch when embedding graph datasets.
const EMBED_BATCH: usize = 256;

/// Node rows for node datasets, one readout row per graph otherwise.
pub fn embed<S: Scalar>(model: &Graffe<S>, dataset: &Dataset) -> Result<Tensor<f64>> {
    let encoder = model.encoder().ok_or_else(|| Error::Eval("model has no encoder to embed with".into()))?;
    if dataset.feature_dim() != encoder.in_dim {
        return Err(Error::Eval(format!(
            "encoder expects {} features, dataset has {}",
            encoder.in_dim,
            dataset.feature_dim()
        )));
    }
    // Inference never draws; the generator only satisfies the signature.
    let mut rng = RngState::new(0);
    let run = |sample: &Sample<S>, rng: &mut RngState| -> Result<Tensor<f64>> {
        let mut tape = Tape::new();
        let bound = model.enc.bind_frozen(&mut tape);
        let out = encoder.encode(&mut tape, &bound, &sample.structure, &sample.x, 0.0, false, rng)?;
        Ok(tape.value(out.readout.unwrap_or(out.z)).cast())
    };
    match dataset {
        Dataset::Node(g) => run(&Sample::from_graph(g), &mut rng),
        Dataset::Graphs(gs) => {
            let mut rows = Vec::with_capacity(gs.len() * encoder.config.hidden);
            for chunk in gs.chunks(EMBED_BATCH) {
                rows.extend(run(&Sample::from_graphs(chunk)?, &mut rng)?.into_data());
            }
            Ok(Tensor::from_vec(gs.len(), encoder.config.hidden, rows).expect("one row per graph"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Percent.
    pub mean: f64,
    /// Population standard deviation of `runs`.
    pub std: f64,
    pub runs: Vec<f64>,
    /// L2 strength chosen for each run.
    pub selected_l2: Vec<f64>,
    pub config: ProbeConfig,
    pub checkpoint: Option<String>,
}

impl ProbeReport {
    pub fn from_runs(runs: Vec<f64>, selected_l2: Vec<f64>, config: ProbeConfig) -> Self {
        let (mean, std) = mean_std(&runs);
        Self { mean, std, runs, selected_l2, config, checkpoint: None }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub const CSV_HEADER: &'static str = "checkpoint,mean,std,count";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.checkpoint.as_deref().unwrap_or(""), self.mean, self.std, self.runs.len())
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn labelled_rows(labels: &[Option<usize>], rows: &[usize]) -> (Vec<usize>, Vec<usize>) {
    rows.iter().filter_map(|&r| labels[r].map(|l| (r, l))).unzip()
}

/// Fits one probe per L2 value on `train`, keeps the best on `val`, and
/// returns its accuracy on `test` with the chosen strength.
#[allow(clippy::too_many_arguments)]
fn select_and_score(
    x: &Tensor<f64>,
    y: &[usize],
    classes: usize,
    train: &[usize],
    val: &[usize],
    test: &[usize],
    cfg: &ProbeConfig,
    rng: &RngState,
) -> (f64, f64) {
    let ys = |rows: &[usize]| rows.iter().map(|&r| y[r]).collect::<Vec<_>>();
    let (xtr, ytr) = (x.select_rows(train), ys(train));
    let (xva, yva) = (x.select_rows(val), ys(val));
    let (xte, yte) = (x.select_rows(test), ys(test));
    let mut best: Option<(f64, f64, LogisticModel)> = None;
    for &l2 in &cfg.l2_grid {
        let mut r = *rng;
        let m = fit_logistic(&xtr, &ytr, classes, l2, cfg, &mut r);
        let acc = accuracy(&m.predict(&xva), &yva);
        if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
            best = Some((acc, l2, m));
        }
    }
    let (_, l2, m) = best.expect("non-empty L2 grid");
    (accuracy(&m.predict(&xte), &yte), l2)
}

/// Split-based node classification over `cfg.seeds` probe initializations.
pub fn linear_probe_node(z: &Tensor<f64>, graph: &Graph, cfg: &ProbeConfig) -> Result<ProbeReport> {
    let labels = graph.node_labels.as_ref().ok_or_else(|| Error::Eval("dataset has no node labels".into()))?;
    if labels.len() != z.rows() {
        return Err(Error::Eval(format!("{} embeddings for {} labelled nodes", z.rows(), labels.len())));
    }
    if cfg.l2_grid.is_empty() || cfg.seeds == 0 {
        return Err(Error::Eval("probe needs a non-empty L2 grid and at least one seed".into()));
    }
    let opt: Vec<Option<usize>> = labels.iter().copied().map(Some).collect();
    let parts: Vec<Vec<usize>> =
        [Split::Train, Split::Val, Split::Test].iter().map(|&s| labelled_rows(&opt, &graph.split_nodes(s)).0).collect();
    for (p, name) in parts.iter().zip(["train", "val", "test"]) {
        if p.is_empty() {
            return Err(Error::Eval(format!("{name} split is empty")));
        }
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let x = probe::standardize(z, &parts[0]);
    let (mut runs, mut chosen) = (Vec::new(), Vec::new());
    for seed in 0..cfg.seeds {
        let rng = RngState::new(cfg.base_seed).fork(seed as u64);
        let (acc, l2) = select_and_score(&x, labels, classes, &parts[0], &parts[1], &parts[2], cfg, &rng);
        runs.push(acc);
        chosen.push(l2);
    }
    Ok(ProbeReport::from_runs(runs, chosen, cfg.clone()))
}

/// Stratified fold ids: each class is shuffled and dealt round-robin, with
/// the dealing position carried across classes.
pub fn stratified_folds(labels: &[usize], folds: usize, rng: &mut RngState) -> Vec<usize> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut fold = vec![0; labels.len()];
    let mut next = 0;
    for (class, mut members) in by_class {
        if members.len() < folds {
            warn!("class {class} has {} members for {folds} folds; stratification is best-effort", members.len());
        }
        rng.shuffle(&mut members);
        for i in members {
            fold[i] = next % folds;
            next += 1;
        }
    }
    fold
}

/// Repeated stratified k-fold probe over graph embeddings. Within each
/// outer fold one further fold of the training part selects the L2 strength.
pub fn cv_probe_graph(z: &Tensor<f64>, labels: &[usize], cfg: &ProbeConfig) -> Result<ProbeReport> {
    let b = z.rows();
    if labels.len() != b {
        return Err(Error::Eval(format!("{b} embeddings for {} labels", labels.len())));
    }
    if cfg.folds < 3 || b < cfg.folds {
        return Err(Error::Eval(format!(
            "need at least 3 folds and as many graphs as folds, got {} for {b}",
            cfg.folds
        )));
    }
    if cfg.l2_grid.is_empty() || cfg.runs == 0 {
        return Err(Error::Eval("probe needs a non-empty L2 grid and at least one run".into()));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let (mut runs, mut chosen) = (Vec::new(), Vec::new());
    for run in 0..cfg.runs {
        let mut rng = RngState::new(cfg.base_seed).fork(run as u64);
        let fold = stratified_folds(labels, cfg.folds, &mut rng);
        for k in 0..cfg.folds {
            let inner = (k + 1) % cfg.folds;
            let test: Vec<usize> = (0..b).filter(|&i| fold[i] == k).collect();
            let val: Vec<usize> = (0..b).filter(|&i| fold[i] == inner).collect();
            let fit: Vec<usize> = (0..b).filter(|&i| fold[i] != k && fold[i] != inner).collect();
            let train: Vec<usize> = (0..b).filter(|&i| fold[i] != k).collect();
            let x = probe::standardize(z, &train);
            let probe_rng = rng.fork(k as u64);
            let (_, l2) = select_and_score(&x, labels, classes, &fit, &val, &val, cfg, &probe_rng);
            let single = ProbeConfig { l2_grid: vec![l2], ..cfg.clone() };
            let (acc, _) = select_and_score(&x, labels, classes, &train, &test, &test, &single, &probe_rng);
            runs.push(acc);
            chosen.push(l2);
        }
    }
    Ok(ProbeReport::from_runs(runs, chosen, cfg.clone()))
}
