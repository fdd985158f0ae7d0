//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria that need Cora or MUTAG read `$GRAFFE_DATA_DIR/cora` and
//! `$GRAFFE_DATA_DIR/mutag`; without them the line reads FAIL with the
//! reason and does not gate the exit status. The mask-ratio trend only
//! warns.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use graffe::decoder::{FusionKind, LayerKind};
use graffe::evaluator::{cv_probe_graph, embed, linear_probe_node, ProbeConfig};
use graffe::theory::experiments::{checkpoint_series, condition_comparison, default_t_grid, loss_accuracy_correlation};
use graffe::theory::suite::{
    conditioning_sweep, entropy_sweep, infomax_checks, information_sweep, minimum_loss_sweep, SuiteConfig,
};
use graffe::theory::BoundReport;
use graffe::trainer::{Checkpoint, Trainer};
use graffe::{Dataset, Objective, TrainConfig};

use common::props::*;
use common::*;

const MIN_RHO: f64 = 0.5;
const CORA_TARGET: f64 = 78.0;
const MUTAG_TARGET: f64 = 85.0;
const MASK_GAIN: f64 = 0.5;

enum Verdict {
    Pass(String),
    Fail(String),
    /// Inputs are missing; reported as a failure without gating.
    Unavailable(String),
    /// Soft criterion missed.
    Warn(String),
}

struct Line {
    id: usize,
    name: &'static str,
    verdict: Verdict,
    elapsed: Duration,
}

impl Line {
    fn print(&self) {
        let (tag, detail) = match &self.verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => ("FAIL", d),
            Verdict::Unavailable(d) => ("FAIL", d),
            Verdict::Warn(d) => ("WARN", d),
        };
        println!("[{tag}] {:>2} {:<28} {detail} ({:.1} s)", self.id, self.name, self.elapsed.as_secs_f64());
    }

    fn gates(&self) -> bool {
        matches!(self.verdict, Verdict::Fail(_))
    }
}

/// Runs a criterion and fails it if it overran `budget`.
fn criterion(id: usize, name: &'static str, budget: Duration, run: impl FnOnce() -> Verdict) -> Line {
    let start = Instant::now();
    let mut verdict = run();
    let elapsed = start.elapsed();
    if elapsed > budget {
        if let Verdict::Pass(d) = verdict {
            verdict = Verdict::Fail(format!("{d}; over budget of {} s", budget.as_secs()));
        }
    }
    let line = Line { id, name, verdict, elapsed };
    line.print();
    line
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn first_failure(reports: &[BoundReport]) -> String {
    reports.iter().find(|r| !r.pass).map_or_else(String::new, |r| {
        format!("; first failure {}: left {:.6e} right {:.6e} slack {:.3e}", r.check, r.left, r.right, r.slack)
    })
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn data_dir(name: &str) -> Result<PathBuf, Verdict> {
    let Some(root) = std::env::var_os("GRAFFE_DATA_DIR") else {
        return Err(Verdict::Unavailable("dataset not available: GRAFFE_DATA_DIR is not set".into()));
    };
    let dir = PathBuf::from(root).join(name);
    if dir.is_dir() {
        Ok(dir)
    } else {
        Err(Verdict::Unavailable(format!("dataset not available: {} does not exist", dir.display())))
    }
}

fn cora_config(dir: &PathBuf) -> TrainConfig {
    let mut cfg = TrainConfig::node_defaults();
    cfg.data.path = Some(dir.clone());
    cfg
}

fn load(cfg: &TrainConfig) -> Result<Dataset, Verdict> {
    Dataset::load(&cfg.data).map_err(|e| Verdict::Fail(format!("could not load {:?}: {e}", cfg.data.path)))
}

fn minimum_loss() -> Verdict {
    let reports = match minimum_loss_sweep(&SuiteConfig::default()) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let role = |r: &BoundReport, trained: f64| r.diagnostics.get("trained") == Some(&trained);
    let pm: Vec<&BoundReport> = reports.iter().filter(|r| role(r, 0.0)).collect();
    let mlp: Vec<&BoundReport> = reports.iter().filter(|r| role(r, 1.0)).collect();
    let worst_pm = pm.iter().map(|r| (r.left / r.right - 1.0).abs()).fold(0.0, f64::max);
    let ratios = mlp.iter().map(|r| r.left / r.right);
    let (lo, hi) = ratios.fold((f64::INFINITY, 0.0f64), |(lo, hi), q| (lo.min(q), hi.max(q)));
    let ok = reports.iter().all(|r| r.pass) && pm.len() >= 30 && mlp.len() == pm.len();
    verdict(
        ok,
        format!(
            "{} posterior-mean cases, worst rel {worst_pm:.2e}; {} trained, loss/oracle in [{lo:.4}, {hi:.4}]{}",
            pm.len(),
            mlp.len(),
            first_failure(&reports)
        ),
    )
}

fn conditioning() -> Verdict {
    let reports = match conditioning_sweep(&SuiteConfig::default()) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let nontrivial: Vec<&BoundReport> = reports.iter().filter(|r| r.diagnostics["nontrivial"] == 1.0).collect();
    let min_slack = reports.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min);
    let strict = nontrivial.iter().all(|r| r.slack > 0.0);
    let ok = reports.len() >= 100 && reports.iter().all(|r| r.pass && r.slack >= -1e-10) && strict;
    verdict(
        ok,
        format!(
            "{} cases, {} nontrivial, min slack {min_slack:.3e}{}",
            reports.len(),
            nontrivial.len(),
            first_failure(&reports)
        ),
    )
}

fn information() -> Verdict {
    let reports = match information_sweep(&SuiteConfig::default()) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let worst = reports.iter().map(|r| r.diagnostics["identity_error"]).fold(0.0, f64::max);
    let ok = reports.len() >= 36 && reports.iter().all(|r| r.pass && r.slack >= 0.0) && worst <= 1e-9;
    verdict(ok, format!("{} grid points, worst identity error {worst:.2e}", reports.len()))
}

fn entropy() -> Verdict {
    let reports = match entropy_sweep(&SuiteConfig::default()) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let (random, iso) = reports.split_at(reports.len() - 5);
    let worst_iso = iso.iter().map(|r| r.diagnostics["gap"].abs()).fold(0.0, f64::max);
    let ok = random.len() >= 100 && reports.iter().all(|r| r.pass) && worst_iso <= 1e-12;
    verdict(
        ok,
        format!("{} random covariances, isotropic gap {worst_iso:.2e}{}", random.len(), first_failure(&reports)),
    )
}

fn infomax() -> Verdict {
    match infomax_checks() {
        Ok(r) => {
            let (exact, near) = (r[0].diagnostics["difference"], r[1].diagnostics["difference"]);
            verdict(
                r.len() == 2 && r.iter().all(|r| r.pass) && exact == 0.0,
                format!("difference {exact:.2e} at alpha_T = 0, {near:.2e} at alpha_T = 0.01"),
            )
        }
        Err(e) => Verdict::Fail(e.to_string()),
    }
}

fn gradients() -> Verdict {
    let errors = [
        ("gat", gat_error()),
        ("gin", gin_error()),
        ("unet mlp", unet_block_error(LayerKind::Mlp, FusionKind::Sum)),
        ("unet gnn", unet_block_error(LayerKind::Gnn, FusionKind::Adanorm)),
        ("adanorm", adanorm_error()),
        ("time", time_embedding_error()),
        ("model gat", model_error(&model_config("gat", "mlp", "sum"))),
        ("model gin", model_error(&model_config("gin", "gnn", "adanorm"))),
    ];
    let (name, worst) = errors.iter().copied().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    verdict(worst <= FD_TOL, format!("{} layers, worst {name} {worst:.2e}", errors.len()))
}

fn condition_ordering() -> Verdict {
    let dir = match data_dir("cora") {
        Ok(d) => d,
        Err(v) => return v,
    };
    let cfg = cora_config(&dir);
    let Dataset::Node(graph) = (match load(&cfg) {
        Ok(d) => d,
        Err(v) => return v,
    }) else {
        return Verdict::Fail("cora is not a node dataset".into());
    };
    let grid = match Objective::from_config(&cfg) {
        Ok(o) => default_t_grid(&o.schedule),
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    match condition_comparison::<f32>(&cfg, &graph, &grid, 3) {
        Ok(curves) => {
            let (v, l, r) = curves.means();
            verdict(curves.ordered(), format!("representation {r:.5} label {l:.5} vanilla {v:.5}"))
        }
        Err(e) => Verdict::Fail(e.to_string()),
    }
}

/// Trains on Cora with checkpoints every tenth of the run. Returns the probe
/// accuracy of the final model and the checkpoints.
fn cora_run(cfg: &TrainConfig, data: &Dataset) -> graffe::Result<(f64, Vec<Checkpoint<f32>>)> {
    let Dataset::Node(graph) = data else {
        return Err(graffe::Error::Config("cora is not a node dataset".into()));
    };
    let mut trainer = Trainer::<f32>::new(cfg.clone(), data)?;
    let mut checkpoints = Vec::new();
    trainer.train(|ck| {
        checkpoints.push(ck.clone());
        Ok(())
    })?;
    let z = embed(&trainer.model, data)?;
    let report = linear_probe_node(&z, graph, &ProbeConfig::default())?;
    Ok((report.mean, checkpoints))
}

fn main() {
    let lines_theory = [
        criterion(1, "minimum loss", minutes(5), minimum_loss),
        criterion(2, "conditioning", minutes(1), conditioning),
        criterion(3, "conditional information", Duration::from_secs(1), information),
        criterion(4, "maximum entropy", Duration::from_secs(1), entropy),
        criterion(5, "infomax limit", Duration::from_secs(1), infomax),
        criterion(6, "gradient soundness", minutes(5), gradients),
        criterion(7, "condition ordering", minutes(90), condition_ordering),
    ];

    let cora = data_dir("cora").map(|d| cora_config(&d)).and_then(|cfg| load(&cfg).map(|data| (cfg, data)));
    let mut run = None;
    let l9 = criterion(9, "cora probe", minutes(30), || {
        let (cfg, data) = match &cora {
            Ok(c) => c,
            Err(Verdict::Unavailable(d)) => return Verdict::Unavailable(d.clone()),
            Err(_) => return Verdict::Fail("could not load cora".into()),
        };
        let mut cfg = cfg.clone();
        cfg.trainer.checkpoint_every = (cfg.trainer.epochs / 10).max(1);
        match cora_run(&cfg, data) {
            Ok((acc, cks)) => {
                run = Some(cks);
                verdict(acc >= CORA_TARGET, format!("mean accuracy {acc:.2} over 20 seeds, target {CORA_TARGET}"))
            }
            Err(e) => Verdict::Fail(e.to_string()),
        }
    });
    let l8 = criterion(8, "loss-accuracy correlation", minutes(30), || {
        let (Ok((_, Dataset::Node(graph))), Some(cks)) = (&cora, &run) else {
            return Verdict::Unavailable("dataset not available: needs the cora run".into());
        };
        match checkpoint_series(cks, graph, &ProbeConfig::default(), 3) {
            Ok(points) => {
                let report = loss_accuracy_correlation(&points);
                let ok = points.len() >= 10 && report.rho.is_some_and(|r| r > MIN_RHO);
                verdict(ok, format!("spearman {:?} over {} checkpoints", report.rho, points.len()))
            }
            Err(e) => Verdict::Fail(e.to_string()),
        }
    });

    let l10 = criterion(10, "mutag probe", minutes(15), || {
        let dir = match data_dir("mutag") {
            Ok(d) => d,
            Err(v) => return v,
        };
        let mut cfg = TrainConfig::graph_defaults();
        cfg.data.path = Some(dir);
        let data = match load(&cfg) {
            Ok(d) => d,
            Err(v) => return v,
        };
        let result = (|| {
            let Dataset::Graphs(graphs) = &data else {
                return Err(graffe::Error::Config("mutag is not a graph dataset".into()));
            };
            let labels: Vec<usize> = graphs.iter().map(|g| g.graph_label.unwrap_or(0)).collect();
            let mut trainer = Trainer::<f32>::new(cfg.clone(), &data)?;
            trainer.train(|_| Ok(()))?;
            let z = embed(&trainer.model, &data)?;
            cv_probe_graph(&z, &labels, &ProbeConfig::default())
        })();
        match result {
            Ok(r) => verdict(
                r.mean >= MUTAG_TARGET,
                format!("mean accuracy {:.2} over 10 folds x 5 runs, target {MUTAG_TARGET}", r.mean),
            ),
            Err(e) => Verdict::Fail(e.to_string()),
        }
    });

    let l11 = criterion(11, "mask-ratio trend", Duration::MAX, || {
        let (cfg, data) = match &cora {
            Ok(c) => c,
            Err(Verdict::Unavailable(d)) => return Verdict::Unavailable(d.clone()),
            Err(_) => return Verdict::Fail("could not load cora".into()),
        };
        let mean_acc = |m: f64| -> graffe::Result<f64> {
            let mut total = 0.0;
            for seed in 0..3 {
                let mut c = cfg.clone();
                c.trainer.mask_ratio = m;
                c.trainer.seed = seed;
                total += cora_run(&c, data)?.0;
            }
            Ok(total / 3.0)
        };
        match mean_acc(0.7).and_then(|a| Ok((a, mean_acc(0.0)?))) {
            Ok((masked, plain)) => {
                let detail = format!("m=0.7 {masked:.2} vs m=0 {plain:.2} over 3 seeds");
                if masked - plain >= MASK_GAIN {
                    Verdict::Pass(detail)
                } else {
                    Verdict::Warn(detail)
                }
            }
            Err(e) => Verdict::Warn(e.to_string()),
        }
    });

    let l12 = criterion(12, "property suites", minutes(5), || {
        let runs = [
            ("node equivariance", run_deterministic(64, node_equivariance_inputs(), node_equivariance)),
            ("graph invariance", run_deterministic(64, graph_invariance_inputs(), graph_invariance)),
            ("decoder equivariance", run_deterministic(64, decoder_equivariance_inputs(), decoder_equivariance)),
            ("schedules", run_deterministic(64, schedule_inputs(), schedule_identities)),
            ("masking", run_deterministic(64, masking_inputs(), masking_statistics)),
            ("node io", run_deterministic(64, node_io_inputs(), node_io_round_trip)),
            ("graph io", run_deterministic(64, graph_io_inputs(), graph_io_round_trip)),
            ("resume", run_deterministic(16, resume_inputs(), resume_determinism)),
        ];
        let failed: Vec<String> =
            runs.iter().filter_map(|(name, r)| r.as_ref().err().map(|e| format!("{name}: {e}"))).collect();
        verdict(failed.is_empty(), format!("{} suites, {} failed {}", runs.len(), failed.len(), failed.join("; ")))
    });

    let all: Vec<&Line> = lines_theory.iter().chain([&l9, &l8, &l10, &l11, &l12]).collect();
    let gating: Vec<usize> = all.iter().filter(|l| l.gates()).map(|l| l.id).collect();
    let unavailable = all.iter().filter(|l| matches!(l.verdict, Verdict::Unavailable(_))).count();
    let passed = all.iter().filter(|l| matches!(l.verdict, Verdict::Pass(_))).count();
    println!("acceptance: {passed}/{} pass, {unavailable} without inputs, failing: {gating:?}", all.len());
    if !gating.is_empty() {
        std::process::exit(1);
    }
}
