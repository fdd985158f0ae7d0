//! Property bodies and input strategies, shared by the property suite and
//! the acceptance run.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use graffe::diffusion::{NoiseSchedule, ScheduleKind};
use graffe::evaluator::embed;
use graffe::graph::{
    mask_nodes, random_graph, read_graph_dataset, read_node_dataset, write_graph_dataset, write_node_dataset, Graph,
    Split,
};
use graffe::nn::Structure;
use graffe::numeric::{RngState, Tape, Tensor};
use graffe::trainer::{build_stores, Checkpoint, Trainer};
use graffe::{Dataset, Graffe, TrainConfig};

type Check = Result<(), TestCaseError>;

pub fn random_node_graph(n: usize, d: usize, p: f64, classes: usize, seed: u64) -> Graph {
    let mut rng = RngState::new(seed);
    let adj = random_graph(n, p, &mut rng);
    let mut g = Graph::new(rng.normal_tensor(n, d), adj);
    g.node_labels = Some((0..n).map(|i| i % classes).collect());
    g.split = Some(
        (0..n)
            .map(|i| match i % 4 {
                0 => Some(Split::Train),
                1 => Some(Split::Val),
                2 => Some(Split::Test),
                _ => None,
            })
            .collect(),
    );
    g
}

fn labelled_graphs(sizes: &[usize], d: usize, seed: u64) -> Vec<Graph> {
    sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let mut g = random_node_graph(n, d, 0.4, 1, seed * 31 + i as u64);
            g.node_labels = None;
            g.split = None;
            g.graph_label = Some(i % 3);
            g
        })
        .collect()
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    RngState::new(seed).shuffle(&mut perm);
    perm
}

fn inverse(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &q) in perm.iter().enumerate() {
        inv[q] = i;
    }
    inv
}

fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn model_config(encoder: &str, layer: &str, fusion: &str, task: &str) -> TrainConfig {
    TrainConfig::from_json(&format!(
        r#"{{"data": {{"task": "{task}"}},
            "encoder": {{"kind": "{encoder}", "hidden": 8, "heads": 2}},
            "decoder": {{"hidden": 8, "depth": 1, "time_dim": 4, "layer": "{layer}", "fusion": "{fusion}"}},
            "diffusion": {{"steps": 100}}}}"#
    ))
    .unwrap()
}

pub fn node_equivariance_inputs() -> impl Strategy<Value = (usize, f64, u64, bool)> {
    (2usize..30, 0.0f64..0.5, 0u64..1000, any::<bool>())
}

/// Relabelling nodes permutes the rows of the node embeddings.
pub fn node_equivariance((n, p, seed, gin): (usize, f64, u64, bool)) -> Check {
    let g = random_node_graph(n, 5, p, 3, seed);
    let cfg =
        if gin { model_config("gin", "gnn", "adanorm", "node") } else { model_config("gat", "mlp", "sum", "node") };
    let model = Graffe::<f64>::new(&cfg, 5, 3, &mut RngState::new(seed + 1)).unwrap();
    let perm = permutation(n, seed + 2);
    let z = embed(&model, &Dataset::Node(g.clone())).unwrap();
    let zp = embed(&model, &Dataset::Node(g.permuted(&perm))).unwrap();
    prop_assert!(max_abs_diff(&z.select_rows(&inverse(&perm)), &zp) < 1e-12);
    Ok(())
}

pub fn graph_invariance_inputs() -> impl Strategy<Value = (Vec<usize>, u64)> {
    (prop::collection::vec(1usize..12, 1..6), 0u64..1000)
}

/// Graph readouts do not depend on node order.
pub fn graph_invariance((sizes, seed): (Vec<usize>, u64)) -> Check {
    let graphs = labelled_graphs(&sizes, 4, seed);
    let permuted: Vec<Graph> =
        graphs.iter().enumerate().map(|(i, g)| g.permuted(&permutation(g.n(), seed + i as u64))).collect();
    let cfg = model_config("gin", "gnn", "adanorm", "graph");
    let model = Graffe::<f64>::new(&cfg, 4, 3, &mut RngState::new(seed)).unwrap();
    let z = embed(&model, &Dataset::Graphs(graphs)).unwrap();
    let zp = embed(&model, &Dataset::Graphs(permuted)).unwrap();
    prop_assert!(max_abs_diff(&z, &zp) < 1e-10);
    Ok(())
}

pub fn decoder_equivariance_inputs() -> impl Strategy<Value = (usize, u64)> {
    (2usize..25, 0u64..1000)
}

/// The message-passing decoder commutes with node relabelling.
pub fn decoder_equivariance((n, seed): (usize, u64)) -> Check {
    let g = random_node_graph(n, 4, 0.3, 2, seed);
    let cfg = model_config("gin", "gnn", "adanorm", "node");
    let mut rng = RngState::new(seed);
    let model = Graffe::<f64>::new(&cfg, 4, 2, &mut rng).unwrap();
    let xt = rng.normal_tensor::<f64>(n, 4);
    let z = rng.normal_tensor::<f64>(n, 8);
    let t: Vec<usize> = (0..n).map(|i| 1 + (i * 37) % 100).collect();
    let run = |g: &Graph, xt: &Tensor<f64>, z: &Tensor<f64>, t: &[usize]| {
        let mut tape = Tape::new();
        let b = model.dec.bind_frozen(&mut tape);
        let (x, zv) = (tape.constant(xt.clone()), tape.constant(z.clone()));
        let out = model.decoder.forward(&mut tape, &b, &Structure::from_graph(g), x, t, zv).unwrap();
        tape.value(out).clone()
    };
    let perm = permutation(n, seed + 9);
    let inv = inverse(&perm);
    let tp: Vec<usize> = inv.iter().map(|&i| t[i]).collect();
    let out = run(&g, &xt, &z, &t);
    let outp = run(&g.permuted(&perm), &xt.select_rows(&inv), &z.select_rows(&inv), &tp);
    prop_assert!(max_abs_diff(&out.select_rows(&inv), &outp) < 1e-12);
    Ok(())
}

pub fn schedule_inputs() -> impl Strategy<Value = (usize, usize)> {
    (0usize..4, 10usize..2000)
}

pub fn schedule_identities((kind_idx, steps): (usize, usize)) -> Check {
    let kind = ScheduleKind::ALL[kind_idx];
    let s = NoiseSchedule::new(kind, steps).unwrap();
    for t in 1..=steps {
        prop_assert!((s.alpha(t).powi(2) + s.sigma(t).powi(2) - 1.0).abs() <= 1e-12);
        prop_assert!((s.alpha_bar(t) - s.alpha(t).powi(2)).abs() <= 1e-12);
    }
    prop_assert!(s.alphas().windows(2).all(|w| w[1] < w[0]));
    prop_assert!(s.alpha(steps) <= 0.05, "{kind} {steps}: {}", s.alpha(steps));
    prop_assert!(s.alpha(1) >= 0.99, "{kind} {steps}: {}", s.alpha(1));
    Ok(())
}

pub fn masking_inputs() -> impl Strategy<Value = (f64, u64)> {
    (0.0f64..=1.0, 0u64..1000)
}

/// Whole rows are zeroed, kept rows are untouched, and the kept fraction is
/// within five binomial standard deviations of `1 - m`.
pub fn masking_statistics((m, seed): (f64, u64)) -> Check {
    let x = RngState::new(seed).normal_tensor::<f64>(4000, 3);
    let (y, rec) = mask_nodes(&x, m, &mut RngState::new(seed + 1));
    for r in 0..x.rows() {
        if rec.keep[r] {
            prop_assert_eq!(y.row(r), x.row(r));
        } else {
            prop_assert!(y.row(r).iter().all(|&v| v == 0.0));
        }
    }
    let sd = (m * (1.0 - m) / 4000.0).sqrt();
    prop_assert!((rec.kept_fraction() - (1.0 - m)).abs() <= 5.0 * sd + 1e-12);
    let (y2, rec2) = mask_nodes(&x, m, &mut RngState::new(seed + 1));
    prop_assert_eq!(y2, y);
    prop_assert_eq!(rec2, rec);
    Ok(())
}

pub fn node_io_inputs() -> impl Strategy<Value = (usize, usize, f64, u64)> {
    (3usize..40, 1usize..6, 0.0f64..0.4, 0u64..1000)
}

pub fn node_io_round_trip((n, d, p, seed): (usize, usize, f64, u64)) -> Check {
    let g = random_node_graph(n, d, p, 3, seed);
    let dir = tempfile::tempdir().unwrap();
    write_node_dataset(&g, dir.path()).unwrap();
    prop_assert_eq!(read_node_dataset(dir.path()).unwrap(), g);
    Ok(())
}

pub fn graph_io_inputs() -> impl Strategy<Value = (Vec<usize>, u64)> {
    (prop::collection::vec(1usize..10, 1..8), 0u64..1000)
}

/// The graph format carries structure and labels only; features come back
/// empty.
pub fn graph_io_round_trip((sizes, seed): (Vec<usize>, u64)) -> Check {
    let graphs = labelled_graphs(&sizes, 3, seed);
    let dir = tempfile::tempdir().unwrap();
    write_graph_dataset(&graphs, dir.path()).unwrap();
    let back = read_graph_dataset(dir.path()).unwrap();
    prop_assert_eq!(back.len(), graphs.len());
    for (a, b) in back.iter().zip(&graphs) {
        prop_assert_eq!(a.x.shape(), [b.n(), 0]);
        prop_assert_eq!(&a.adj, &b.adj);
        prop_assert_eq!(a.graph_label, b.graph_label);
    }
    Ok(())
}

pub fn resume_inputs() -> impl Strategy<Value = (usize, u64)> {
    (0usize..4, 0u64..100)
}

/// Pausing, saving, loading and resuming gives the uninterrupted checkpoint
/// byte for byte.
pub fn resume_determinism((pause, seed): (usize, u64)) -> Check {
    let data = Dataset::Node(random_node_graph(20, 4, 0.2, 2, seed));
    let mut cfg = model_config("gat", "mlp", "sum", "node");
    cfg.trainer.epochs = 4;
    cfg.trainer.seed = seed;
    cfg.trainer.lr_decoder = 1e-3;
    let mut full = Trainer::<f32>::new(cfg.clone(), &data).unwrap();
    full.train(|_| Ok(())).unwrap();
    let mut first = Trainer::<f32>::new(cfg, &data).unwrap();
    for _ in 0..pause {
        first.run_epoch().unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pause.bin");
    first.checkpoint().save(&path).unwrap();
    let ck = Checkpoint::<f32>::load(&path, build_stores::<f32>).unwrap();
    let mut resumed = Trainer::<f32>::resume(ck, &data).unwrap();
    resumed.train(|_| Ok(())).unwrap();
    prop_assert_eq!(resumed.checkpoint().to_bytes(), full.checkpoint().to_bytes());
    Ok(())
}

/// Runs one property over `cases` inputs from a fixed-seed generator.
pub fn run_deterministic<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Check) -> Result<(), String> {
    let rng = TestRng::deterministic_rng(RngAlgorithm::ChaCha);
    let mut runner = TestRunner::new_with_rng(Config { cases, failure_persistence: None, ..Config::default() }, rng);
    runner.run(&strategy, test).map_err(|e| e.to_string())
}
