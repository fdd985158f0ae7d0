//! Fixtures shared by the integration test targets.

#![allow(dead_code)]

pub mod props;

use graffe::decoder::{AdaNorm, Decoder, DecoderConfig, FusionKind, LayerKind, TimeEmbedding};
use graffe::encoder::{GatLayer, GinLayer};
use graffe::graph::{Graph, PlantedPartition};
use graffe::nn::Structure;
use graffe::numeric::{finite_diff_check_store, ParamStore, RngState, Tape, Tensor, Var};
use graffe::{Graffe, Objective, Sample, TrainConfig};

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-4;

pub fn small_graph(seed: u64) -> Graph {
    let cfg = PlantedPartition {
        n: 9,
        d: 4,
        p_in: 0.5,
        p_out: 0.1,
        train_per_class: 1,
        val_per_class: 1,
        ..Default::default()
    };
    cfg.generate(&mut RngState::new(seed))
}

/// Moves every parameter off its initial value so zero-initialized maps
/// carry gradient signal through the rest of the layer.
fn perturb(store: &mut ParamStore<f64>, rng: &mut RngState) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let v = store.value_mut(id);
        for x in v.data_mut() {
            *x += rng.uniform() - 0.5;
        }
    }
}

/// `sum(out * w)` for a fixed random `w`, so every output entry matters.
fn project(tape: &mut Tape<f64>, out: Var, rng: &mut RngState) -> graffe::nn::Result<Var> {
    let [r, c] = tape.value(out).shape();
    let w = tape.constant(rng.normal_tensor(r, c));
    let p = tape.mul(out, w)?;
    Ok(tape.sum_all(p))
}

fn layer_error(
    build: impl FnOnce(
        &mut ParamStore<f64>,
        &mut RngState,
    ) -> Box<dyn Fn(&mut Tape<f64>, &graffe::numeric::Bound) -> graffe::nn::Result<Var>>,
) -> f64 {
    let mut rng = RngState::new(17);
    let mut store = ParamStore::new();
    let forward = build(&mut store, &mut rng);
    perturb(&mut store, &mut rng);
    let w_rng = rng.fork(99);
    finite_diff_check_store(
        &store,
        |tape, b| {
            let out = forward(tape, b)?;
            project(tape, out, &mut w_rng.clone())
        },
        FD_STEP,
    )
    .expect("finite differences are finite")
}

pub fn gat_error() -> f64 {
    let g = small_graph(1);
    layer_error(|store, rng| {
        let layer = GatLayer::new(store, "gat", 4, 3, 2, true, 0.2, rng);
        let s = Structure::from_graph(&g);
        let x = g.x.clone();
        Box::new(move |tape, b| {
            let h = tape.constant(x.clone());
            layer.forward(tape, b, &s, h, 0.0, &mut RngState::new(0))
        })
    })
}

pub fn gin_error() -> f64 {
    let g = small_graph(2);
    layer_error(|store, rng| {
        let layer = GinLayer::new(store, "gin", 4, 6, 3, rng);
        let s = Structure::from_graph(&g);
        let x = g.x.clone();
        Box::new(move |tape, b| {
            let h = tape.constant(x.clone());
            layer.forward(tape, b, &s, h)
        })
    })
}

fn decoder_config(layer: LayerKind, fusion: FusionKind) -> DecoderConfig {
    DecoderConfig { depth: 1, hidden: 8, layer, fusion, time_dim: 4 }
}

/// One contracting block of the decoder, with its fusion and map.
pub fn unet_block_error(layer: LayerKind, fusion: FusionKind) -> f64 {
    let g = small_graph(3);
    layer_error(|store, rng| {
        let dec = Decoder::new(&decoder_config(layer, fusion), 4, 5, store, rng).unwrap();
        let s = Structure::from_graph(&g);
        let h0 = rng.normal_tensor::<f64>(g.n(), 8);
        let t_emb = rng.normal_tensor::<f64>(g.n(), 4);
        let z = rng.normal_tensor::<f64>(g.n(), 5);
        Box::new(move |tape, b| {
            let h = tape.constant(h0.clone());
            let te = tape.constant(t_emb.clone());
            let zv = tape.constant(z.clone());
            dec.down[0].forward(tape, b, &s, h, te, zv)
        })
    })
}

pub fn adanorm_error() -> f64 {
    layer_error(|store, rng| {
        let norm = AdaNorm::new(store, "ada", 6, 4, 5, rng);
        let h0 = rng.normal_tensor::<f64>(7, 6);
        let t_emb = rng.normal_tensor::<f64>(7, 4);
        let z = rng.normal_tensor::<f64>(7, 5);
        Box::new(move |tape, b| {
            let h = tape.constant(h0.clone());
            let te = tape.constant(t_emb.clone());
            let zv = tape.constant(z.clone());
            norm.forward(tape, b, h, te, zv)
        })
    })
}

pub fn time_embedding_error() -> f64 {
    layer_error(|store, rng| {
        let emb = TimeEmbedding::new(store, "time", 8, rng);
        Box::new(move |tape, b| emb.forward(tape, b, &[1, 17, 250, 999]))
    })
}

pub fn model_config(encoder: &str, decoder_layer: &str, fusion: &str) -> TrainConfig {
    TrainConfig::from_json(&format!(
        r#"{{"encoder": {{"kind": "{encoder}", "hidden": 6, "heads": 2, "feat_drop": 0.2, "att_drop": 0.1}},
            "decoder": {{"hidden": 8, "depth": 1, "time_dim": 4, "layer": "{decoder_layer}", "fusion": "{fusion}"}},
            "diffusion": {{"steps": 100}}}}"#
    ))
    .unwrap()
}

/// Worst relative error over every encoder and decoder parameter of a full
/// training loss, with masking, dropout, timesteps and noise held fixed.
pub fn model_error(cfg: &TrainConfig) -> f64 {
    let g = small_graph(4);
    let mut rng = RngState::new(23);
    let mut model = Graffe::<f64>::new(cfg, 4, 3, &mut rng).unwrap();
    perturb(&mut model.enc, &mut rng);
    perturb(&mut model.dec, &mut rng);
    let sample = Sample::<f64>::from_graph(&g);
    let objective = Objective::from_config(cfg).unwrap();
    let pass_rng = rng.fork(5);
    let eval = |m: &Graffe<f64>| -> f64 {
        let mut tape = Tape::new();
        let pass = m.loss(&mut tape, &sample, &objective, None, true, 0.5, &mut pass_rng.clone()).unwrap();
        tape.value(pass.loss).item()
    };
    let mut tape = Tape::new();
    let pass = model.loss(&mut tape, &sample, &objective, None, true, 0.5, &mut pass_rng.clone()).unwrap();
    tape.backward(pass.loss).unwrap();
    let grads = |vars: &[Var]| -> Vec<Option<Tensor<f64>>> { vars.iter().map(|&v| tape.grad(v).cloned()).collect() };
    let analytic = [grads(pass.enc.vars()), grads(pass.dec.vars())];
    let mut worst = 0.0f64;
    for (which, grads) in analytic.iter().enumerate() {
        let store = if which == 0 { &model.enc } else { &model.dec };
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            for k in 0..store.value(id).len() {
                let mut probe = model.clone();
                let target = if which == 0 { &mut probe.enc } else { &mut probe.dec };
                let orig = target.value(id).data()[k];
                target.value_mut(id).data_mut()[k] = orig + FD_STEP;
                let fp = eval(&probe);
                let target = if which == 0 { &mut probe.enc } else { &mut probe.dec };
                target.value_mut(id).data_mut()[k] = orig - FD_STEP;
                let fm = eval(&probe);
                let numeric = (fp - fm) / (2.0 * FD_STEP);
                let a = grads[id.index()].as_ref().map_or(0.0, |g| g.data()[k]);
                worst = worst.max((a - numeric).abs() / (numeric.abs() + 1e-12));
            }
        }
    }
    worst
}
