use crate::nn::{Init, Linear, Result};
use crate::numeric::{Bound, ParamStore, RngState, Scalar, Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `h + Lin_t(t_emb) + Lin_z(z)`; both maps start at zero.
#[derive(Debug, Clone)]
pub struct FuseSum {
    pub t: Linear,
    pub z: Linear,
}

impl FuseSum {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        width: usize,
        t_dim: usize,
        z_dim: usize,
        rng: &mut RngState,
    ) -> Self {
        Self {
            t: Linear::new(store, &format!("{name}.t"), t_dim, width, true, Init::Zeros, rng),
            z: Linear::new(store, &format!("{name}.z"), z_dim, width, true, Init::Zeros, rng),
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, bound: &Bound, h: Var, t_emb: Var, z: Var) -> Result<Var> {
        let a = self.t.forward(tape, bound, t_emb)?;
        let b = self.z.forward(tape, bound, z)?;
        let h = tape.add(h, a)?;
        tape.add(h, b)
    }
}

/// `z_s * (t_s * LN(h) + t_b) + z_b` with `(t_s, t_b) = Lin(t_emb)` and
/// `(z_s, z_b) = Lin(z)`. Weights start at zero and scale biases at one, so
/// a fresh layer is a plain layer norm.
#[derive(Debug, Clone)]
pub struct AdaNorm {
    pub width: usize,
    pub t: Linear,
    pub z: Linear,
}

impl AdaNorm {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        width: usize,
        t_dim: usize,
        z_dim: usize,
        rng: &mut RngState,
    ) -> Self {
        let t = Linear::new(store, &format!("{name}.t"), t_dim, 2 * width, true, Init::Zeros, rng);
        let z = Linear::new(store, &format!("{name}.z"), z_dim, 2 * width, true, Init::Zeros, rng);
        for lin in [&t, &z] {
            let b = store.value_mut(lin.b.expect("bias"));
            *b = Tensor::from_fn(1, 2 * width, |_, c| if c < width { S::one() } else { S::zero() });
        }
        Self { width, t, z }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, bound: &Bound, h: Var, t_emb: Var, z: Var) -> Result<Var> {
        let w = self.width;
        let tp = self.t.forward(tape, bound, t_emb)?;
        let zp = self.z.forward(tape, bound, z)?;
        let ts = tape.slice_cols(tp, 0, w)?;
        let tb = tape.slice_cols(tp, w, 2 * w)?;
        let zs = tape.slice_cols(zp, 0, w)?;
        let zb = tape.slice_cols(zp, w, 2 * w)?;
        let ln = tape.layer_norm(h, LAYER_NORM_EPS);
        let inner = tape.mul(ts, ln)?;
        let inner = tape.add(inner, tb)?;
        let out = tape.mul(zs, inner)?;
        tape.add(out, zb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer_norm_rows(h: &Tensor<f64>) -> Tensor<f64> {
        let mut out = h.clone();
        for r in 0..h.rows() {
            let row = h.row(r);
            let n = row.len() as f64;
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            for (o, v) in out.row_mut(r).iter_mut().zip(row) {
                *o = (v - mu) / (var + LAYER_NORM_EPS).sqrt();
            }
        }
        out
    }

    #[test]
    fn fresh_fuse_sum_is_identity() {
        let mut rng = RngState::new(1);
        let mut store = ParamStore::<f64>::new();
        let f = FuseSum::new(&mut store, "f", 4, 6, 3, &mut rng);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let h = tape.constant(rng.normal_tensor(5, 4));
        let t = tape.constant(rng.normal_tensor(5, 6));
        let z = tape.constant(rng.normal_tensor(5, 3));
        let out = f.forward(&mut tape, &b, h, t, z).unwrap();
        assert_eq!(tape.value(out), tape.value(h));
    }

    #[test]
    fn fuse_sum_with_zero_z_and_zero_bias_adds_only_time() {
        let mut rng = RngState::new(2);
        let mut store = ParamStore::<f64>::new();
        let f = FuseSum::new(&mut store, "f", 4, 6, 3, &mut rng);
        *store.value_mut(f.t.w) = rng.normal_tensor(6, 4);
        *store.value_mut(f.z.w) = rng.normal_tensor(3, 4);
        let (h0, t0) = (rng.normal_tensor::<f64>(5, 4), rng.normal_tensor::<f64>(5, 6));
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let h = tape.constant(h0.clone());
        let t = tape.constant(t0.clone());
        let z = tape.constant(Tensor::zeros(5, 3));
        let out = f.forward(&mut tape, &b, h, t, z).unwrap();
        let mut want = h0;
        want.add_assign(&t0.matmul(store.value(f.t.w)).unwrap());
        assert!(tape.value(out).max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn fresh_ada_norm_is_layer_norm() {
        let mut rng = RngState::new(3);
        let mut store = ParamStore::<f64>::new();
        let a = AdaNorm::new(&mut store, "a", 5, 4, 2, &mut rng);
        let h0 = rng.normal_tensor::<f64>(3, 5);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let h = tape.constant(h0.clone());
        let t = tape.constant(rng.normal_tensor(3, 4));
        let z = tape.constant(rng.normal_tensor(3, 2));
        let out = a.forward(&mut tape, &b, h, t, z).unwrap();
        assert!(tape.value(out).max_abs_diff(&layer_norm_rows(&h0)) < 1e-12);
    }

    #[test]
    fn zero_z_scale_returns_z_shift() {
        let mut rng = RngState::new(4);
        let mut store = ParamStore::<f64>::new();
        let a = AdaNorm::new(&mut store, "a", 3, 4, 2, &mut rng);
        *store.value_mut(a.t.w) = rng.normal_tensor(4, 6);
        let zb = store.value_mut(a.z.b.unwrap());
        *zb = Tensor::from_f64(1, 6, &[0.0, 0.0, 0.0, 0.5, -1.0, 2.0]).unwrap();
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let h = tape.constant(rng.normal_tensor(2, 3));
        let t = tape.constant(rng.normal_tensor(2, 4));
        let z = tape.constant(rng.normal_tensor(2, 2));
        let out = a.forward(&mut tape, &b, h, t, z).unwrap();
        for r in 0..2 {
            assert_eq!(tape.value(out).row(r), &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn random_ada_norm_matches_direct_recomputation() {
        let mut rng = RngState::new(5);
        let mut store = ParamStore::<f64>::new();
        let a = AdaNorm::new(&mut store, "a", 4, 3, 2, &mut rng);
        for id in [a.t.w, a.t.b.unwrap(), a.z.w, a.z.b.unwrap()] {
            let [r, c] = store.value(id).shape();
            *store.value_mut(id) = rng.normal_tensor(r, c);
        }
        let (h0, t0, z0) =
            (rng.normal_tensor::<f64>(3, 4), rng.normal_tensor::<f64>(3, 3), rng.normal_tensor::<f64>(3, 2));
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let (h, t, z) = (tape.constant(h0.clone()), tape.constant(t0.clone()), tape.constant(z0.clone()));
        let out = a.forward(&mut tape, &b, h, t, z).unwrap();

        let affine = |x: &Tensor<f64>, w, bias| {
            let mut y = x.matmul(store.value(w)).unwrap();
            let bias: &Tensor<f64> = store.value(bias);
            for r in 0..y.rows() {
                for (v, b) in y.row_mut(r).iter_mut().zip(bias.row(0)) {
                    *v += b;
                }
            }
            y
        };
        let tp = affine(&t0, a.t.w, a.t.b.unwrap());
        let zp = affine(&z0, a.z.w, a.z.b.unwrap());
        let ln = layer_norm_rows(&h0);
        let want = Tensor::from_fn(3, 4, |r, c| {
            zp.get(r, c) * (tp.get(r, c) * ln.get(r, c) + tp.get(r, c + 4)) + zp.get(r, c + 4)
        });
        assert!(tape.value(out).max_abs_diff(&want) < 1e-12);
    }
}
