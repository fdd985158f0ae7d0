//! Central finite-difference gradient checks at 64-bit precision.

use super::params::{Bound, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::{NumericError, Result};

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (numeric.abs() + 1e-12)
}

fn eval(f: &mut impl FnMut(&mut Tape<f64>, Var) -> Result<Var>, theta: &Tensor<f64>) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.leaf(theta.clone());
    let y = f(&mut tape, x)?;
    Ok(tape.value(y).item())
}

/// Max over coordinates of `|analytic - central| / (|central| + 1e-12)`.
pub fn finite_diff_check(
    mut f: impl FnMut(&mut Tape<f64>, Var) -> Result<Var>,
    theta: &Tensor<f64>,
    step: f64,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(NumericError::Invalid(format!("step must be positive, got {step}")));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(theta.clone());
    let y = f(&mut tape, x)?;
    tape.backward(y)?;
    let analytic = tape.grad(x).cloned().unwrap_or_else(|| Tensor::zeros(theta.rows(), theta.cols()));
    let mut worst = 0.0f64;
    let mut probe = theta.clone();
    for k in 0..theta.len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + step;
        let fp = eval(&mut f, &probe)?;
        probe.data_mut()[k] = orig - step;
        let fm = eval(&mut f, &probe)?;
        probe.data_mut()[k] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(NumericError::NonFiniteObjective(k));
        }
        worst = worst.max(rel_err(analytic.data()[k], (fp - fm) / (2.0 * step)));
    }
    Ok(worst)
}

/// As [`finite_diff_check`] over every coordinate of every parameter in a store.
pub fn finite_diff_check_store(
    store: &ParamStore<f64>,
    mut f: impl FnMut(&mut Tape<f64>, &Bound) -> Result<Var>,
    step: f64,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(NumericError::Invalid(format!("step must be positive, got {step}")));
    }
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let y = f(&mut tape, &bound)?;
    tape.backward(y)?;
    let analytic: Vec<Option<Tensor<f64>>> = bound.vars().iter().map(|&v| tape.grad(v).cloned()).collect();

    let mut probe = store.clone();
    let mut eval_store = |s: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let b = s.bind(&mut tape);
        let y = f(&mut tape, &b)?;
        Ok(tape.value(y).item())
    };
    let mut worst = 0.0f64;
    let mut coord = 0;
    for id in store.ids() {
        for k in 0..store.value(id).len() {
            let orig = probe.value(id).data()[k];
            probe.value_mut(id).data_mut()[k] = orig + step;
            let fp = eval_store(&probe)?;
            probe.value_mut(id).data_mut()[k] = orig - step;
            let fm = eval_store(&probe)?;
            probe.value_mut(id).data_mut()[k] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(NumericError::NonFiniteObjective(coord));
            }
            let a = analytic[id.index()].as_ref().map_or(0.0, |g| g.data()[k]);
            worst = worst.max(rel_err(a, (fp - fm) / (2.0 * step)));
            coord += 1;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngState;

    #[test]
    fn quadratic_form_is_exact() {
        let a = Tensor::from_f64(3, 3, &[2.0, 0.5, 0.0, 0.5, 3.0, -1.0, 0.0, -1.0, 4.0]).unwrap();
        let theta = Tensor::from_f64(3, 1, &[0.7, -1.3, 2.1]).unwrap();
        let err = finite_diff_check(
            |tape, x| {
                let av = tape.constant(a.clone());
                let ax = tape.matmul(av, x)?;
                let p = tape.mul(x, ax)?;
                Ok(tape.sum_all(p))
            },
            &theta,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn three_layer_mlp_matches_finite_differences() {
        let mut rng = RngState::new(11);
        let mut store = ParamStore::<f64>::new();
        let dims = [4, 6, 5, 3];
        let mut layers = Vec::new();
        for (i, w) in dims.windows(2).enumerate() {
            let wid = store.add(format!("w{i}"), rng.normal_tensor(w[0], w[1]));
            let bid = store.add(format!("b{i}"), rng.normal_tensor(1, w[1]));
            layers.push((wid, bid));
        }
        let x = rng.normal_tensor::<f64>(7, 4);
        let weights = rng.normal_tensor::<f64>(7, 3);
        let err = finite_diff_check_store(
            &store,
            |tape, b| {
                let mut h = tape.constant(x.clone());
                for (i, &(w, bias)) in layers.iter().enumerate() {
                    h = tape.matmul(h, b.var(w))?;
                    h = tape.add_row(h, b.var(bias))?;
                    if i + 1 < layers.len() {
                        h = tape.tanh(h);
                    }
                }
                let wv = tape.constant(weights.clone());
                let p = tape.mul(h, wv)?;
                Ok(tape.sum_all(p))
            },
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "{err}");
    }
}
