use crate::numeric::{RngState, Scalar, Tensor};

/// Per-node keep flags drawn for one masking pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskRecord {
    pub keep: Vec<bool>,
    pub ratio: f64,
}

impl MaskRecord {
    pub fn kept_fraction(&self) -> f64 {
        self.keep.iter().filter(|&&k| k).count() as f64 / self.keep.len().max(1) as f64
    }
}

/// Zeroes whole feature rows; each row is kept with probability `1 - m`.
pub fn mask_nodes<S: Scalar>(x: &Tensor<S>, m: f64, rng: &mut RngState) -> (Tensor<S>, MaskRecord) {
    assert!((0.0..=1.0).contains(&m), "mask ratio must lie in [0, 1], got {m}");
    let keep: Vec<bool> = (0..x.rows()).map(|_| rng.bernoulli(1.0 - m)).collect();
    let mut out = x.clone();
    for (r, &k) in keep.iter().enumerate() {
        if !k {
            out.row_mut(r).iter_mut().for_each(|v| *v = S::zero());
        }
    }
    (out, MaskRecord { keep, ratio: m })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremes() {
        let mut rng = RngState::new(0);
        let x = rng.normal_tensor::<f64>(50, 3);
        let (y, rec) = mask_nodes(&x, 0.0, &mut rng);
        assert_eq!(y, x);
        assert!(rec.keep.iter().all(|&k| k));
        let (y, rec) = mask_nodes(&x, 1.0, &mut rng);
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert!(rec.keep.iter().all(|&k| !k));
    }

    #[test]
    fn kept_fraction_within_binomial_band() {
        let mut rng = RngState::new(17);
        let n = 10_000;
        let x = Tensor::<f32>::filled(n, 1, 1.0);
        let (_, rec) = mask_nodes(&x, 0.7, &mut rng);
        let band = 4.0 * (0.3f64 * 0.7 / n as f64).sqrt();
        assert!((rec.kept_fraction() - 0.3).abs() <= band, "{}", rec.kept_fraction());
    }
}
