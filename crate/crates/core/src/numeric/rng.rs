//! Philox4x32-10 counter-based generator.
//!
//! Draw `i` of a state `(seed, counter)` is the Philox block at counter
//! `counter + i` under key `seed`; every draw consumes exactly one block, so
//! the counter advances by the number of values produced.

use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use super::tensor::Tensor;

const M0: u32 = 0xD251_1F53;
const M1: u32 = 0xCD9E_8D57;
const W0: u32 = 0x9E37_79B9;
const W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = (a as u64) * (b as u64);
    ((p >> 32) as u32, p as u32)
}

/// One Philox4x32 block with 10 rounds.
pub fn philox4x32_10(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = ctr;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(W0);
            k[1] = k[1].wrapping_add(W1);
        }
        let (hi0, lo0) = mulhilo(M0, c[0]);
        let (hi1, lo1) = mulhilo(M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// Distribution for bulk draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Draw {
    Normal,
    Bernoulli(f64),
    UniformInt(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub counter: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    fn block(&mut self) -> [u32; 4] {
        let c = self.counter;
        self.counter = self.counter.wrapping_add(1);
        philox4x32_10([c as u32, (c >> 32) as u32, 0, 0], [self.seed as u32, (self.seed >> 32) as u32])
    }

    /// Independent child stream; does not advance `self`.
    pub fn fork(&self, stream: u64) -> RngState {
        let b = philox4x32_10(
            [stream as u32, (stream >> 32) as u32, 0x5EED_F0CC, 0x0000_0001],
            [self.seed as u32, (self.seed >> 32) as u32],
        );
        RngState::new(((b[1] as u64) << 32) | b[0] as u64)
    }

    pub fn next_u64(&mut self) -> u64 {
        let b = self.block();
        ((b[1] as u64) << 32) | b[0] as u64
    }

    /// Uniform on [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        to_unit(self.next_u64())
    }

    /// Standard normal via Box-Muller on one block.
    pub fn normal(&mut self) -> f64 {
        let b = self.block();
        let u1 = to_unit(((b[1] as u64) << 32) | b[0] as u64);
        let u2 = to_unit(((b[3] as u64) << 32) | b[2] as u64);
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        debug_assert!((0.0..=1.0).contains(&p));
        self.uniform() < p
    }

    /// Uniform on `{0, .., n-1}`.
    pub fn uniform_int(&mut self, n: u64) -> u64 {
        assert!(n >= 1, "uniform_int requires n >= 1");
        (((self.next_u64() as u128) * (n as u128)) >> 64) as u64
    }

    pub fn draw(&mut self, kind: Draw, count: usize) -> Vec<f64> {
        (0..count)
            .map(|_| match kind {
                Draw::Normal => self.normal(),
                Draw::Bernoulli(p) => {
                    if self.bernoulli(p) {
                        1.0
                    } else {
                        0.0
                    }
                }
                Draw::UniformInt(n) => self.uniform_int(n) as f64,
            })
            .collect()
    }

    pub fn normal_tensor<S: Scalar>(&mut self, rows: usize, cols: usize) -> Tensor<S> {
        Tensor::from_fn(rows, cols, |_, _| S::from_f64(self.normal()))
    }

    pub fn uniform_tensor<S: Scalar>(&mut self, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor<S> {
        Tensor::from_fn(rows, cols, |_, _| S::from_f64(lo + (hi - lo) * self.uniform()))
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.uniform_int(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[inline]
fn to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn philox_known_answers() {
        assert_eq!(philox4x32_10([0; 4], [0; 2]), [0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8]);
        assert_eq!(philox4x32_10([u32::MAX; 4], [u32::MAX; 2]), [0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd]);
        assert_eq!(
            philox4x32_10([0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344], [0xa4093822, 0x299f31d0]),
            [0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1]
        );
    }

    #[test]
    fn counter_advances_by_count() {
        let mut r = RngState::new(7);
        r.draw(Draw::Normal, 13);
        assert_eq!(r.counter, 13);
        r.draw(Draw::Bernoulli(0.3), 5);
        assert_eq!(r.counter, 18);
    }

    #[test]
    fn same_state_same_sequence() {
        let mut a = RngState { seed: 99, counter: 1234 };
        let mut b = a;
        let xa = a.draw(Draw::Normal, 100);
        let xb = b.draw(Draw::Normal, 100);
        assert_eq!(
            xa.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            xb.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn degenerate_bernoulli() {
        let mut r = RngState::new(1);
        assert!(r.draw(Draw::Bernoulli(0.0), 1000).iter().all(|&v| v == 0.0));
        assert!(r.draw(Draw::Bernoulli(1.0), 1000).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn normal_moments_million_draws() {
        let mut r = RngState::new(2024);
        let n = 1_000_000;
        let xs = r.draw(Draw::Normal, n);
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn uniform_int_stays_in_range() {
        let mut r = RngState::new(3);
        let xs = r.draw(Draw::UniformInt(2), 1000);
        assert!(xs.iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(xs.contains(&0.0) && xs.contains(&1.0));
    }

    #[test]
    fn forks_differ_from_parent_and_each_other() {
        let r = RngState::new(5);
        let (mut a, mut b) = (r.fork(0), r.fork(1));
        assert_ne!(a.seed, b.seed);
        assert_ne!(a.next_u64(), b.next_u64());
    }
}
