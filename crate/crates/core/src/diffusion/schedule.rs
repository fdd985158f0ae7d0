//! Discrete variance-preserving noise schedules on `t = 1..=T`.
//!
//! `alpha_bar_t = prod_{s<=t} (1 - beta_s)`, `alpha_t = sqrt(alpha_bar_t)`,
//! `sigma_t = sqrt(1 - alpha_bar_t)`.
//!
//! * linear: `beta` linear from `1e-4` to `beta_max(T)`.
//! * quad: `sqrt(beta)` linear between the same endpoints.
//! * sigmoid: `alpha_bar(s) = sigmoid(-k(2s - 1)) / sigmoid(k)` with `k = 6`
//!   on the grid `s_t = s_1 + (t - 1)/(T - 1) * (1 - s_1)`, `s_1 = 1e-3`.
//! * inverted: `alpha_bar_1 + alpha_bar_T - alpha_bar_{T-t+1}` of the sigmoid
//!   schedule, which keeps both endpoints.
//!
//! `beta_max(T) = min(0.02 * 1000 / T, 0.999)` so that short schedules still
//! end near pure noise; at `T = 1000` it is the usual `0.02`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DiffusionError;

pub const BETA_MIN: f64 = 1e-4;
pub const SIGMOID_K: f64 = 6.0;
pub const SIGMOID_S1: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Quad,
    Sigmoid,
    Inverted,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 4] =
        [ScheduleKind::Linear, ScheduleKind::Quad, ScheduleKind::Sigmoid, ScheduleKind::Inverted];

    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Quad => "quad",
            ScheduleKind::Sigmoid => "sigmoid",
            ScheduleKind::Inverted => "inverted",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScheduleKind {
    type Err = DiffusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScheduleKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| DiffusionError::UnknownSchedule(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    alpha_bar: Vec<f64>,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
}

pub fn beta_max(t_count: usize) -> f64 {
    (0.02 * 1000.0 / t_count as f64).min(0.999)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn sigmoid_alpha_bar(t_count: usize) -> Vec<f64> {
    let denom = sigmoid(SIGMOID_K);
    (0..t_count)
        .map(|i| {
            let s = SIGMOID_S1 + i as f64 / (t_count - 1) as f64 * (1.0 - SIGMOID_S1);
            sigmoid(-SIGMOID_K * (2.0 * s - 1.0)) / denom
        })
        .collect()
}

fn cumulative(betas: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 1.0;
    betas
        .map(|b| {
            acc *= 1.0 - b;
            acc
        })
        .collect()
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, t_count: usize) -> Result<Self, DiffusionError> {
        if t_count < 2 {
            return Err(DiffusionError::TooFewSteps(t_count));
        }
        let frac = |i: usize| i as f64 / (t_count - 1) as f64;
        let bmax = beta_max(t_count);
        let alpha_bar = match kind {
            ScheduleKind::Linear => cumulative((0..t_count).map(|i| BETA_MIN + frac(i) * (bmax - BETA_MIN))),
            ScheduleKind::Quad => cumulative((0..t_count).map(|i| {
                let r = BETA_MIN.sqrt() + frac(i) * (bmax.sqrt() - BETA_MIN.sqrt());
                r * r
            })),
            ScheduleKind::Sigmoid => sigmoid_alpha_bar(t_count),
            ScheduleKind::Inverted => {
                let s = sigmoid_alpha_bar(t_count);
                let (first, last) = (s[0], s[t_count - 1]);
                (0..t_count).map(|i| first + last - s[t_count - 1 - i]).collect()
            }
        };
        let alpha = alpha_bar.iter().map(|a| a.sqrt()).collect();
        let sigma = alpha_bar.iter().map(|a| (1.0 - a).sqrt()).collect();
        Ok(Self { kind, alpha_bar, alpha, sigma })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of timesteps `T`.
    pub fn steps(&self) -> usize {
        self.alpha.len()
    }

    /// `alpha_t` for `t` in `1..=T`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    /// Drift and squared diffusion `(f, g^2)` of the equivalent SDE in
    /// continuous time `tau = t / T`, by finite differences on the grid:
    /// `f = d log(alpha)/d tau`, `g^2 = d sigma^2/d tau - 2 f sigma^2`.
    pub fn sde_coefficients(&self, t: usize) -> (f64, f64) {
        let n = self.steps();
        let (lo, hi) = (t.saturating_sub(1).max(1), (t + 1).min(n));
        let dtau = (hi - lo) as f64 / n as f64;
        let f = (self.alpha(hi).ln() - self.alpha(lo).ln()) / dtau;
        let ds2 = (self.sigma(hi).powi(2) - self.sigma(lo).powi(2)) / dtau;
        (f, ds2 - 2.0 * f * self.sigma(t).powi(2))
    }

    /// `t,alpha,sigma` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,alpha,sigma\n");
        for t in 1..=self.steps() {
            s.push_str(&format!("{t},{},{}\n", self.alpha(t), self.sigma(t)));
        }
        s
    }

    /// The timestep nearest to a fraction of `T` (at least 1).
    pub fn step_at(&self, fraction: f64) -> usize {
        ((fraction * self.steps() as f64).round() as usize).clamp(1, self.steps())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_first_step() {
        let s = NoiseSchedule::new(ScheduleKind::Linear, 1000).unwrap();
        assert!((s.alpha_bar(1) - 0.9999).abs() < 1e-15);
        assert!((s.alpha(1) - 0.9999f64.sqrt()).abs() < 1e-15);
        assert!((s.sigma(1) - 1e-2).abs() < 1e-12);
    }

    #[test]
    fn invariants_for_every_kind_and_length() {
        for kind in ScheduleKind::ALL {
            for t_count in [10, 100, 1000] {
                let s = NoiseSchedule::new(kind, t_count).unwrap();
                for t in 1..=t_count {
                    assert!((s.alpha(t).powi(2) + s.sigma(t).powi(2) - 1.0).abs() <= 1e-12);
                }
                assert!(s.alphas().windows(2).all(|w| w[1] < w[0]), "{kind} {t_count}");
                assert!(s.sigmas().windows(2).all(|w| w[1] > w[0]), "{kind} {t_count}");
                assert!(s.alpha(1) >= 0.999, "{kind} {t_count}: {}", s.alpha(1));
                assert!(s.alpha(t_count) <= 0.05, "{kind} {t_count}: {}", s.alpha(t_count));
            }
        }
    }

    #[test]
    fn inverted_mirrors_sigmoid() {
        let t_count = 100;
        let sig = NoiseSchedule::new(ScheduleKind::Sigmoid, t_count).unwrap();
        let inv = NoiseSchedule::new(ScheduleKind::Inverted, t_count).unwrap();
        let c = sig.alpha_bar(1) + sig.alpha_bar(t_count);
        for t in 1..=t_count {
            assert!((inv.alpha_bar(t) + sig.alpha_bar(t_count - t + 1) - c).abs() < 1e-15);
        }
    }

    #[test]
    fn sigmoid_grid_matches_t_over_t_at_thousand() {
        let s = NoiseSchedule::new(ScheduleKind::Sigmoid, 1000).unwrap();
        for t in [1, 250, 500, 1000] {
            let x = t as f64 / 1000.0;
            let expected = sigmoid(-6.0 * (2.0 * x - 1.0)) / sigmoid(6.0);
            assert!((s.alpha_bar(t) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_short_and_unknown() {
        assert!(matches!(NoiseSchedule::new(ScheduleKind::Quad, 1), Err(DiffusionError::TooFewSteps(1))));
        assert!("cosine".parse::<ScheduleKind>().is_err());
        assert_eq!("quad".parse::<ScheduleKind>().unwrap(), ScheduleKind::Quad);
    }

    #[test]
    fn sde_drift_is_negative() {
        let s = NoiseSchedule::new(ScheduleKind::Linear, 1000).unwrap();
        let (f, g2) = s.sde_coefficients(500);
        assert!(f < 0.0 && g2 > 0.0);
    }
}
