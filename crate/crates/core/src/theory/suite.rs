//! The randomized sweeps behind `verify --suite theorems`.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::discrete::{
    check_conditioning_gap, check_minimum_loss, check_oracle_by_monte_carlo, check_orthogonality, AffineDenoiser,
    DiscreteToy, PosteriorMean, PredictorRole, ZeroDenoiser,
};
use super::gaussian::{check_information_bound, check_max_entropy, check_remark, random_spd, GaussianToy};
use super::mlp::{DenoisingMlp, MlpConfig};
use super::{reports_csv, BoundReport, NoiseLevel};
use crate::diffusion::{NoiseSchedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::numeric::{RngState, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub seed: u64,
    pub schedule: ScheduleKind,
    pub steps: usize,
    /// Random toys for the minimum-loss sweep.
    pub toys: usize,
    /// Random (toy, feature) pairs for the conditioning sweep.
    pub conditioning_cases: usize,
    pub spd_candidates: usize,
    pub mc_samples: usize,
    /// Samples for the quadrature cross-check.
    pub cross_check_samples: usize,
    /// Also train an MLP per (toy, step) in the minimum-loss sweep.
    pub train_mlp: bool,
    pub mlp: MlpConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            schedule: ScheduleKind::Linear,
            steps: 1000,
            toys: 10,
            conditioning_cases: 100,
            spd_candidates: 100,
            mc_samples: 1_000_000,
            cross_check_samples: 10_000_000,
            train_mlp: true,
            mlp: MlpConfig::default(),
        }
    }
}

/// Streams of the suite RNG, one per sweep.
mod stream {
    pub const TOYS: u64 = 1;
    pub const CONDITIONING: u64 = 2;
    pub const SPD: u64 = 3;
    pub const CROSS_CHECK: u64 = 4;
}

/// Steps at `0.1 T`, `0.5 T` and `0.9 T`.
pub fn step_grid(schedule: &NoiseSchedule) -> [usize; 3] {
    [schedule.step_at(0.1), schedule.step_at(0.5), schedule.step_at(0.9)]
}

/// A random toy with 2 to 8 support points in 1 to 3 dimensions.
pub fn random_toy(rng: &mut RngState) -> Result<DiscreteToy> {
    let k = 2 + rng.uniform_int(7) as usize;
    let d = 1 + rng.uniform_int(3) as usize;
    DiscreteToy::random(k, d, 0.5, rng)
}

fn schedule(cfg: &SuiteConfig) -> Result<NoiseSchedule> {
    Ok(NoiseSchedule::new(cfg.schedule, cfg.steps)?)
}

/// Posterior-mean and trained predictors against the oracle on random toys,
/// plus the zero predictor on the symmetric two-point toy.
pub fn minimum_loss_sweep(cfg: &SuiteConfig) -> Result<Vec<BoundReport>> {
    let sched = schedule(cfg)?;
    let root = RngState::new(cfg.seed).fork(stream::TOYS);
    let mut reports = Vec::new();
    for toy_id in 0..cfg.toys {
        let mut rng = root.fork(toy_id as u64);
        let toy = random_toy(&mut rng)?;
        for t in step_grid(&sched) {
            let level = NoiseLevel::at(&sched, t);
            let pm = PosteriorMean { toy: &toy, level, conditioned: false };
            let mc_rng = rng.fork(t as u64);
            let r = check_minimum_loss(&toy, level, &pm, PredictorRole::PosteriorMean, false, cfg.mc_samples, &mc_rng)?;
            reports.push(r.with("toy", toy_id as f64).with("t", t as f64).with("trained", 0.0));
            if cfg.train_mlp {
                let mut train_rng = rng.fork(1_000_000 + t as u64);
                let mlp = DenoisingMlp::train(&toy, level, &cfg.mlp, &mut train_rng)?;
                let r = check_minimum_loss(&toy, level, &mlp, PredictorRole::Trained, false, cfg.mc_samples, &mc_rng)?;
                reports.push(r.with("toy", toy_id as f64).with("t", t as f64).with("trained", 1.0));
            }
        }
    }
    let two = DiscreteToy::new(vec![vec![-1.0], vec![1.0]], vec![0.5, 0.5])?;
    let level = NoiseLevel::at(&sched, sched.step_at(0.5));
    let zero = check_minimum_loss(&two, level, &ZeroDenoiser, PredictorRole::Other, false, cfg.mc_samples, &root)?;
    // E||0 - x_0||^2 = 1 for the symmetric two-point toy.
    reports.push(zero.with("closed_form_loss", 1.0));
    Ok(reports)
}

/// Random partitions of random toys; one case in ten uses an 8-point toy
/// with a constant or injective feature.
pub fn conditioning_sweep(cfg: &SuiteConfig) -> Result<Vec<BoundReport>> {
    let sched = schedule(cfg)?;
    let grid = step_grid(&sched);
    let root = RngState::new(cfg.seed).fork(stream::CONDITIONING);
    let mut reports = Vec::new();
    for case in 0..cfg.conditioning_cases {
        let mut rng = root.fork(case as u64);
        let base = match case % 10 {
            0 => DiscreteToy::random(8, 1 + rng.uniform_int(3) as usize, 1.0, &mut rng)?,
            _ => random_toy(&mut rng)?,
        };
        let k = base.len();
        let cells = match case % 10 {
            0 if case % 20 == 0 => 1,
            0 => k,
            _ => 1 + rng.uniform_int(k as u64) as usize,
        };
        let toy = base.with_feature(DiscreteToy::random_partition(k, cells, &mut rng))?;
        let t = grid[rng.uniform_int(3) as usize];
        let r = check_conditioning_gap(&toy, NoiseLevel::at(&sched, t))?;
        reports.push(r.with("case", case as f64).with("t", t as f64));
    }
    Ok(reports)
}

/// Random SPD matrices of sizes 1 to 5 at trace 3, plus isotropic ones.
pub fn entropy_sweep(cfg: &SuiteConfig) -> Result<Vec<BoundReport>> {
    let trace = 3.0;
    let mut rng = RngState::new(cfg.seed).fork(stream::SPD);
    let mut candidates: Vec<Tensor<f64>> =
        (0..cfg.spd_candidates).map(|i| random_spd(1 + i % 5, trace, &mut rng)).collect();
    for n in 1..=5 {
        candidates.push(Tensor::from_fn(n, n, |r, c| if r == c { trace / n as f64 } else { 0.0 }));
    }
    check_max_entropy(trace, &candidates)
}

/// Steps `0.1 T .. 0.9 T` against feature noise `{0.01, 0.1, 1, 10}`.
pub fn information_sweep(cfg: &SuiteConfig) -> Result<Vec<BoundReport>> {
    let sched = schedule(cfg)?;
    let mut reports = Vec::new();
    for i in 1..=9 {
        let t = sched.step_at(i as f64 / 10.0);
        for s2 in [0.01, 0.1, 1.0, 10.0] {
            let toy = GaussianToy::new(1.0, s2, NoiseLevel::at(&sched, t))?;
            reports.push(check_information_bound(&toy).with("t", t as f64));
        }
    }
    Ok(reports)
}

/// `alpha_T = 0` exactly and `alpha_T = 0.01`.
pub fn infomax_checks() -> Result<Vec<BoundReport>> {
    let exact = GaussianToy::new(1.0, 1.0, NoiseLevel::new(0.0, 1.0))?;
    let near = GaussianToy::new(1.0, 1.0, NoiseLevel::new(0.01, (1.0f64 - 1e-4).sqrt()))?;
    Ok(vec![check_remark(&exact, 0.0), check_remark(&near, 1e-3)])
}

/// Quadrature against Monte Carlo: the two-point oracle at
/// `alpha = sigma = 1/sqrt 2`, and the orthogonal decomposition for affine
/// predictors on random toys.
pub fn cross_check_sweep(cfg: &SuiteConfig) -> Result<Vec<BoundReport>> {
    let root = RngState::new(cfg.seed).fork(stream::CROSS_CHECK);
    let two = DiscreteToy::new(vec![vec![-1.0], vec![1.0]], vec![0.5, 0.5])?;
    let half = NoiseLevel::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2);
    let mut reports = vec![check_oracle_by_monte_carlo(&two, half, false, cfg.cross_check_samples, &root.fork(0))?];
    let sched = schedule(cfg)?;
    for case in 0..4u64 {
        let mut rng = root.fork(1 + case);
        let toy = random_toy(&mut rng)?;
        let toy = toy.clone().with_feature(DiscreteToy::random_partition(toy.len(), 1 + toy.len() / 2, &mut rng))?;
        let level = NoiseLevel::at(&sched, step_grid(&sched)[case as usize % 3]);
        let f = AffineDenoiser { scale: rng.normal(), shift: (0..toy.dim()).map(|_| rng.normal()).collect() };
        let conditioned = case % 2 == 1;
        reports.push(check_orthogonality(&toy, level, &f, conditioned, cfg.mc_samples, &rng.fork(7))?);
        reports.push(check_oracle_by_monte_carlo(&toy, level, conditioned, cfg.mc_samples, &rng.fork(8))?);
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub sections: BTreeMap<String, Vec<BoundReport>>,
}

impl SuiteResult {
    pub fn all_pass(&self) -> bool {
        self.sections.values().flatten().all(|r| r.pass)
    }

    pub fn failures(&self) -> Vec<(&str, &BoundReport)> {
        self.sections.iter().flat_map(|(k, v)| v.iter().filter(|r| !r.pass).map(move |r| (k.as_str(), r))).collect()
    }

    /// `<section>.json` and `<section>.csv` per section under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for (name, reports) in &self.sections {
            let json = dir.join(format!("{name}.json"));
            let body = serde_json::to_string_pretty(reports).expect("reports serialize");
            std::fs::write(&json, body).map_err(|e| Error::io(&json, e))?;
            let csv = dir.join(format!("{name}.csv"));
            std::fs::write(&csv, reports_csv(reports)).map_err(|e| Error::io(&csv, e))?;
            written.extend([json, csv]);
        }
        Ok(written)
    }
}

pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteResult> {
    let mut sections = BTreeMap::new();
    sections.insert("minimum_loss".to_string(), minimum_loss_sweep(cfg)?);
    sections.insert("conditioning".to_string(), conditioning_sweep(cfg)?);
    sections.insert("max_entropy".to_string(), entropy_sweep(cfg)?);
    sections.insert("conditional_mi".to_string(), information_sweep(cfg)?);
    sections.insert("infomax_limit".to_string(), infomax_checks()?);
    sections.insert("cross_check".to_string(), cross_check_sweep(cfg)?);
    Ok(SuiteResult { sections })
}
