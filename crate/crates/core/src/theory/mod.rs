//! Numerical checks of the denoising-loss minima, the conditioning
//! inequality, the entropy and mutual-information bounds, and the
//! condition/correlation experiments on real data.

pub mod discrete;
pub mod experiments;
pub mod gaussian;
pub mod mlp;
pub mod quadrature;
pub mod suite;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;

pub use discrete::{DiscreteToy, PosteriorStats};
pub use experiments::{condition_comparison, loss_accuracy_correlation, spearman, ConditionCurves, CorrelationReport};
pub use gaussian::{check_information_bound, check_max_entropy, check_remark, GaussianToy};
pub use quadrature::{adaptive_expect, GaussHermite, Quadrature};

/// Signal and noise scales of one noising step, `x_t = alpha x_0 + sigma xi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevel {
    pub alpha: f64,
    pub sigma: f64,
}

impl NoiseLevel {
    pub fn new(alpha: f64, sigma: f64) -> Self {
        Self { alpha, sigma }
    }

    pub fn at(schedule: &NoiseSchedule, t: usize) -> Self {
        Self { alpha: schedule.alpha(t), sigma: schedule.sigma(t) }
    }
}

/// Outcome of one inequality check. `pass` holds exactly when
/// `slack >= -tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub check: String,
    pub left: f64,
    pub right: f64,
    pub slack: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub method: String,
    pub error_estimate: f64,
    /// Extra named quantities for the sweep tables.
    #[serde(default)]
    pub diagnostics: BTreeMap<String, f64>,
}

impl BoundReport {
    pub fn new(check: impl Into<String>, left: f64, right: f64, slack: f64, tolerance: f64) -> Self {
        Self {
            check: check.into(),
            left,
            right,
            slack,
            tolerance,
            pass: slack >= -tolerance,
            method: String::new(),
            error_estimate: 0.0,
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn method(mut self, method: impl Into<String>, error_estimate: f64) -> Self {
        self.method = method.into();
        self.error_estimate = error_estimate;
        self
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.to_string(), value);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// CSV with the fixed report columns followed by the union of diagnostic
/// keys in sorted order.
pub fn reports_csv(reports: &[BoundReport]) -> String {
    let mut keys: Vec<&String> = reports.iter().flat_map(|r| r.diagnostics.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut out = String::from("check,left,right,slack,tolerance,pass,method,error_estimate");
    for k in &keys {
        out.push(',');
        out.push_str(k);
    }
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}",
            r.check, r.left, r.right, r.slack, r.tolerance, r.pass, r.method, r.error_estimate
        ));
        for k in &keys {
            out.push(',');
            if let Some(v) = r.diagnostics.get(*k) {
                out.push_str(&v.to_string());
            }
        }
        out.push('\n');
    }
    out
}
