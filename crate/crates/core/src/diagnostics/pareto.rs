//! Generalized Pareto shape estimation on importance-weight tails.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Smallest sample for which a tail fit is attempted.
pub const MIN_SAMPLE: usize = 25;

/// Shape estimate of an importance-weight tail.
///
/// `khat` is `None` when the sample was too small to fit, and `-inf` when
/// every tail weight equals the cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFit {
    #[serde(with = "crate::io::nonfinite::option")]
    pub khat: Option<f64>,
    pub tail_count: usize,
    pub warning: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// `min(ceil(0.2 R), ceil(3 sqrt(R)))`.
pub fn tail_size(r: usize) -> usize {
    let a = (0.2 * r as f64).ceil() as usize;
    let b = (3.0 * (r as f64).sqrt()).ceil() as usize;
    a.min(b)
}

/// Zhang-Stephens profile-likelihood estimate of `(k, sigma)` for
/// exceedances `x` (sorted ascending, nonnegative, largest positive), with
/// the weakly informative shrinkage `(k n + 5) / (n + 10)`.
pub fn gpd_fit(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    let nf = n as f64;
    let prior = 3.0;
    let m = 30 + (nf.sqrt()).floor() as usize;
    let mut xstar = x[((nf / 4.0 + 0.5).floor() as usize).max(1) - 1];
    if xstar <= 0.0 {
        xstar = x.iter().copied().find(|v| *v > 0.0).unwrap_or(x[n - 1]);
    }
    let x_max = x[n - 1];
    let theta: Vec<f64> = (1..=m)
        .map(|j| 1.0 / x_max + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / prior / xstar)
        .collect();
    let profile = |t: f64| -> f64 {
        let k = x.iter().map(|v| (-t * v).ln_1p()).sum::<f64>() / nf;
        nf * ((-t / k).ln() - k - 1.0)
    };
    let l_theta: Vec<f64> = theta.iter().map(|&t| profile(t)).collect();
    let finite_max = l_theta
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = l_theta
        .iter()
        .map(|v| if v.is_finite() { (v - finite_max).exp() } else { 0.0 })
        .collect();
    let total: f64 = w.iter().sum();
    let theta_hat: f64 = theta.iter().zip(&w).map(|(t, w)| t * w / total).sum();
    let k = x.iter().map(|v| (-theta_hat * v).ln_1p()).sum::<f64>() / nf;
    let sigma = -k / theta_hat;
    let k = (k * nf + 5.0) / (nf + 10.0);
    (k, sigma)
}

/// Pareto shape of the upper tail of `log_weights` (any additive constant).
pub fn pareto_khat_log(log_weights: &[f64], threshold: f64) -> Result<ParetoFit> {
    if let Some(i) = log_weights.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("log weight {i} is not finite")));
    }
    let r = log_weights.len();
    if r < MIN_SAMPLE {
        return Ok(ParetoFit {
            khat: None,
            tail_count: 0,
            warning: false,
            note: Some(format!("sample too small ({r} < {MIN_SAMPLE})")),
        });
    }
    let m = tail_size(r);
    let mut sorted = log_weights.to_vec();
    sorted.sort_by(f64::total_cmp);
    let max = sorted[r - 1];
    let cutoff = (sorted[r - m - 1] - max).exp();
    let tail: Vec<f64> = sorted[r - m..]
        .iter()
        .map(|v| ((v - max).exp() - cutoff).max(0.0))
        .collect();
    if tail[m - 1] <= 0.0 {
        return Ok(ParetoFit {
            khat: Some(f64::NEG_INFINITY),
            tail_count: m,
            warning: false,
            note: Some("tail weights are all equal".into()),
        });
    }
    let (k, _) = gpd_fit(&tail);
    Ok(ParetoFit {
        khat: Some(k),
        tail_count: m,
        warning: k > threshold,
        note: None,
    })
}

/// Pareto shape of the upper tail of positive `weights`.
pub fn pareto_khat(weights: &[f64], threshold: f64) -> Result<ParetoFit> {
    if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::Data(format!(
            "weight {i} must be positive and finite (got {})",
            weights[i]
        )));
    }
    let logs: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    pareto_khat_log(&logs, threshold)
}

/// Advice attached to a step whose importance weights look unreliable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshAdvice {
    pub step: usize,
    pub khat: f64,
    pub refinement_factor: usize,
    pub message: String,
}

/// Suggests halving the mesh spacing when `fit` crosses `threshold`.
pub fn mesh_advice(fit: &ParetoFit, step: usize, threshold: f64) -> Option<MeshAdvice> {
    let k = fit.khat?;
    (k > threshold).then(|| MeshAdvice {
        step,
        khat: k,
        refinement_factor: 2,
        message: format!(
            "step {step}: khat = {k:.3} exceeds {threshold}; refine the mesh by a factor of 2 around this step"
        ),
    })
}
