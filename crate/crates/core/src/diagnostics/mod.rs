//! Importance-weight diagnostics and Monte Carlo error estimates.

mod mcse;
mod pareto;

pub use mcse::{
    ess_autocorr, ess_chains, mean_and_mcse, mean_and_mcse_chains, standardized_difference,
    weighted_mean_and_mcse,
};
pub use pareto::{gpd_fit, mesh_advice, pareto_khat, pareto_khat_log, tail_size, MeshAdvice, ParetoFit, MIN_SAMPLE};

use crate::{Error, Result};

/// `1 / sum W_r^2`, computed after rescaling by the largest weight so that
/// equal weights give exactly `R`.
pub fn ess(weights: &[f64]) -> Result<f64> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Data("weights must be finite and nonnegative".into()));
    }
    let max = weights.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::DegenerateWeights {
            step: 0,
            message: "all weights are zero".into(),
        });
    }
    let (s1, s2) = weights.iter().fold((0.0, 0.0), |(a, b), w| {
        let v = w / max;
        (a + v, b + v * v)
    });
    Ok(s1 * s1 / s2)
}

/// ESS from unnormalized log weights.
pub fn ess_log(log_weights: &[f64]) -> Result<f64> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateWeights {
            step: 0,
            message: "no finite log weight".into(),
        });
    }
    let w: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    ess(&w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_cases_are_exact() {
        assert_eq!(ess(&vec![1.0 / 1000.0; 1000]).unwrap(), 1000.0);
        let mut atom = vec![0.0; 10];
        atom[3] = 1.0;
        assert_eq!(ess(&atom).unwrap(), 1.0);
        assert_eq!(ess(&[0.5, 0.5, 0.0, 0.0]).unwrap(), 2.0);
        assert!(matches!(ess(&[0.0, 0.0]), Err(Error::DegenerateWeights { .. })));
        assert_eq!(ess_log(&[-3.0; 7]).unwrap(), 7.0);
    }

    #[test]
    fn log_ess_survives_wide_spreads() {
        let lw: Vec<f64> = (0..100).map(|i| -7.0 * i as f64).collect();
        let e = ess_log(&lw).unwrap();
        assert!(e.is_finite() && e >= 1.0);
    }
}
