use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Prior scales for the bias-effect tables and the poll-error scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorScales {
    pub house: f64,
    pub mode: f64,
    pub population: f64,
    pub sigma_state: f64,
    pub sigma_national: f64,
}

/// Fixed model dimensions and hyperparameters.
///
/// Covariances are given as full matrices. Field names in the key-value and
/// JSON encodings follow the model notation (`S`, `T`, `w`, `f`, `C`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(rename = "S")]
    pub states: usize,
    #[serde(rename = "T")]
    pub days: usize,
    #[serde(rename = "w")]
    pub weights: Vec<f64>,
    /// Fundamentals-based forecast on the logit scale.
    #[serde(rename = "f")]
    pub fundamentals: Vec<f64>,
    #[serde(rename = "C")]
    pub terminal_cov: Vec<Vec<f64>>,
    #[serde(rename = "Sigma_mu")]
    pub walk_cov: Vec<Vec<f64>>,
    #[serde(rename = "Sigma_u")]
    pub state_error_cov: Vec<Vec<f64>>,
    pub n_pollsters: usize,
    pub n_modes: usize,
    pub n_populations: usize,
    pub prior_scales: PriorScales,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub state_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pollster_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mode_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub population_names: Vec<String>,
}

/// Lower Cholesky factor of a covariance with its log-determinant.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    pub lower: DMatrix<f64>,
    /// `log |L| = sum(log diag(L))`.
    pub log_det_lower: f64,
}

impl CholeskyFactor {
    fn from_rows(name: &str, rows: &[Vec<f64>], dim: usize) -> Result<Self> {
        if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Config(format!("{name} must be {dim}x{dim}")));
        }
        let m = DMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("{name} has non-finite entries")));
        }
        for i in 0..dim {
            for j in 0..i {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::Config(format!("{name} is not symmetric at ({i},{j})")));
                }
            }
        }
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::Config(format!("{name} is not positive definite")))?;
        let lower = chol.unpack();
        let log_det_lower = (0..dim).map(|i| lower[(i, i)].ln()).sum();
        Ok(Self {
            lower,
            log_det_lower,
        })
    }

    /// `L z`
    pub fn mul(&self, z: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(z.len()) {
            let mut acc = 0.0;
            for (j, zj) in z.iter().enumerate().take(i + 1) {
                acc += self.lower[(i, j)] * zj;
            }
            *o = acc;
        }
    }

    /// `out += L^T g`
    pub fn add_mul_transpose(&self, g: &[f64], out: &mut [f64]) {
        let n = g.len();
        for (j, o) in out.iter_mut().enumerate().take(n) {
            let mut acc = 0.0;
            for (i, gi) in g.iter().enumerate().skip(j) {
                acc += self.lower[(i, j)] * gi;
            }
            *o += acc;
        }
    }

    /// Solves `L v = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let v = self
            .lower
            .solve_lower_triangular(&DVector::from_column_slice(b))
            .expect("cholesky factor has a positive diagonal");
        v.iter().copied().collect()
    }
}

/// Cholesky factors of the three covariance matrices, computed once per spec.
#[derive(Debug, Clone)]
pub struct SpecFactors {
    pub terminal: CholeskyFactor,
    pub walk: CholeskyFactor,
    pub state_error: CholeskyFactor,
}

impl ModelSpec {
    /// Checks every invariant and factorizes the covariances.
    pub fn factorize(&self) -> Result<SpecFactors> {
        let s = self.states;
        if s == 0 {
            return Err(Error::Config("S must be positive".into()));
        }
        if self.days == 0 {
            return Err(Error::Config("T must be positive".into()));
        }
        if self.weights.len() != s {
            return Err(Error::Config(format!("w must have length S = {s}")));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("w must be finite and nonnegative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("w must sum to 1 (got {total})")));
        }
        if self.fundamentals.len() != s || self.fundamentals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("f must be {s} finite values")));
        }
        let sc = &self.prior_scales;
        for (name, v) in [
            ("prior_scales.house", sc.house),
            ("prior_scales.mode", sc.mode),
            ("prior_scales.population", sc.population),
            ("prior_scales.sigma_state", sc.sigma_state),
            ("prior_scales.sigma_national", sc.sigma_national),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, names, n) in [
            ("state_names", &self.state_names, s),
            ("pollster_names", &self.pollster_names, self.n_pollsters),
            ("mode_names", &self.mode_names, self.n_modes),
            ("population_names", &self.population_names, self.n_populations),
        ] {
            if !names.is_empty() && names.len() != n {
                return Err(Error::Config(format!("{name} must have {n} entries")));
            }
        }
        Ok(SpecFactors {
            terminal: CholeskyFactor::from_rows("C", &self.terminal_cov, s)?,
            walk: CholeskyFactor::from_rows("Sigma_mu", &self.walk_cov, s)?,
            state_error: CholeskyFactor::from_rows("Sigma_u", &self.state_error_cov, s)?,
        })
    }

    /// Resolves a state given by name or by 0-based index.
    pub fn state_index(&self, key: &str) -> Option<usize> {
        lookup(key, &self.state_names, self.states)
    }

    pub fn pollster_index(&self, key: &str) -> Option<usize> {
        lookup(key, &self.pollster_names, self.n_pollsters)
    }

    pub fn mode_index(&self, key: &str) -> Option<usize> {
        lookup(key, &self.mode_names, self.n_modes)
    }

    pub fn population_index(&self, key: &str) -> Option<usize> {
        lookup(key, &self.population_names, self.n_populations)
    }

    pub fn state_label(&self, s: usize) -> String {
        self.state_names
            .get(s)
            .cloned()
            .unwrap_or_else(|| format!("state{s}"))
    }
}

fn lookup(key: &str, names: &[String], n: usize) -> Option<usize> {
    let key = key.trim();
    if let Some(i) = names.iter().position(|name| name == key) {
        return Some(i);
    }
    key.parse::<usize>().ok().filter(|&i| i < n)
}
