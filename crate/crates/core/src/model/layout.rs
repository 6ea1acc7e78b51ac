use std::ops::{Deref, DerefMut, Range};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dimensions of the unconstrained parameter block.
///
/// Order: terminal innovations, walk innovations (one `S`-block per day
/// `t = 1..T-1`), state errors, house / mode / population effects, the two
/// log poll-error scales, then one standardized error per poll slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub states: usize,
    pub days: usize,
    pub n_pollsters: usize,
    pub n_modes: usize,
    pub n_populations: usize,
    pub n_slots: usize,
}

impl Layout {
    pub fn terminal(&self) -> Range<usize> {
        0..self.states
    }

    pub fn walk(&self) -> Range<usize> {
        let start = self.states;
        start..start + self.states * (self.days - 1)
    }

    /// Walk innovation block driving `mu_t - mu_{t+1}`, for `t` in `1..T`.
    pub fn walk_day(&self, t: usize) -> Range<usize> {
        debug_assert!(t >= 1 && t < self.days);
        let start = self.states + (t - 1) * self.states;
        start..start + self.states
    }

    pub fn state_error(&self) -> Range<usize> {
        let start = self.states * self.days;
        start..start + self.states
    }

    pub fn house(&self) -> Range<usize> {
        let start = self.state_error().end;
        start..start + self.n_pollsters
    }

    pub fn mode(&self) -> Range<usize> {
        let start = self.house().end;
        start..start + self.n_modes
    }

    pub fn population(&self) -> Range<usize> {
        let start = self.mode().end;
        start..start + self.n_populations
    }

    pub fn log_sigma_state(&self) -> usize {
        self.population().end
    }

    pub fn log_sigma_national(&self) -> usize {
        self.population().end + 1
    }

    pub fn eps(&self) -> Range<usize> {
        let start = self.population().end + 2;
        start..start + self.n_slots
    }

    pub fn dim(&self) -> usize {
        self.eps().end
    }

    /// Named blocks in storage order, as written to draws-file headers.
    pub fn blocks(&self) -> Vec<(&'static str, Range<usize>)> {
        vec![
            ("z_terminal", self.terminal()),
            ("z_walk", self.walk()),
            ("z_state_error", self.state_error()),
            ("house_raw", self.house()),
            ("mode_raw", self.mode()),
            ("population_raw", self.population()),
            ("log_sigma_state", self.log_sigma_state()..self.log_sigma_state() + 1),
            ("log_sigma_national", self.log_sigma_national()..self.log_sigma_national() + 1),
            ("eps", self.eps()),
        ]
    }

    /// Human-readable name of coordinate `j`.
    pub fn coordinate_name(&self, j: usize) -> String {
        for (name, range) in self.blocks() {
            if range.contains(&j) {
                return if range.len() == 1 {
                    name.to_string()
                } else {
                    format!("{name}[{}]", j - range.start)
                };
            }
        }
        format!("theta[{j}]")
    }

    pub fn check(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.dim() {
            return Err(Error::Config(format!(
                "parameter vector has length {}, layout expects {}",
                params.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// A point in the unconstrained, non-centered parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn zeros(layout: &Layout) -> Self {
        Self(vec![0.0; layout.dim()])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParameterVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParameterVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}
