//! The poll-aggregation state-space model.
//!
//! Polls are binomial with a logit-additive success probability built from a
//! latent state trajectory `mu` (a correlated random walk anchored on election
//! day by the fundamentals forecast), state errors `u`, house / mode /
//! population effects and a poll-specific error. Everything is sampled in a
//! non-centered parameterization: all latent blocks are deterministic
//! transforms of standardized innovations.

mod density;
mod layout;
mod poll;
mod spec;
#[cfg(test)]
mod tests;

use std::collections::HashMap;

pub use layout::{Layout, ParameterVector};
pub use poll::{PollMeta, PollObservation};
pub use spec::{CholeskyFactor, ModelSpec, PriorScales, SpecFactors};

pub(crate) use poll::check_placement;

use crate::meta::PriorComponent;
use crate::{Error, Result};

/// `log(n choose y)` for real-valued counts.
pub fn log_binomial_coefficient(n: f64, y: f64) -> f64 {
    libm::lgamma(n + 1.0) - libm::lgamma(y + 1.0) - libm::lgamma(n - y + 1.0)
}

/// `log(1 / (1 + exp(-x)))` without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Latent quantities reconstructed from a [`ParameterVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    /// `mu[t - 1][s]` is the logit-scale support in state `s` on day `t`.
    pub mu: Vec<Vec<f64>>,
    pub u: Vec<f64>,
    pub house: Vec<f64>,
    pub mode: Vec<f64>,
    pub population: Vec<f64>,
    pub sigma_state: f64,
    pub sigma_national: f64,
    /// Success probability of each observed poll.
    pub p: Vec<f64>,
}

/// A model instance: spec, observed polls and the number of poll-error slots.
///
/// Immutable after construction and cheap to share behind an `Arc`.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    factors: SpecFactors,
    polls: Vec<PollObservation>,
    poll_lookup: HashMap<String, usize>,
    log_coefs: Vec<f64>,
    layout: Layout,
}

impl Model {
    /// `n_slots` is the total number of poll-error slots: the observed polls
    /// plus any reserved for hypothetical or future polls.
    pub fn new(spec: ModelSpec, polls: Vec<PollObservation>, n_slots: usize) -> Result<Self> {
        let factors = spec.factorize()?;
        if n_slots < polls.len() {
            return Err(Error::Config(format!(
                "{n_slots} error slots cannot hold {} observed polls",
                polls.len()
            )));
        }
        let mut poll_lookup = HashMap::with_capacity(polls.len());
        for (i, poll) in polls.iter().enumerate() {
            poll.validate(&spec)?;
            if poll_lookup.insert(poll.poll_id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate poll id `{}`", poll.poll_id)));
            }
        }
        let log_coefs = polls
            .iter()
            .map(|p| log_binomial_coefficient(p.n as f64, p.y as f64))
            .collect();
        let layout = Layout {
            states: spec.states,
            days: spec.days,
            n_pollsters: spec.n_pollsters,
            n_modes: spec.n_modes,
            n_populations: spec.n_populations,
            n_slots,
        };
        Ok(Self {
            spec,
            factors,
            polls,
            poll_lookup,
            log_coefs,
            layout,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn factors(&self) -> &SpecFactors {
        &self.factors
    }

    pub fn polls(&self) -> &[PollObservation] {
        &self.polls
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn poll_index(&self, id: &str) -> Option<usize> {
        self.poll_lookup.get(id).copied()
    }

    /// First slot not taken by an observed poll.
    pub fn first_free_slot(&self) -> usize {
        self.polls.len()
    }

    /// Dimension of one replica of a Gaussian prior component.
    pub(crate) fn block_dim(&self, component: PriorComponent) -> usize {
        let l = &self.layout;
        match component {
            PriorComponent::Terminal | PriorComponent::Walk | PriorComponent::StateError => {
                l.states
            }
            PriorComponent::House => l.n_pollsters,
            PriorComponent::Mode => l.n_modes,
            PriorComponent::Population => l.n_populations,
            PriorComponent::PollError => l.n_slots,
            PriorComponent::SigmaState | PriorComponent::SigmaNational => 1,
        }
    }

    /// Maps a centered mean shift `delta` into standardized coordinates.
    pub(crate) fn standardize_shift(&self, component: PriorComponent, delta: &[f64]) -> Vec<f64> {
        let sc = &self.spec.prior_scales;
        match component {
            PriorComponent::Terminal => self.factors.terminal.solve_lower(delta),
            PriorComponent::Walk => self.factors.walk.solve_lower(delta),
            PriorComponent::StateError => self.factors.state_error.solve_lower(delta),
            PriorComponent::House => delta.iter().map(|d| d / sc.house).collect(),
            PriorComponent::Mode => delta.iter().map(|d| d / sc.mode).collect(),
            PriorComponent::Population => delta.iter().map(|d| d / sc.population).collect(),
            _ => delta.to_vec(),
        }
    }

    /// `mu_T = f + L_C z_T`.
    pub fn mu_terminal(&self, params: &[f64], out: &mut [f64]) {
        let l = &self.layout;
        self.factors.terminal.mul(&params[l.terminal()], out);
        for (o, f) in out.iter_mut().zip(&self.spec.fundamentals) {
            *o += f;
        }
    }

    /// `mu_t` for one day (`1..=T`) without building the whole trajectory.
    pub fn mu_at(&self, params: &[f64], day: usize, out: &mut [f64]) {
        let l = &self.layout;
        let s = l.states;
        self.mu_terminal(params, out);
        if day < l.days {
            let mut acc = vec![0.0; s];
            for t in day..l.days {
                for (a, z) in acc.iter_mut().zip(&params[l.walk_day(t)]) {
                    *a += z;
                }
            }
            let mut step = vec![0.0; s];
            self.factors.walk.mul(&acc, &mut step);
            for (o, d) in out.iter_mut().zip(&step) {
                *o += d;
            }
        }
    }

    /// Full trajectory, row-major: entry `(t - 1) * S + s`.
    pub fn mu_trajectory(&self, params: &[f64]) -> Vec<f64> {
        let l = &self.layout;
        let s = l.states;
        let mut mu = vec![0.0; s * l.days];
        let last = (l.days - 1) * s;
        self.mu_terminal(params, &mut mu[last..]);
        let mut step = vec![0.0; s];
        for t in (1..l.days).rev() {
            self.factors.walk.mul(&params[l.walk_day(t)], &mut step);
            let (head, tail) = mu.split_at_mut(t * s);
            let next = &tail[..s];
            let cur = &mut head[(t - 1) * s..];
            for k in 0..s {
                cur[k] = next[k] + step[k];
            }
        }
        mu
    }

    pub fn state_errors(&self, params: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.layout.states];
        self.factors
            .state_error
            .mul(&params[self.layout.state_error()], &mut u);
        u
    }

    /// Reconstructs the latent state implied by `params`.
    pub fn transform(&self, params: &[f64]) -> Result<LatentState> {
        self.layout.check(params)?;
        let l = &self.layout;
        let s = l.states;
        let sc = &self.spec.prior_scales;
        let mu_flat = self.mu_trajectory(params);
        check_finite("mu", &mu_flat)?;
        let mu: Vec<Vec<f64>> = mu_flat.chunks(s).map(|c| c.to_vec()).collect();
        let u = self.state_errors(params);
        check_finite("u", &u)?;
        let house: Vec<f64> = params[l.house()].iter().map(|r| r * sc.house).collect();
        let mode: Vec<f64> = params[l.mode()].iter().map(|r| r * sc.mode).collect();
        let population: Vec<f64> = params[l.population()]
            .iter()
            .map(|r| r * sc.population)
            .collect();
        let sigma_state = params[l.log_sigma_state()].exp();
        let sigma_national = params[l.log_sigma_national()].exp();
        if !(sigma_state.is_finite() && sigma_state > 0.0) {
            return Err(Error::eval("sigma_state", "not a positive finite value"));
        }
        if !(sigma_national.is_finite() && sigma_national > 0.0) {
            return Err(Error::eval("sigma_national", "not a positive finite value"));
        }
        let eps = &params[l.eps()];
        let mut p = Vec::with_capacity(self.polls.len());
        for (i, poll) in self.polls.iter().enumerate() {
            let mu_day = &mu[poll.day - 1];
            let base = match poll.state {
                Some(st) => mu_day[st] + u[st],
                None => (0..s)
                    .map(|k| self.spec.weights[k] * (mu_day[k] + u[k]))
                    .sum(),
            };
            let sigma = if poll.state.is_some() {
                sigma_state
            } else {
                sigma_national
            };
            let eta = base
                + house[poll.meta.pollster]
                + mode[poll.meta.mode]
                + population[poll.meta.population]
                + sigma * eps[i];
            let pi = sigmoid(eta);
            if !pi.is_finite() {
                return Err(Error::eval(
                    format!("p[{}]", poll.poll_id),
                    "non-finite success probability",
                ));
            }
            p.push(pi);
        }
        Ok(LatentState {
            mu,
            u,
            house,
            mode,
            population,
            sigma_state,
            sigma_national,
            p,
        })
    }
}

fn check_finite(component: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::eval(
            format!("{component}[{i}]"),
            "non-finite value",
        )),
        None => Ok(()),
    }
}
