//! Log densities in the unconstrained, non-centered space.
//!
//! The baseline prior is a product of standard normals over the standardized
//! blocks and log-scale half-normals over the two poll-error scales. A prior
//! override with covariance multiplier `a`, standardized shift `v` and power
//! `rho` replaces one standardized block `z` (with Cholesky factor `L`,
//! `c = log|L|`) by
//!
//! `rho * (-|z - v|^2 / (2a) - (d/2) ln a - c - (d/2) ln 2pi) + c`,
//!
//! which is the powered centered density pulled back through `x = m + L z`.

use std::f64::consts::LN_2;

use super::{log_sigmoid, sigmoid, Model, PollMeta};
use crate::meta::{CompiledKnob, GaussianOverride, HalfNormalOverride, PriorComponent};
use crate::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Where a binomial term sits in the model.
#[derive(Debug, Clone, Copy)]
struct Placement {
    day: usize,
    state: Option<usize>,
    meta: PollMeta,
    slot: usize,
}

/// A binomial term with its power and cached `log(n choose y)`.
#[derive(Debug, Clone, Copy)]
struct Term {
    y: f64,
    n: f64,
    power: f64,
    log_coef: f64,
}

impl Term {
    fn value(&self, eta: f64) -> f64 {
        self.power * (self.log_coef + self.y * log_sigmoid(eta) + (self.n - self.y) * log_sigmoid(-eta))
    }

    fn d_eta(&self, eta: f64) -> f64 {
        self.power * (self.y - self.n * sigmoid(eta))
    }
}

fn std_normal_block(z: &[f64], grad: Option<&mut [f64]>) -> f64 {
    if let Some(g) = grad {
        for (gi, zi) in g.iter_mut().zip(z) {
            *gi -= zi;
        }
    }
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - z.len() as f64 * HALF_LN_2PI
}

fn overridden_block(z: &[f64], o: &GaussianOverride, c: f64, grad: Option<&mut [f64]>) -> f64 {
    let d = z.len() as f64;
    let mut sq = 0.0;
    match &o.shift {
        Some(v) => {
            for (zi, vi) in z.iter().zip(v) {
                sq += (zi - vi) * (zi - vi);
            }
        }
        None => sq = z.iter().map(|x| x * x).sum(),
    }
    if let Some(g) = grad {
        let k = o.power / o.scale;
        for (j, gi) in g.iter_mut().enumerate() {
            let v = o.shift.as_ref().map_or(0.0, |v| v[j]);
            *gi -= k * (z[j] - v);
        }
    }
    o.power * (-sq / (2.0 * o.scale) - 0.5 * d * o.scale.ln() - c - d * HALF_LN_2PI) + c
}

fn gaussian_block(
    z: &[f64],
    o: Option<&GaussianOverride>,
    c: f64,
    grad: Option<&mut [f64]>,
) -> f64 {
    match o {
        None => std_normal_block(z, grad),
        Some(o) => overridden_block(z, o, c, grad),
    }
}

/// Log-scale half-normal: `rho * log HN(e^zeta | s) + zeta`.
fn half_normal(zeta: f64, scale: f64, o: Option<&HalfNormalOverride>, grad: Option<&mut f64>) -> f64 {
    let (power, s) = match o {
        None => (1.0, scale),
        Some(o) => (o.power, scale * o.scale.sqrt()),
    };
    let sigma2 = (2.0 * zeta).exp();
    if let Some(g) = grad {
        *g += 1.0 - power * sigma2 / (s * s);
    }
    power * (LN_2 - s.ln() - HALF_LN_2PI - sigma2 / (2.0 * s * s)) + zeta
}

impl Model {
    /// `log |L|` of the factor mapping a standardized block to its centered
    /// counterpart.
    fn component_log_det(&self, component: PriorComponent) -> f64 {
        let sc = &self.spec.prior_scales;
        let f = &self.factors;
        match component {
            PriorComponent::Terminal => f.terminal.log_det_lower,
            PriorComponent::Walk => f.walk.log_det_lower,
            PriorComponent::StateError => f.state_error.log_det_lower,
            PriorComponent::House => self.layout.n_pollsters as f64 * sc.house.ln(),
            PriorComponent::Mode => self.layout.n_modes as f64 * sc.mode.ln(),
            PriorComponent::Population => self.layout.n_populations as f64 * sc.population.ln(),
            _ => 0.0,
        }
    }

    fn half_normal_scale(&self, component: PriorComponent) -> f64 {
        match component {
            PriorComponent::SigmaState => self.spec.prior_scales.sigma_state,
            _ => self.spec.prior_scales.sigma_national,
        }
    }

    fn check_input(&self, params: &[f64]) -> Result<()> {
        self.layout.check(params)?;
        if let Some(j) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::eval(self.layout.coordinate_name(j), "non-finite input"));
        }
        Ok(())
    }

    /// Linear predictor of a binomial term given a precomputed `mu_t` row.
    fn eta(&self, params: &[f64], mu_day: &[f64], u: &[f64], at: &Placement) -> f64 {
        let l = &self.layout;
        let sc = &self.spec.prior_scales;
        let (base, zeta) = match at.state {
            Some(s) => (mu_day[s] + u[s], params[l.log_sigma_state()]),
            None => (
                self.spec
                    .weights
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * (mu_day[k] + u[k]))
                    .sum(),
                params[l.log_sigma_national()],
            ),
        };
        base + sc.house * params[l.house().start + at.meta.pollster]
            + sc.mode * params[l.mode().start + at.meta.mode]
            + sc.population * params[l.population().start + at.meta.population]
            + zeta.exp() * params[l.eps().start + at.slot]
    }

    /// Backpropagates `d log p / d eta = g` into everything except `mu` and
    /// `u`, whose adjoints are accumulated in `gmu_day` and `gu`.
    fn eta_adjoint(
        &self,
        params: &[f64],
        at: &Placement,
        g: f64,
        gmu_day: &mut [f64],
        gu: &mut [f64],
        grad: &mut [f64],
    ) {
        let l = &self.layout;
        let sc = &self.spec.prior_scales;
        match at.state {
            Some(s) => {
                gmu_day[s] += g;
                gu[s] += g;
            }
            None => {
                for (k, w) in self.spec.weights.iter().enumerate() {
                    gmu_day[k] += w * g;
                    gu[k] += w * g;
                }
            }
        }
        grad[l.house().start + at.meta.pollster] += g * sc.house;
        grad[l.mode().start + at.meta.mode] += g * sc.mode;
        grad[l.population().start + at.meta.population] += g * sc.population;
        let zeta_ix = if at.state.is_some() {
            l.log_sigma_state()
        } else {
            l.log_sigma_national()
        };
        let sigma = params[zeta_ix].exp();
        let eps_ix = l.eps().start + at.slot;
        grad[eps_ix] += g * sigma;
        grad[zeta_ix] += g * sigma * params[eps_ix];
    }

    fn term_label(&self, at: &Placement) -> String {
        match self.polls.get(at.slot) {
            Some(p) => format!("likelihood[{}]", p.poll_id),
            None => format!("likelihood[slot {}]", at.slot),
        }
    }

    /// Every binomial term active under `knob`.
    fn active_terms(&self, knob: &CompiledKnob) -> Vec<(Placement, Term)> {
        let mut out = Vec::with_capacity(self.polls.len() + knob.hypothetical.len());
        for (i, poll) in self.polls.iter().enumerate() {
            let (meta, y, power, log_coef) = match &knob.likelihood[i] {
                None => (poll.meta, poll.y as f64, 1.0, self.log_coefs[i]),
                Some(o) => (o.meta, o.y, o.power, o.log_coef),
            };
            if power == 0.0 {
                continue;
            }
            out.push((
                Placement {
                    day: poll.day,
                    state: poll.state,
                    meta,
                    slot: i,
                },
                Term {
                    y,
                    n: poll.n as f64,
                    power,
                    log_coef,
                },
            ));
        }
        for h in &knob.hypothetical {
            if h.power == 0.0 {
                continue;
            }
            out.push((
                Placement {
                    day: h.day,
                    state: h.state,
                    meta: h.meta,
                    slot: h.slot,
                },
                Term {
                    y: h.y,
                    n: h.n,
                    power: h.power,
                    log_coef: h.log_coef,
                },
            ));
        }
        out
    }

    /// Baseline log prior in the unconstrained space, Jacobians included.
    pub fn log_prior(&self, params: &[f64]) -> Result<f64> {
        self.prior(params, &CompiledKnob::identity(self), None)
    }

    /// `sum_i gamma_i log Binomial(y_i | n_i, p_i)` over the observed polls.
    /// `powers` defaults to all ones.
    pub fn log_likelihood(&self, params: &[f64], powers: Option<&[f64]>) -> Result<f64> {
        self.check_input(params)?;
        if let Some(p) = powers {
            if p.len() != self.polls.len() {
                return Err(Error::Usage(format!(
                    "{} powers given for {} polls",
                    p.len(),
                    self.polls.len()
                )));
            }
            if p.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
                return Err(Error::Usage("likelihood powers must be nonnegative".into()));
            }
        }
        let mu = self.mu_trajectory(params);
        let u = self.state_errors(params);
        let s = self.layout.states;
        let mut total = 0.0;
        for (i, poll) in self.polls.iter().enumerate() {
            let power = powers.map_or(1.0, |p| p[i]);
            if power == 0.0 {
                continue;
            }
            let at = Placement {
                day: poll.day,
                state: poll.state,
                meta: poll.meta,
                slot: i,
            };
            let eta = self.eta(params, &mu[(poll.day - 1) * s..poll.day * s], &u, &at);
            let term = Term {
                y: poll.y as f64,
                n: poll.n as f64,
                power,
                log_coef: self.log_coefs[i],
            };
            let v = term.value(eta);
            if !v.is_finite() {
                return Err(Error::eval(format!("likelihood[{}]", poll.poll_id), "non-finite"));
            }
            total += v;
        }
        Ok(total)
    }

    /// Unnormalized log posterior under `knob`.
    pub fn log_posterior(&self, params: &[f64], knob: &CompiledKnob) -> Result<f64> {
        self.evaluate(params, knob, None)
    }

    /// Log posterior under `knob`; its gradient is written into `grad`.
    pub fn log_posterior_grad(
        &self,
        params: &[f64],
        knob: &CompiledKnob,
        grad: &mut [f64],
    ) -> Result<f64> {
        if grad.len() != self.layout.dim() {
            return Err(Error::Config("gradient buffer has the wrong length".into()));
        }
        grad.fill(0.0);
        self.evaluate(params, knob, Some(grad))
    }

    fn prior(&self, params: &[f64], knob: &CompiledKnob, mut grad: Option<&mut [f64]>) -> Result<f64> {
        self.check_input(params)?;
        let l = &self.layout;
        let mut total = 0.0;
        for component in PriorComponent::ALL {
            let o = knob.gaussian[component.slot()].as_ref();
            let ranges = match component {
                PriorComponent::Terminal => vec![l.terminal()],
                PriorComponent::Walk => (1..l.days).map(|t| l.walk_day(t)).collect(),
                PriorComponent::StateError => vec![l.state_error()],
                PriorComponent::House => vec![l.house()],
                PriorComponent::Mode => vec![l.mode()],
                PriorComponent::Population => vec![l.population()],
                PriorComponent::PollError => vec![l.eps()],
                PriorComponent::SigmaState | PriorComponent::SigmaNational => {
                    let ix = if component == PriorComponent::SigmaState {
                        l.log_sigma_state()
                    } else {
                        l.log_sigma_national()
                    };
                    let hn = knob.half_normal[component.slot()].as_ref();
                    total += half_normal(
                        params[ix],
                        self.half_normal_scale(component),
                        hn,
                        grad.as_deref_mut().map(|g| &mut g[ix]),
                    );
                    continue;
                }
            };
            let c = if o.is_some() {
                self.component_log_det(component)
            } else {
                0.0
            };
            for r in ranges {
                total += gaussian_block(
                    &params[r.clone()],
                    o,
                    c,
                    grad.as_deref_mut().map(|g| &mut g[r]),
                );
            }
        }
        if !total.is_finite() {
            return Err(Error::eval("prior", "non-finite log density"));
        }
        Ok(total)
    }

    fn evaluate(&self, params: &[f64], knob: &CompiledKnob, mut grad: Option<&mut [f64]>) -> Result<f64> {
        let prior = self.prior(params, knob, grad.as_deref_mut())?;
        let l = &self.layout;
        let s = l.states;
        let mu = self.mu_trajectory(params);
        let u = self.state_errors(params);
        let terms = self.active_terms(knob);
        let mut like = 0.0;
        let mut gmu = vec![0.0; if grad.is_some() { mu.len() } else { 0 }];
        let mut gu = vec![0.0; s];
        for (at, term) in &terms {
            let row = (at.day - 1) * s..at.day * s;
            let eta = self.eta(params, &mu[row.clone()], &u, at);
            let v = term.value(eta);
            if !v.is_finite() {
                return Err(Error::eval(self.term_label(at), "non-finite likelihood term"));
            }
            like += v;
            if let Some(g) = grad.as_deref_mut() {
                let ge = term.d_eta(eta);
                self.eta_adjoint(params, at, ge, &mut gmu[row], &mut gu, g);
            }
        }
        if let Some(g) = grad {
            // mu_t = f + L_C z_T + L_mu sum_{tau >= t} z_walk[tau]
            let mut prefix = vec![0.0; s];
            for t in 1..l.days {
                for k in 0..s {
                    prefix[k] += gmu[(t - 1) * s + k];
                }
                self.factors
                    .walk
                    .add_mul_transpose(&prefix, &mut g[l.walk_day(t)]);
            }
            for k in 0..s {
                prefix[k] += gmu[(l.days - 1) * s + k];
            }
            self.factors
                .terminal
                .add_mul_transpose(&prefix, &mut g[l.terminal()]);
            self.factors
                .state_error
                .add_mul_transpose(&gu, &mut g[l.state_error()]);
        }
        Ok(prior + like)
    }

    /// `log h = log p(theta | knob) - log p(theta | identity)`, summing only
    /// the factors the knob changes.
    pub fn log_h(&self, params: &[f64], knob: &CompiledKnob) -> Result<f64> {
        self.check_input(params)?;
        let l = &self.layout;
        let mut total = 0.0;
        for component in PriorComponent::ALL {
            let slot = component.slot();
            if let Some(o) = &knob.half_normal[slot] {
                let ix = if component == PriorComponent::SigmaState {
                    l.log_sigma_state()
                } else {
                    l.log_sigma_national()
                };
                let scale = self.half_normal_scale(component);
                total += half_normal(params[ix], scale, Some(o), None)
                    - half_normal(params[ix], scale, None, None);
            }
            let Some(o) = &knob.gaussian[slot] else {
                continue;
            };
            let c = self.component_log_det(component);
            let ranges = match component {
                PriorComponent::Terminal => vec![l.terminal()],
                PriorComponent::Walk => (1..l.days).map(|t| l.walk_day(t)).collect(),
                PriorComponent::StateError => vec![l.state_error()],
                PriorComponent::House => vec![l.house()],
                PriorComponent::Mode => vec![l.mode()],
                PriorComponent::Population => vec![l.population()],
                PriorComponent::PollError => vec![l.eps()],
                _ => Vec::new(),
            };
            for r in ranges {
                let z = &params[r];
                total += overridden_block(z, o, c, None) - std_normal_block(z, None);
            }
        }

        if knob.likelihood_list.is_empty() && knob.hypothetical.is_empty() {
            return finite_h(total);
        }
        let s = l.states;
        let u = self.state_errors(params);
        let mut mu_day = vec![0.0; s];
        for &i in &knob.likelihood_list {
            let poll = &self.polls[i];
            let o = knob.likelihood[i].as_ref().expect("listed override");
            self.mu_at(params, poll.day, &mut mu_day);
            let base_at = Placement {
                day: poll.day,
                state: poll.state,
                meta: poll.meta,
                slot: i,
            };
            let base = Term {
                y: poll.y as f64,
                n: poll.n as f64,
                power: 1.0,
                log_coef: self.log_coefs[i],
            };
            total -= base.value(self.eta(params, &mu_day, &u, &base_at));
            if o.power != 0.0 {
                let at = Placement {
                    meta: o.meta,
                    ..base_at
                };
                let term = Term {
                    y: o.y,
                    power: o.power,
                    log_coef: o.log_coef,
                    ..base
                };
                total += term.value(self.eta(params, &mu_day, &u, &at));
            }
        }
        for h in &knob.hypothetical {
            if h.power == 0.0 {
                continue;
            }
            self.mu_at(params, h.day, &mut mu_day);
            let at = Placement {
                day: h.day,
                state: h.state,
                meta: h.meta,
                slot: h.slot,
            };
            let term = Term {
                y: h.y,
                n: h.n,
                power: h.power,
                log_coef: h.log_coef,
            };
            total += term.value(self.eta(params, &mu_day, &u, &at));
        }
        finite_h(total)
    }
}

fn finite_h(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::eval("log_h", "non-finite perturbation"))
    }
}
