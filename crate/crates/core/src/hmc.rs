//! Hamiltonian Monte Carlo: the rejuvenation kernel and the brute-force
//! reference sampler.
//!
//! Trajectories have a fixed number of leapfrog steps and a diagonal metric.
//! `inv_metric` holds the metric's inverse, i.e. per-coordinate variances, so
//! momenta are drawn as `p_j ~ N(0, 1 / inv_metric_j)`.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::meta::CompiledKnob;
use crate::model::Model;
use crate::rng::{stream, Purpose};
use crate::{Error, Result};

/// Energy errors beyond this are treated as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// A differentiable log density.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    /// Returns `log p(x)` and writes its gradient into `grad`.
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64>;
}

/// The model's posterior under one compiled knob.
pub struct PosteriorTarget<'a> {
    pub model: &'a Model,
    pub knob: &'a CompiledKnob,
}

impl Target for PosteriorTarget<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.model.log_posterior_grad(x, self.knob, grad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmcConfig {
    pub leapfrog_steps: usize,
    pub step_size: f64,
    /// Diagonal of the inverse metric (per-coordinate variances).
    pub inv_metric: Vec<f64>,
    pub sweeps: usize,
    /// Step sizes are drawn uniformly from `step_size * (1 +- jitter)`.
    pub jitter: f64,
}

impl HmcConfig {
    pub fn unit(dim: usize, step_size: f64) -> Self {
        Self {
            leapfrog_steps: 10,
            step_size,
            inv_metric: vec![1.0; dim],
            sweeps: 3,
            jitter: 0.1,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::Config("step size must be positive".into()));
        }
        if self.leapfrog_steps == 0 {
            return Err(Error::Config("leapfrog step count must be positive".into()));
        }
        if self.inv_metric.len() != dim || self.inv_metric.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!(
                "inverse metric must hold {dim} positive entries"
            )));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::Config("jitter must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// A position with its cached log density and gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct HmcState {
    pub position: Vec<f64>,
    pub log_density: f64,
    pub grad: Vec<f64>,
}

impl HmcState {
    pub fn new(target: &dyn Target, position: Vec<f64>) -> Result<Self> {
        let mut grad = vec![0.0; position.len()];
        let log_density = target.log_density_grad(&position, &mut grad)?;
        if !log_density.is_finite() {
            return Err(Error::eval("log density", "non-finite at the initial state"));
        }
        Ok(Self {
            position,
            log_density,
            grad,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionInfo {
    pub accepted: bool,
    pub accept_prob: f64,
    /// `H(proposal) - H(current)`; infinite for divergent trajectories.
    pub energy_error: f64,
    pub divergent: bool,
}

fn kinetic(p: &[f64], inv_metric: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
}

/// Runs `steps` leapfrog steps from `(state, p)` in place. Returns `false`
/// if the density could not be evaluated along the way.
fn integrate(
    target: &dyn Target,
    state: &mut HmcState,
    p: &mut [f64],
    eps: f64,
    steps: usize,
    inv_metric: &[f64],
) -> bool {
    for _ in 0..steps {
        for (pj, gj) in p.iter_mut().zip(&state.grad) {
            *pj += 0.5 * eps * gj;
        }
        for ((x, pj), m) in state.position.iter_mut().zip(p.iter()).zip(inv_metric) {
            *x += eps * m * pj;
        }
        match target.log_density_grad(&state.position, &mut state.grad) {
            Ok(v) if v.is_finite() => state.log_density = v,
            _ => return false,
        }
        for (pj, gj) in p.iter_mut().zip(&state.grad) {
            *pj += 0.5 * eps * gj;
        }
    }
    true
}

/// Deterministic leapfrog integration; returns the final position and momentum.
pub fn leapfrog(
    target: &dyn Target,
    position: &[f64],
    momentum: &[f64],
    eps: f64,
    steps: usize,
    inv_metric: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut state = HmcState::new(target, position.to_vec())?;
    let mut p = momentum.to_vec();
    if !integrate(target, &mut state, &mut p, eps, steps, inv_metric) {
        return Err(Error::eval("leapfrog", "trajectory left the support"));
    }
    Ok((state.position, p))
}

/// One Metropolis-corrected HMC transition. Divergent trajectories are
/// rejected and flagged.
pub fn hmc_transition(
    state: &mut HmcState,
    target: &dyn Target,
    config: &HmcConfig,
    rng: &mut ChaCha8Rng,
) -> TransitionInfo {
    let p0: Vec<f64> = config
        .inv_metric
        .iter()
        .map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt())
        .collect();
    let eps = if config.jitter > 0.0 {
        config.step_size * (1.0 + config.jitter * (2.0 * rng.random::<f64>() - 1.0))
    } else {
        config.step_size
    };
    let h0 = -state.log_density + kinetic(&p0, &config.inv_metric);
    let mut proposal = state.clone();
    let mut p = p0;
    let ok = integrate(target, &mut proposal, &mut p, eps, config.leapfrog_steps, &config.inv_metric);
    let u: f64 = rng.random();
    if !ok {
        return TransitionInfo {
            accepted: false,
            accept_prob: 0.0,
            energy_error: f64::INFINITY,
            divergent: true,
        };
    }
    let h1 = -proposal.log_density + kinetic(&p, &config.inv_metric);
    let energy_error = h1 - h0;
    if !energy_error.is_finite() || energy_error > DIVERGENCE_THRESHOLD {
        return TransitionInfo {
            accepted: false,
            accept_prob: 0.0,
            energy_error: if energy_error.is_nan() { f64::INFINITY } else { energy_error },
            divergent: true,
        };
    }
    let accept_prob = (-energy_error).exp().min(1.0);
    let accepted = u.ln() < -energy_error;
    if accepted {
        *state = proposal;
    }
    TransitionInfo {
        accepted,
        accept_prob,
        energy_error,
        divergent: false,
    }
}

/// Nesterov dual averaging of `log step_size` toward a target acceptance.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    t: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    pub fn new(step_size: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * step_size).ln(),
            target,
            h_bar: 0.0,
            log_eps: step_size.ln(),
            log_eps_bar: 0.0,
            t: 0.0,
        }
    }

    pub fn step_size(&self) -> f64 {
        self.log_eps.exp()
    }

    /// Averaged iterate, the step size to use after adaptation.
    pub fn final_step_size(&self) -> f64 {
        if self.t == 0.0 {
            self.step_size()
        } else {
            self.log_eps_bar.exp()
        }
    }

    pub fn update(&mut self, accept_prob: f64) -> f64 {
        self.t += 1.0;
        let w = 1.0 / (self.t + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        self.log_eps = self.mu - self.t.sqrt() / Self::GAMMA * self.h_bar;
        let eta = self.t.powf(-Self::KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
        self.step_size()
    }
}

/// Outcome of [`adapt_kernel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adaptation {
    pub config: HmcConfig,
    /// Mean acceptance probability over the last half of the pilot.
    pub pilot_accept: f64,
    pub warning: Option<String>,
}

/// Pilot chains used by [`adapt_kernel`].
pub const PILOT_CHAINS: usize = 16;
/// Dual-averaging iterations in the pilot.
pub const PILOT_ITERATIONS: usize = 40;

/// Fits the inverse metric to the particle cloud's per-coordinate variances
/// and tunes the step size with a short dual-averaging pilot started from a
/// spread of particles. Pilot states are discarded.
pub fn adapt_kernel(
    particles: &[Vec<f64>],
    target: &dyn Target,
    base: &HmcConfig,
    seed: u64,
    step: u64,
) -> Result<Adaptation> {
    let r = particles.len();
    if r == 0 {
        return Err(Error::Usage("cannot adapt on an empty cloud".into()));
    }
    let dim = particles[0].len();
    let mut mean = vec![0.0; dim];
    for x in particles {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= r as f64);
    let mut var = vec![0.0; dim];
    for x in particles {
        for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let denom = (r.max(2) - 1) as f64;
    var.iter_mut().for_each(|s| *s /= denom);
    let degenerate = r < 2 || var.iter().all(|v| *v <= 1e-8);
    let mut warning = None;
    let inv_metric = if degenerate {
        warning = Some("particle cloud is degenerate; using a unit metric".to_string());
        log::warn!("particle cloud is degenerate; using a unit metric");
        vec![1.0; dim]
    } else {
        var.iter().map(|v| v.max(1e-8)).collect()
    };
    let mut config = HmcConfig {
        inv_metric,
        ..base.clone()
    };
    let chains = PILOT_CHAINS.min(r);
    let mut states: Vec<(HmcState, ChaCha8Rng)> = (0..chains)
        .map(|c| {
            let ix = c * r / chains;
            HmcState::new(target, particles[ix].clone())
                .map(|s| (s, stream(seed, Purpose::Pilot, step, c as u64)))
        })
        .collect::<Result<_>>()?;
    let mut da = DualAveraging::new(config.step_size, 0.8);
    let mut late = 0.0;
    let mut late_n = 0usize;
    for it in 0..PILOT_ITERATIONS {
        let cfg = HmcConfig {
            step_size: da.step_size(),
            ..config.clone()
        };
        let probs: Vec<f64> = states
            .par_iter_mut()
            .map(|(s, rng)| hmc_transition(s, target, &cfg, rng).accept_prob)
            .collect();
        let mean_accept = probs.iter().sum::<f64>() / probs.len() as f64;
        da.update(mean_accept);
        if it >= PILOT_ITERATIONS / 2 {
            late += mean_accept;
            late_n += 1;
        }
    }
    config.step_size = da.final_step_size();
    Ok(Adaptation {
        config,
        pilot_accept: late / late_n.max(1) as f64,
        warning,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub leapfrog_steps: usize,
    pub jitter: f64,
    pub initial_step_size: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            iterations: 1200,
            burn_in: 200,
            leapfrog_steps: 10,
            jitter: 0.1,
            initial_step_size: 0.1,
        }
    }
}

/// Draws and metadata from one reference chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRun {
    pub draws: Vec<Vec<f64>>,
    pub accept_rate: f64,
    pub divergences: usize,
    /// Set when more than 10% of retained transitions diverged.
    pub warning: Option<String>,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub seconds: f64,
}

fn regularized_variance(window: &[Vec<f64>]) -> Vec<f64> {
    let n = window.len() as f64;
    let dim = window[0].len();
    let mut mean = vec![0.0; dim];
    for x in window {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; dim];
    for x in window {
        for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
            *s += (v - m) * (v - m) / (n - 1.0);
        }
    }
    var.iter()
        .map(|v| (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0)))
        .collect()
}

/// A single HMC chain targeting `target`, with step-size and diagonal-metric
/// adaptation during burn-in. Returns `iterations - burn_in` draws.
///
/// Burn-in is split 3/8 : 3/8 : 1/4: step-size adaptation on a unit metric,
/// a window whose draws estimate the metric, then step-size re-adaptation.
pub fn reference_mcmc(
    target: &dyn Target,
    init: Vec<f64>,
    config: &ReferenceConfig,
    seed: u64,
) -> Result<ReferenceRun> {
    if config.iterations <= config.burn_in {
        return Err(Error::Usage("iterations must exceed burn-in".into()));
    }
    let started = Instant::now();
    let dim = target.dim();
    let mut rng = stream(seed, Purpose::Reference, 0, 0);
    let mut state = HmcState::new(target, init)?;
    let mut hmc = HmcConfig {
        leapfrog_steps: config.leapfrog_steps,
        step_size: config.initial_step_size,
        inv_metric: vec![1.0; dim],
        sweeps: 1,
        jitter: config.jitter,
    };
    hmc.validate(dim)?;
    let w1 = config.burn_in * 3 / 8;
    let w2 = config.burn_in * 3 / 4;
    let mut da = DualAveraging::new(hmc.step_size, 0.8);
    let mut window = Vec::new();
    for it in 0..config.burn_in {
        hmc.step_size = da.step_size();
        let info = hmc_transition(&mut state, target, &hmc, &mut rng);
        da.update(info.accept_prob);
        if it >= w1 && it < w2 {
            window.push(state.position.clone());
        }
        if it + 1 == w2 && window.len() >= 10 {
            hmc.inv_metric = regularized_variance(&window);
            da = DualAveraging::new(da.final_step_size(), 0.8);
        }
    }
    hmc.step_size = da.final_step_size();
    let kept = config.iterations - config.burn_in;
    let mut draws = Vec::with_capacity(kept);
    let mut accepted = 0usize;
    let mut divergences = 0usize;
    for _ in 0..kept {
        let info = hmc_transition(&mut state, target, &hmc, &mut rng);
        accepted += info.accepted as usize;
        divergences += info.divergent as usize;
        draws.push(state.position.clone());
    }
    let warning = (divergences as f64 > 0.1 * kept as f64).then(|| {
        format!("{divergences} of {kept} retained transitions diverged")
    });
    if let Some(w) = &warning {
        log::warn!("reference chain {seed}: {w}");
    }
    Ok(ReferenceRun {
        draws,
        accept_rate: accepted as f64 / kept as f64,
        divergences,
        warning,
        step_size: hmc.step_size,
        inv_metric: hmc.inv_metric,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Overdispersed start for a reference chain: uniform on `(-1, 1)`.
pub fn random_init(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, Purpose::Reference, 1, 0);
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Reference chains for `model` under `knob`, one per seed, run in parallel.
pub fn reference_chains(
    model: &Model,
    knob: &CompiledKnob,
    config: &ReferenceConfig,
    seeds: &[u64],
) -> Result<Vec<ReferenceRun>> {
    let target = PosteriorTarget { model, knob };
    seeds
        .par_iter()
        .map(|&s| reference_mcmc(&target, random_init(model.dim(), s), config, s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent Gaussian with per-coordinate scales.
    struct Gauss {
        sd: Vec<f64>,
    }

    impl Target for Gauss {
        fn dim(&self) -> usize {
            self.sd.len()
        }

        fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
            let mut lp = 0.0;
            for ((g, v), s) in grad.iter_mut().zip(x).zip(&self.sd) {
                *g = -v / (s * s);
                lp -= 0.5 * v * v / (s * s);
            }
            Ok(lp)
        }
    }

    #[test]
    fn leapfrog_is_reversible() {
        let target = Gauss {
            sd: vec![1.0, 0.5, 2.0],
        };
        let x0 = vec![0.3, -1.2, 2.0];
        let p0 = vec![0.5, 0.1, -0.7];
        let m = vec![1.0, 0.3, 2.5];
        let (x1, p1) = leapfrog(&target, &x0, &p0, 0.1, 25, &m).unwrap();
        let flipped: Vec<f64> = p1.iter().map(|v| -v).collect();
        let (x2, p2) = leapfrog(&target, &x1, &flipped, 0.1, 25, &m).unwrap();
        for j in 0..3 {
            assert!((x2[j] - x0[j]).abs() < 1e-8);
            assert!((p2[j] + p0[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn acceptance_tends_to_one_as_step_shrinks() {
        let target = Gauss { sd: vec![1.0; 5] };
        let mut last = 0.0;
        for eps in [0.8, 0.4, 0.1, 0.01, 0.001] {
            let mut cfg = HmcConfig::unit(5, eps);
            cfg.jitter = 0.0;
            let mut rng = stream(1, Purpose::Test, 0, 0);
            let mut state = HmcState::new(&target, vec![0.5; 5]).unwrap();
            let n = 400;
            let mean: f64 = (0..n)
                .map(|_| hmc_transition(&mut state, &target, &cfg, &mut rng).accept_prob)
                .sum::<f64>()
                / n as f64;
            assert!(mean >= last - 0.02, "acceptance {mean} after {last}");
            last = mean;
        }
        assert!(last > 0.999);
    }

    #[test]
    fn divergent_trajectories_are_rejected() {
        struct Wall;
        impl Target for Wall {
            fn dim(&self) -> usize {
                1
            }
            fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
                if x[0].abs() > 1.0 {
                    return Err(Error::eval("x", "outside"));
                }
                grad[0] = 0.0;
                Ok(0.0)
            }
        }
        let mut state = HmcState::new(&Wall, vec![0.0]).unwrap();
        let cfg = HmcConfig::unit(1, 10.0);
        let mut rng = stream(2, Purpose::Test, 0, 0);
        let info = hmc_transition(&mut state, &Wall, &cfg, &mut rng);
        assert!(info.divergent && !info.accepted);
        assert_eq!(state.position, vec![0.0]);
    }

    #[test]
    fn adaptation_uses_cloud_variance_and_reaches_target_acceptance() {
        let target = Gauss {
            sd: vec![1.0, 3.0, 0.2],
        };
        let mut rng = stream(4, Purpose::Test, 0, 0);
        let cloud: Vec<Vec<f64>> = (0..500)
            .map(|_| {
                target
                    .sd
                    .iter()
                    .map(|s| s * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let a = adapt_kernel(&cloud, &target, &HmcConfig::unit(3, 1.0), 9, 0).unwrap();
        assert!(a.warning.is_none());
        for j in 0..3 {
            let m: f64 = cloud.iter().map(|x| x[j]).sum::<f64>() / 500.0;
            let v: f64 = cloud.iter().map(|x| (x[j] - m).powi(2)).sum::<f64>() / 499.0;
            assert!((a.config.inv_metric[j] - v).abs() < 1e-12);
        }
        assert!((0.6..=0.95).contains(&a.pilot_accept), "{}", a.pilot_accept);
        let same = vec![vec![0.1, 0.2, 0.3]; 10];
        let b = adapt_kernel(&same, &target, &HmcConfig::unit(3, 0.5), 9, 0).unwrap();
        assert_eq!(b.config.inv_metric, vec![1.0; 3]);
        assert!(b.warning.is_some());
    }

    #[test]
    fn reference_chain_recovers_gaussian_moments() {
        let target = Gauss { sd: vec![1.0, 1.0] };
        let cfg = ReferenceConfig {
            iterations: 6000,
            burn_in: 500,
            ..Default::default()
        };
        let run = reference_mcmc(&target, vec![2.0, -2.0], &cfg, 3).unwrap();
        assert_eq!(run.draws.len(), 5500);
        for j in 0..2 {
            let xs: Vec<f64> = run.draws.iter().map(|d| d[j]).collect();
            let (mean, se) = crate::diagnostics::mean_and_mcse(&xs);
            assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
            let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
            let (m2, se2) = crate::diagnostics::mean_and_mcse(&sq);
            assert!((m2 - 1.0).abs() < 4.0 * se2, "second moment {m2} se {se2}");
        }
    }

    #[test]
    fn default_reference_keeps_one_thousand_draws() {
        let target = Gauss { sd: vec![1.0] };
        let run = reference_mcmc(&target, vec![0.0], &ReferenceConfig::default(), 1).unwrap();
        assert_eq!(run.draws.len(), 1000);
        assert!(run.warning.is_none());
        assert!(reference_mcmc(
            &target,
            vec![0.0],
            &ReferenceConfig {
                iterations: 10,
                burn_in: 10,
                ..Default::default()
            },
            1
        )
        .is_err());
    }

    fn normal_cdf(x: f64) -> f64 {
        0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
    }

    /// Kolmogorov-Smirnov distance between `xs` and `N(0, sd^2)`.
    fn ks_distance(xs: &[f64], sd: f64) -> f64 {
        let mut v = xs.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        v.iter()
            .enumerate()
            .map(|(i, x)| {
                let f = normal_cdf(x / sd);
                (f - i as f64 / n).max((i + 1) as f64 / n - f)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn long_chain_marginals_pass_ks_at_one_percent() {
        let target = Gauss { sd: vec![1.0, 2.0, 0.5] };
        let cfg = ReferenceConfig {
            iterations: 20_500,
            burn_in: 500,
            ..Default::default()
        };
        let run = reference_mcmc(&target, vec![1.0, -1.0, 0.5], &cfg, 11).unwrap();
        for (j, sd) in target.sd.iter().enumerate() {
            let xs: Vec<f64> = run.draws.iter().map(|d| d[j]).collect();
            // Thin to roughly independent draws before applying the iid test.
            let thin = (xs.len() as f64 / crate::diagnostics::ess_autocorr(&xs)).ceil().max(1.0) as usize;
            let kept: Vec<f64> = xs.iter().step_by(thin).copied().collect();
            let critical = 1.628 / (kept.len() as f64).sqrt();
            let d = ks_distance(&kept, *sd);
            assert!(d < critical, "coordinate {j}: D = {d}, critical {critical}");
        }
    }

    #[test]
    fn without_polls_the_reference_chain_samples_the_prior() {
        let spec = crate::testutil::small_spec(3, 6, 21);
        let model = Model::new(spec, Vec::new(), 0).unwrap();
        let knob = CompiledKnob::identity(&model);
        let cfg = ReferenceConfig {
            iterations: 4500,
            burn_in: 500,
            ..Default::default()
        };
        let runs = reference_chains(&model, &knob, &cfg, &[1, 2]).unwrap();
        let terminal = model.layout().terminal();
        for j in terminal {
            let chains: Vec<Vec<f64>> = runs
                .iter()
                .map(|r| r.draws.iter().map(|d| d[j]).collect())
                .collect();
            let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
            let (mean, se) = crate::diagnostics::mean_and_mcse_chains(&refs);
            assert!(mean.abs() < 3.0 * se, "z[{j}] mean {mean} se {se}");
            let sq: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|x| x * x).collect()).collect();
            let sq_refs: Vec<&[f64]> = sq.iter().map(Vec::as_slice).collect();
            let (m2, se2) = crate::diagnostics::mean_and_mcse_chains(&sq_refs);
            assert!((m2 - 1.0).abs() < 4.0 * se2, "z[{j}] second moment {m2} se {se2}");
        }
    }
}
