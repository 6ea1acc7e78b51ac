//! Sequential Monte Carlo along a perturbation schedule.
//!
//! Each step reweights the particles by the incremental weight
//! `h_l / h_(l-1)` evaluated at the previous step's particles. When the
//! effective sample size falls below `ess_fraction * R` the set is resampled
//! and every particle is moved by HMC sweeps targeting the step-`l` posterior;
//! otherwise particles are left untouched and the incremental weights are
//! checked with the Pareto shape diagnostic.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, mesh_advice, pareto_khat_log, MeshAdvice};
use crate::hmc::{adapt_kernel, hmc_transition, HmcConfig, HmcState, PosteriorTarget};
use crate::meta::{CompiledSchedule, PerturbationSchedule};
use crate::model::{sigmoid, Model};
use crate::rng::{stream, Purpose};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmcConfig {
    /// Resample when `ESS < ess_fraction * R`.
    pub ess_fraction: f64,
    /// Number of mesh steps used by schedule builders.
    pub mesh: usize,
    /// HMC sweeps per rejuvenation.
    pub sweeps: usize,
    pub khat_threshold: f64,
    pub seed: u64,
    pub leapfrog_steps: usize,
    /// Starting step size for the first rejuvenation pilot.
    pub initial_step_size: f64,
    pub jitter: f64,
    /// Functionals reported at every step; empty selects the defaults.
    #[serde(default)]
    pub estimates: Vec<Functional>,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            ess_fraction: 0.5,
            mesh: 30,
            sweeps: 3,
            khat_threshold: 0.7,
            seed: 0,
            leapfrog_steps: 10,
            initial_step_size: 0.1,
            jitter: 0.1,
            estimates: Vec::new(),
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ess_fraction > 0.0 && self.ess_fraction < 1.0) {
            return Err(Error::Config("ess_fraction must lie in (0, 1)".into()));
        }
        if self.mesh == 0 {
            return Err(Error::Config("mesh must be positive".into()));
        }
        if !(self.khat_threshold.is_finite()) {
            return Err(Error::Config("khat_threshold must be finite".into()));
        }
        if self.leapfrog_steps == 0 {
            return Err(Error::Config("leapfrog_steps must be positive".into()));
        }
        if !(self.initial_step_size > 0.0 && self.initial_step_size.is_finite()) {
            return Err(Error::Config("initial_step_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::Config("jitter must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// A named scalar projection of the parameter vector.
///
/// Text forms: `theta[j]`, `mu[t,s]`, `share[t,s]`, `national[t]`,
/// `national_share[t]`, `u[s]`, `sigma_state`, `sigma_national`. Days are
/// 1-based, states and coordinates 0-based. `share` and `national_share` are
/// on the vote-share scale, the others on the parameter or logit scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Functional {
    Coordinate(usize),
    Mu { day: usize, state: usize },
    Share { day: usize, state: usize },
    National { day: usize },
    NationalShare { day: usize },
    StateError(usize),
    SigmaState,
    SigmaNational,
}

impl Functional {
    /// Election-day vote share in every state, then nationally.
    pub fn defaults(model: &Model) -> Vec<Functional> {
        let l = model.layout();
        (0..l.states)
            .map(|state| Functional::Share {
                day: l.days,
                state,
            })
            .chain([Functional::NationalShare { day: l.days }])
            .collect()
    }

    pub fn check(&self, model: &Model) -> Result<()> {
        let l = model.layout();
        let ok = match *self {
            Functional::Coordinate(j) => j < l.dim(),
            Functional::Mu { day, state } | Functional::Share { day, state } => {
                (1..=l.days).contains(&day) && state < l.states
            }
            Functional::National { day } | Functional::NationalShare { day } => {
                (1..=l.days).contains(&day)
            }
            Functional::StateError(s) => s < l.states,
            Functional::SigmaState | Functional::SigmaNational => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Usage(format!("functional `{self}` is out of range for this model")))
        }
    }

    pub fn eval(&self, model: &Model, params: &[f64]) -> f64 {
        let l = model.layout();
        let mu = || -> Vec<f64> {
            let day = match *self {
                Functional::Mu { day, .. }
                | Functional::Share { day, .. }
                | Functional::National { day }
                | Functional::NationalShare { day } => day,
                _ => unreachable!(),
            };
            let mut out = vec![0.0; l.states];
            model.mu_at(params, day, &mut out);
            out
        };
        match *self {
            Functional::Coordinate(j) => params[j],
            Functional::Mu { state, .. } => mu()[state],
            Functional::Share { state, .. } => sigmoid(mu()[state]),
            Functional::National { .. } => national(model, &mu()),
            Functional::NationalShare { .. } => sigmoid(national(model, &mu())),
            Functional::StateError(s) => model.state_errors(params)[s],
            Functional::SigmaState => params[l.log_sigma_state()].exp(),
            Functional::SigmaNational => params[l.log_sigma_national()].exp(),
        }
    }
}

fn national(model: &Model, mu: &[f64]) -> f64 {
    model.spec().weights.iter().zip(mu).map(|(w, m)| w * m).sum()
}

impl fmt::Display for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Functional::Coordinate(j) => write!(f, "theta[{j}]"),
            Functional::Mu { day, state } => write!(f, "mu[{day},{state}]"),
            Functional::Share { day, state } => write!(f, "share[{day},{state}]"),
            Functional::National { day } => write!(f, "national[{day}]"),
            Functional::NationalShare { day } => write!(f, "national_share[{day}]"),
            Functional::StateError(s) => write!(f, "u[{s}]"),
            Functional::SigmaState => f.write_str("sigma_state"),
            Functional::SigmaNational => f.write_str("sigma_national"),
        }
    }
}

impl FromStr for Functional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Usage(format!("unknown functional `{s}`"));
        let s = s.trim();
        match s {
            "sigma_state" => return Ok(Functional::SigmaState),
            "sigma_national" => return Ok(Functional::SigmaNational),
            _ => {}
        }
        let open = s.find('[').ok_or_else(bad)?;
        let inner = s[open + 1..].strip_suffix(']').ok_or_else(bad)?;
        let args: Vec<usize> = inner
            .split(',')
            .map(|a| a.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        match (&s[..open], args.as_slice()) {
            ("theta", [j]) => Ok(Functional::Coordinate(*j)),
            ("mu", [day, state]) => Ok(Functional::Mu {
                day: *day,
                state: *state,
            }),
            ("share", [day, state]) => Ok(Functional::Share {
                day: *day,
                state: *state,
            }),
            ("national", [day]) => Ok(Functional::National { day: *day }),
            ("national_share", [day]) => Ok(Functional::NationalShare { day: *day }),
            ("u", [st]) => Ok(Functional::StateError(*st)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Functional {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Functional {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// A weighted mean with its Monte Carlo standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: Functional,
    pub mean: f64,
    pub mcse: f64,
}

/// `R` weighted particles.
///
/// `generation` counts the SMC steps the set has undergone across all runs;
/// it keys the random streams so that successive runs on one lineage never
/// reuse randomness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    pub particles: Vec<Vec<f64>>,
    pub log_weights: Vec<f64>,
    /// Mesh index reached within the current schedule.
    pub step: usize,
    pub generation: u64,
}

impl ParticleSet {
    /// Equally weighted draws, e.g. from the baseline fit.
    pub fn from_draws(draws: Vec<Vec<f64>>) -> Result<Self> {
        let r = draws.len();
        if r < 2 {
            return Err(Error::Usage("a particle set needs at least two particles".into()));
        }
        let dim = draws[0].len();
        if let Some(i) = draws.iter().position(|d| d.len() != dim) {
            return Err(Error::Config(format!("draw {i} has the wrong dimension")));
        }
        if let Some(i) = draws.iter().position(|d| d.iter().any(|v| !v.is_finite())) {
            return Err(Error::Data(format!("draw {i} has non-finite entries")));
        }
        Ok(Self {
            particles: draws,
            log_weights: vec![0.0; r],
            step: 0,
            generation: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles.first().map_or(0, Vec::len)
    }

    /// Normalized weights, summing to one.
    pub fn weights(&self) -> Result<Vec<f64>> {
        normalize(&self.log_weights, self.step)
    }

    pub fn ess(&self) -> Result<f64> {
        diagnostics::ess_log(&self.log_weights)
    }

    fn check(&self, model: &Model) -> Result<()> {
        if self.len() < 2 {
            return Err(Error::Usage("a particle set needs at least two particles".into()));
        }
        if self.log_weights.len() != self.len() {
            return Err(Error::Config("log_weights and particles differ in length".into()));
        }
        if self.dim() != model.dim() || self.particles.iter().any(|p| p.len() != model.dim()) {
            return Err(Error::Config(format!(
                "particles must have dimension {}",
                model.dim()
            )));
        }
        if self.log_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Data("log weights must be finite".into()));
        }
        Ok(())
    }
}

/// Normalizes log weights by log-sum-exp.
fn normalize(log_weights: &[f64], step: usize) -> Result<Vec<f64>> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateWeights {
            step,
            message: "no finite log weight".into(),
        });
    }
    let mut w: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

/// Per-step record of Algorithm 1's decisions and outputs.
///
/// `khat` is set only on reweight-only steps, `acceptance_rate` only on
/// rejuvenated ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Mesh level `u_l`.
    pub level: f64,
    pub ess_before: f64,
    pub rejuvenated: bool,
    #[serde(default, with = "crate::io::nonfinite::option")]
    pub khat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub khat_note: Option<String>,
    #[serde(default)]
    pub khat_warning: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advice: Option<MeshAdvice>,
    pub acceptance_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    #[serde(default)]
    pub divergences: usize,
    /// `log sum_r W_(l-1) * w_l`, the log normalizing-constant ratio.
    pub log_evidence_increment: f64,
    pub estimates: Vec<Estimate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Wall-clock seconds; excluded from determinism comparisons.
    pub seconds: f64,
}

/// `log h_l - log h_(l-1)` at each particle. Evaluated only at the
/// particles as they stand after step `l - 1`.
pub fn incremental_log_weights(
    model: &Model,
    schedule: &CompiledSchedule,
    l: usize,
    particles: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if l == 0 || l > schedule.steps() {
        return Err(Error::Usage(format!(
            "step {l} outside 1..={}",
            schedule.steps()
        )));
    }
    particles
        .par_iter()
        .enumerate()
        .map(|(r, theta)| {
            let fail = |message: String| Error::Kernel {
                step: l,
                particle: r,
                message,
            };
            let now = schedule.log_h(model, l, theta).map_err(|e| fail(e.to_string()))?;
            let before = schedule
                .log_h(model, l - 1, theta)
                .map_err(|e| fail(e.to_string()))?;
            let inc = now - before;
            if inc.is_nan() || inc == f64::INFINITY {
                return Err(fail(format!("incremental log weight is {inc}")));
            }
            Ok(inc)
        })
        .collect()
}

/// Ancestor indices for multinomial resampling, in nondecreasing order.
///
/// The `R` uniforms are sorted before inversion, which yields the same
/// multinomial offspring law while keeping copies of a particle adjacent.
pub fn resample_multinomial(weights: &[f64], seed: u64, generation: u64) -> Result<Vec<usize>> {
    let r = weights.len();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::DegenerateWeights {
            step: generation as usize,
            message: "cannot resample from zero or invalid weights".into(),
        });
    }
    let mut rng = stream(seed, Purpose::Resample, generation, 0);
    let mut u: Vec<f64> = (0..r).map(|_| rng.random::<f64>() * total).collect();
    u.sort_by(f64::total_cmp);
    let last = weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
    let mut ancestors = Vec::with_capacity(r);
    let mut k = 0;
    let mut cum = weights[0];
    for ui in u {
        while k < last && ui >= cum {
            k += 1;
            cum += weights[k];
        }
        ancestors.push(k);
    }
    Ok(ancestors)
}

/// Weighted mean and Monte Carlo error of `functional` over `set`.
pub fn estimate(model: &Model, set: &ParticleSet, functional: Functional) -> Result<Estimate> {
    functional.check(model)?;
    let w = set.weights()?;
    let values: Vec<f64> = set
        .particles
        .iter()
        .map(|p| functional.eval(model, p))
        .collect();
    let (mean, mcse) = diagnostics::weighted_mean_and_mcse(&values, &w);
    Ok(Estimate {
        name: functional,
        mean,
        mcse,
    })
}

fn estimates(model: &Model, set: &ParticleSet, list: &[Functional]) -> Result<Vec<Estimate>> {
    list.iter().map(|f| estimate(model, set, *f)).collect()
}

/// Mutable engine state carried between steps of one run.
struct Engine<'a> {
    model: &'a Model,
    schedule: &'a CompiledSchedule,
    mesh: &'a [f64],
    config: &'a SmcConfig,
    functionals: Vec<Functional>,
    step_size: f64,
}

impl Engine<'_> {
    fn step(&mut self, set: &mut ParticleSet, l: usize) -> Result<StepRecord> {
        let started = Instant::now();
        let r = set.len();
        let inc = incremental_log_weights(self.model, self.schedule, l, &set.particles)?;
        let mut lw: Vec<f64> = set.log_weights.iter().zip(&inc).map(|(a, b)| a + b).collect();
        let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::DegenerateWeights {
                step: l,
                message: "every particle has zero weight; use a finer mesh".into(),
            });
        }
        let prev_max = set.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let inc_max = inc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut num, mut den) = (0.0, 0.0);
        for (p, i) in set.log_weights.iter().zip(&inc) {
            let w = (p - prev_max).exp();
            den += w;
            num += w * (i - inc_max).exp();
        }
        let log_evidence_increment = inc_max + num.ln() - den.ln();
        lw.iter_mut().for_each(|v| *v -= max);
        let ess_before = diagnostics::ess_log(&lw)?;
        let generation = set.generation + 1;
        let mut record = StepRecord {
            step: l,
            level: self.mesh.get(l).copied().unwrap_or(l as f64),
            ess_before,
            rejuvenated: false,
            khat: None,
            khat_note: None,
            khat_warning: false,
            advice: None,
            acceptance_rate: None,
            step_size: None,
            divergences: 0,
            log_evidence_increment,
            estimates: Vec::new(),
            warnings: Vec::new(),
            seconds: 0.0,
        };
        if ess_before < self.config.ess_fraction * r as f64 {
            let weights = normalize(&lw, l)?;
            let ancestors = resample_multinomial(&weights, self.config.seed, generation)?;
            let resampled: Vec<Vec<f64>> =
                ancestors.iter().map(|&a| set.particles[a].clone()).collect();
            let target = PosteriorTarget {
                model: self.model,
                knob: self.schedule.knob(l),
            };
            let base = HmcConfig {
                leapfrog_steps: self.config.leapfrog_steps,
                step_size: self.step_size,
                inv_metric: vec![1.0; self.model.dim()],
                sweeps: self.config.sweeps,
                jitter: self.config.jitter,
            };
            let adapted = adapt_kernel(&resampled, &target, &base, self.config.seed, generation)
                .map_err(|e| match e {
                    Error::Evaluation { message, component } => Error::Kernel {
                        step: l,
                        particle: 0,
                        message: format!("{component}: {message}"),
                    },
                    other => other,
                })?;
            if let Some(w) = adapted.warning {
                record.warnings.push(w);
            }
            let kernel = adapted.config;
            let moved: Vec<(Vec<f64>, usize, usize)> = resampled
                .into_par_iter()
                .enumerate()
                .map(|(i, theta)| {
                    let mut state = HmcState::new(&target, theta).map_err(|e| Error::Kernel {
                        step: l,
                        particle: i,
                        message: e.to_string(),
                    })?;
                    let mut rng = stream(self.config.seed, Purpose::Kernel, generation, i as u64);
                    let mut accepted = 0;
                    let mut divergent = 0;
                    for _ in 0..kernel.sweeps {
                        let info = hmc_transition(&mut state, &target, &kernel, &mut rng);
                        accepted += info.accepted as usize;
                        divergent += info.divergent as usize;
                    }
                    Ok((state.position, accepted, divergent))
                })
                .collect::<Result<_>>()?;
            let transitions = (r * kernel.sweeps).max(1);
            let mut accepted = 0;
            let mut divergences = 0;
            set.particles = moved
                .into_iter()
                .map(|(p, a, d)| {
                    accepted += a;
                    divergences += d;
                    p
                })
                .collect();
            set.log_weights = vec![0.0; r];
            self.step_size = kernel.step_size;
            record.rejuvenated = true;
            record.acceptance_rate = Some(accepted as f64 / transitions as f64);
            record.step_size = Some(kernel.step_size);
            record.divergences = divergences;
            if divergences > 0 {
                record
                    .warnings
                    .push(format!("{divergences} of {transitions} rejuvenation moves diverged"));
            }
        } else {
            let fit = pareto_khat_log(&inc, self.config.khat_threshold)?;
            record.khat = fit.khat;
            record.khat_note = fit.note.clone();
            record.khat_warning = fit.warning;
            record.advice = mesh_advice(&fit, l, self.config.khat_threshold);
            if let Some(a) = &record.advice {
                log::warn!("{}", a.message);
            }
            set.log_weights = lw;
        }
        set.step = l;
        set.generation = generation;
        record.estimates = estimates(self.model, set, &self.functionals)?;
        record.seconds = started.elapsed().as_secs_f64();
        Ok(record)
    }
}

/// Deep copy of the particle set taken after a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub particles: ParticleSet,
}

/// Output of [`run_schedule`].
#[derive(Debug, Clone, PartialEq)]
pub struct SmcRun {
    pub particles: ParticleSet,
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<Snapshot>,
}

/// A failed run with everything computed before the failure.
#[derive(Debug)]
pub struct SmcFailure {
    pub error: Error,
    pub partial: SmcRun,
}

impl fmt::Display for SmcFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (after {} completed steps)",
            self.error,
            self.partial.records.len()
        )
    }
}

impl std::error::Error for SmcFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Runs one SMC step, for callers driving the loop themselves.
pub fn smc_step(
    model: &Model,
    schedule: &CompiledSchedule,
    set: &mut ParticleSet,
    l: usize,
    config: &SmcConfig,
) -> Result<StepRecord> {
    config.validate()?;
    set.check(model)?;
    let functionals = if config.estimates.is_empty() {
        Functional::defaults(model)
    } else {
        config.estimates.clone()
    };
    Engine {
        model,
        schedule,
        mesh: &[],
        config,
        functionals,
        step_size: config.initial_step_size,
    }
    .step(set, l)
}

/// Walks `initial` along every step of `schedule`.
///
/// `snapshot_steps` lists mesh indices after which a deep copy is kept
/// (index 0 snapshots the input). `observer` sees each record as soon as
/// its step completes. Results are bit-reproducible for a fixed seed,
/// whatever the size of the rayon pool.
pub fn run_schedule(
    model: &Model,
    schedule: &PerturbationSchedule,
    initial: ParticleSet,
    config: &SmcConfig,
    snapshot_steps: &[usize],
    observer: &mut dyn FnMut(&StepRecord),
) -> std::result::Result<SmcRun, Box<SmcFailure>> {
    let mut run = SmcRun {
        particles: initial,
        records: Vec::new(),
        snapshots: Vec::new(),
    };
    let setup = (|| -> Result<(CompiledSchedule, Vec<Functional>)> {
        config.validate()?;
        run.particles.check(model)?;
        let compiled = schedule.compile(model)?;
        let functionals = if config.estimates.is_empty() {
            Functional::defaults(model)
        } else {
            for f in &config.estimates {
                f.check(model)?;
            }
            config.estimates.clone()
        };
        if let Some(bad) = snapshot_steps.iter().find(|s| **s > compiled.steps()) {
            return Err(Error::Usage(format!(
                "snapshot step {bad} outside 0..={}",
                compiled.steps()
            )));
        }
        Ok((compiled, functionals))
    })();
    let (compiled, functionals) = match setup {
        Ok(v) => v,
        Err(error) => return Err(Box::new(SmcFailure { error, partial: run })),
    };
    run.particles.step = 0;
    if snapshot_steps.contains(&0) {
        run.snapshots.push(Snapshot {
            step: 0,
            particles: run.particles.clone(),
        });
    }
    let mut engine = Engine {
        model,
        schedule: &compiled,
        mesh: &schedule.mesh,
        config,
        functionals,
        step_size: config.initial_step_size,
    };
    for l in 1..=compiled.steps() {
        match engine.step(&mut run.particles, l) {
            Ok(record) => {
                log::info!(
                    "step {l}/{}: ess {:.1}, {}",
                    compiled.steps(),
                    record.ess_before,
                    if record.rejuvenated {
                        format!(
                            "rejuvenated (acceptance {:.2})",
                            record.acceptance_rate.unwrap_or(0.0)
                        )
                    } else {
                        match record.khat {
                            Some(k) => format!("reweighted (khat {k:.2})"),
                            None => "reweighted".to_string(),
                        }
                    }
                );
                observer(&record);
                run.records.push(record);
                if snapshot_steps.contains(&l) {
                    run.snapshots.push(Snapshot {
                        step: l,
                        particles: run.particles.clone(),
                    });
                }
            }
            Err(error) => return Err(Box::new(SmcFailure { error, partial: run })),
        }
    }
    Ok(run)
}
