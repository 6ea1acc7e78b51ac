//! Scenario and sensitivity analysis for a poll-aggregation state-space model.
//!
//! A baseline posterior is fitted once with Hamiltonian Monte Carlo. Families of
//! perturbed posteriors (shifted or rescaled priors, new or hypothetical polls,
//! edited poll values, power-scaled terms) are then reached by walking a
//! sequential Monte Carlo sampler along a mesh of perturbation levels, reusing
//! the baseline draws instead of refitting at every level.
//!
//! Module map:
//!
//! - [`model`]: the generative model, its non-centered parameterization and
//!   exact log density / gradient.
//! - [`meta`]: knobs (sparse configuration deltas) and perturbation schedules.
//! - [`smc`]: the reweight / resample / rejuvenate loop.
//! - [`hmc`]: the rejuvenation kernel and the brute-force reference sampler.
//! - [`diagnostics`]: ESS, Pareto shape estimates, Monte Carlo standard errors.
//! - [`forecast`]: trajectory summaries and scenario comparison tables.
//! - [`io`]: file formats, synthetic data, presets and run reports.
//! - [`backtest`]: SMC versus per-mesh-point MCMC comparison harness.
//! - [`scenario`]: one scenario run with its report, shared by the front ends.

pub mod backtest;
pub mod diagnostics;
pub mod error;
pub mod forecast;
pub mod hmc;
pub mod io;
pub mod meta;
pub mod model;
pub mod rng;
pub mod scenario;
pub mod smc;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use meta::{Knob, PerturbationSchedule, ScheduleFamily};
pub use smc::{ParticleSet, SmcConfig, SmcRun, StepRecord};
pub use model::{LatentState, Model, ModelSpec, ParameterVector, PollObservation};

