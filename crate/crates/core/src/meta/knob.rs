//! Knobs: sparse deltas from the baseline model configuration.
//!
//! A [`Knob`] records only what differs from the fitted baseline: prior
//! components with overridden hyperparameters or powers, observed polls with
//! edited counts, metadata or powers, and hypothetical polls occupying
//! pre-declared error slots. The empty knob is the baseline itself.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::model::{check_placement, log_binomial_coefficient, Model, PollMeta};
use crate::{Error, Result};

/// Independent prior factors of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorComponent {
    /// `mu_T ~ MVN(f, C)`
    Terminal,
    /// `mu_t ~ MVN(mu_{t+1}, Sigma_mu)` for every `t < T`
    Walk,
    /// `u ~ MVN(0, Sigma_u)`
    StateError,
    House,
    Mode,
    Population,
    SigmaState,
    SigmaNational,
    /// Standardized poll errors `eps_i ~ N(0, 1)`.
    PollError,
}

impl PriorComponent {
    pub const ALL: [PriorComponent; 9] = [
        PriorComponent::Terminal,
        PriorComponent::Walk,
        PriorComponent::StateError,
        PriorComponent::House,
        PriorComponent::Mode,
        PriorComponent::Population,
        PriorComponent::SigmaState,
        PriorComponent::SigmaNational,
        PriorComponent::PollError,
    ];

    pub(crate) fn is_half_normal(self) -> bool {
        matches!(self, PriorComponent::SigmaState | PriorComponent::SigmaNational)
    }

    pub(crate) fn slot(self) -> usize {
        self as usize
    }
}

fn one() -> f64 {
    1.0
}

fn is_one(v: &f64) -> bool {
    *v == 1.0
}

/// Override of one prior component: `p_{phi'}(theta_k)^rho`.
///
/// `scale` multiplies the component's covariance (variance for scalar
/// priors); `location_shift` is added to its mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location_shift: Option<Vec<f64>>,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub scale: f64,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub power: f64,
}

impl Default for PriorOverride {
    fn default() -> Self {
        Self {
            location_shift: None,
            scale: 1.0,
            power: 1.0,
        }
    }
}

impl PriorOverride {
    fn is_noop(&self) -> bool {
        self.scale == 1.0
            && self.power == 1.0
            && self
                .location_shift
                .as_ref()
                .is_none_or(|v| v.iter().all(|x| *x == 0.0))
    }
}

/// Override of one observed poll's likelihood: `p_{psi'}(f(y) | Theta)^gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LikelihoodOverride {
    /// Replacement (possibly non-integer) count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<PollMeta>,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub power: f64,
}

impl Default for LikelihoodOverride {
    fn default() -> Self {
        Self {
            y: None,
            meta: None,
            power: 1.0,
        }
    }
}

/// A poll that is not part of the baseline data, placed in error slot `slot`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypotheticalPoll {
    pub slot: usize,
    pub poll_id: String,
    pub day: usize,
    pub state: Option<usize>,
    pub y: f64,
    pub n: f64,
    pub meta: PollMeta,
    #[serde(default = "one")]
    pub power: f64,
}

/// The configuration delta `delta` relative to the baseline.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Knob {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub prior_overrides: BTreeMap<PriorComponent, PriorOverride>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub likelihood_overrides: BTreeMap<String, LikelihoodOverride>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hypothetical: Vec<HypotheticalPoll>,
}

impl Knob {
    /// The baseline configuration: every power 1, nothing overridden, no
    /// hypothetical data.
    pub fn identity() -> Self {
        Self::default()
    }

    /// Drops entries that do not change the density (unit powers and scales,
    /// zero shifts, zero-power hypothetical polls of size zero).
    pub fn normalized(&self) -> Self {
        let prior_overrides = self
            .prior_overrides
            .iter()
            .filter(|(_, o)| !o.is_noop())
            .map(|(k, o)| (*k, o.clone()))
            .collect();
        let likelihood_overrides = self
            .likelihood_overrides
            .iter()
            .filter(|(_, o)| !(o.y.is_none() && o.meta.is_none() && o.power == 1.0))
            .map(|(k, o)| (k.clone(), o.clone()))
            .collect();
        let mut hypothetical: Vec<HypotheticalPoll> = self
            .hypothetical
            .iter()
            .filter(|h| h.power != 0.0 && h.n != 0.0)
            .cloned()
            .collect();
        hypothetical.sort_by_key(|h| h.slot);
        Self {
            prior_overrides,
            likelihood_overrides,
            hypothetical,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.normalized() == Knob::identity()
    }

    /// Semantic equality (after dropping no-op entries).
    pub fn same_as(&self, other: &Knob) -> bool {
        self.normalized() == other.normalized()
    }

    /// Applies `top` on top of `self`.
    ///
    /// Prior overrides compose as: shifts add, scales and powers multiply.
    /// Likelihood overrides replace counts and metadata and multiply powers.
    /// Hypothetical polls are concatenated; two polls in one slot is an error.
    pub fn layered(&self, top: &Knob) -> Result<Knob> {
        let mut out = self.clone();
        for (k, o) in &top.prior_overrides {
            let entry = out.prior_overrides.entry(*k).or_default();
            entry.scale *= o.scale;
            entry.power *= o.power;
            entry.location_shift = match (entry.location_shift.take(), &o.location_shift) {
                (None, None) => None,
                (Some(a), None) => Some(a),
                (None, Some(b)) => Some(b.clone()),
                (Some(a), Some(b)) => {
                    if a.len() != b.len() {
                        return Err(Error::Usage(format!(
                            "cannot layer location shifts of lengths {} and {} on {k:?}",
                            a.len(),
                            b.len()
                        )));
                    }
                    Some(a.iter().zip(b).map(|(x, y)| x + y).collect())
                }
            };
        }
        for (id, o) in &top.likelihood_overrides {
            let entry = out.likelihood_overrides.entry(id.clone()).or_default();
            if o.y.is_some() {
                entry.y = o.y;
            }
            if o.meta.is_some() {
                entry.meta = o.meta;
            }
            entry.power *= o.power;
        }
        let taken: HashSet<usize> = out.hypothetical.iter().map(|h| h.slot).collect();
        for h in &top.hypothetical {
            if taken.contains(&h.slot) {
                return Err(Error::Usage(format!(
                    "hypothetical poll {} reuses slot {}",
                    h.poll_id, h.slot
                )));
            }
            out.hypothetical.push(h.clone());
        }
        Ok(out)
    }

    /// Resolves poll ids and precomputes standardized shifts against `model`.
    pub fn compile(&self, model: &Model) -> Result<CompiledKnob> {
        CompiledKnob::new(&self.normalized(), model)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct GaussianOverride {
    pub power: f64,
    pub scale: f64,
    /// Mean shift expressed in standardized coordinates, `L^{-1} delta`.
    pub shift: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct HalfNormalOverride {
    pub power: f64,
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct ResolvedLikelihood {
    pub y: f64,
    pub meta: PollMeta,
    pub power: f64,
    pub log_coef: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct ResolvedHypothetical {
    pub slot: usize,
    pub day: usize,
    pub state: Option<usize>,
    pub y: f64,
    pub n: f64,
    pub meta: PollMeta,
    pub power: f64,
    pub log_coef: f64,
}

/// A knob resolved against a specific model, ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct CompiledKnob {
    pub(crate) gaussian: [Option<GaussianOverride>; 9],
    pub(crate) half_normal: [Option<HalfNormalOverride>; 9],
    /// Indexed by observed poll; `None` means the baseline term.
    pub(crate) likelihood: Vec<Option<ResolvedLikelihood>>,
    pub(crate) likelihood_list: Vec<usize>,
    pub(crate) hypothetical: Vec<ResolvedHypothetical>,
}

impl CompiledKnob {
    pub fn identity(model: &Model) -> Self {
        Self {
            gaussian: Default::default(),
            half_normal: Default::default(),
            likelihood: vec![None; model.polls().len()],
            likelihood_list: Vec::new(),
            hypothetical: Vec::new(),
        }
    }

    fn new(knob: &Knob, model: &Model) -> Result<Self> {
        let mut out = Self::identity(model);
        let layout = model.layout();
        for (&component, o) in &knob.prior_overrides {
            if !(o.power.is_finite() && o.power > 0.0) {
                return Err(Error::Usage(format!(
                    "prior power for {component:?} must be positive (got {})",
                    o.power
                )));
            }
            if !(o.scale.is_finite() && o.scale > 0.0) {
                return Err(Error::Usage(format!(
                    "prior scale for {component:?} must be positive (got {})",
                    o.scale
                )));
            }
            if component.is_half_normal() {
                if o.location_shift.is_some() {
                    return Err(Error::Usage(format!(
                        "{component:?} has a half-normal prior and no location to shift"
                    )));
                }
                out.half_normal[component.slot()] = Some(HalfNormalOverride {
                    power: o.power,
                    scale: o.scale,
                });
                continue;
            }
            let shift = match &o.location_shift {
                None => None,
                Some(delta) => {
                    let dim = model.block_dim(component);
                    if delta.len() != dim {
                        return Err(Error::Usage(format!(
                            "location shift for {component:?} must have length {dim}"
                        )));
                    }
                    if delta.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Usage("location shift must be finite".into()));
                    }
                    Some(model.standardize_shift(component, delta))
                }
            };
            out.gaussian[component.slot()] = Some(GaussianOverride {
                power: o.power,
                scale: o.scale,
                shift,
            });
        }

        for (id, o) in &knob.likelihood_overrides {
            let index = model
                .poll_index(id)
                .ok_or_else(|| Error::Usage(format!("unknown poll id `{id}`")))?;
            let poll = &model.polls()[index];
            if !(o.power.is_finite() && o.power >= 0.0) {
                return Err(Error::Usage(format!(
                    "likelihood power for poll {id} must be nonnegative"
                )));
            }
            let n = poll.n as f64;
            let y = match o.y {
                Some(y) => {
                    if !(y > 0.0 && y < n) && o.power > 0.0 {
                        return Err(Error::Usage(format!(
                            "transformed count {y} for poll {id} must lie in (0, {n})"
                        )));
                    }
                    y
                }
                None => poll.y as f64,
            };
            let meta = o.meta.unwrap_or(poll.meta);
            check_placement(id, poll.day, poll.state, &meta, model.spec())
                .map_err(|e| Error::Usage(e.to_string()))?;
            out.likelihood[index] = Some(ResolvedLikelihood {
                y,
                meta,
                power: o.power,
                log_coef: log_binomial_coefficient(n, y),
            });
            out.likelihood_list.push(index);
        }

        let mut slots = HashSet::new();
        for h in &knob.hypothetical {
            let observed = model.polls().len();
            if h.slot < observed || h.slot >= layout.n_slots {
                return Err(Error::Usage(format!(
                    "hypothetical poll {} uses slot {}, free slots are {observed}..{}",
                    h.poll_id, h.slot, layout.n_slots
                )));
            }
            if !slots.insert(h.slot) {
                return Err(Error::Usage(format!("slot {} used twice", h.slot)));
            }
            if !(h.power.is_finite() && h.power >= 0.0) {
                return Err(Error::Usage(format!(
                    "power for hypothetical poll {} must be nonnegative",
                    h.poll_id
                )));
            }
            if !(h.n.is_finite() && h.n >= 0.0 && h.y >= 0.0 && h.y <= h.n) {
                return Err(Error::Usage(format!(
                    "hypothetical poll {} needs 0 <= y <= n",
                    h.poll_id
                )));
            }
            check_placement(&h.poll_id, h.day, h.state, &h.meta, model.spec())
                .map_err(|e| Error::Usage(e.to_string()))?;
            out.hypothetical.push(ResolvedHypothetical {
                slot: h.slot,
                day: h.day,
                state: h.state,
                y: h.y,
                n: h.n,
                meta: h.meta,
                power: h.power,
                log_coef: log_binomial_coefficient(h.n, h.y),
            });
        }
        Ok(out)
    }
}
