//! Perturbation schedules: a mesh `0 = u_0 < ... < u_L = 1` with one knob per
//! mesh point.
//!
//! Location, power and arrival families move linearly in `u`; scale families
//! move geometrically (`a_l = a_max^{u_l}`) so a path and its reciprocal are
//! mirror images.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::knob::{CompiledKnob, HypotheticalPoll, Knob, LikelihoodOverride, PriorComponent, PriorOverride};
use crate::model::{Model, PollMeta, PollObservation};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleFamily {
    Identity,
    DataArrival,
    HypotheticalPoll,
    PriorLocation,
    PriorScale,
    RwScale,
    DataValue,
    Power,
    Chain,
}

/// A perturbation path. `knobs[l]` is the absolute configuration at `u_l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSchedule {
    pub label: String,
    pub family: ScheduleFamily,
    pub mesh: Vec<f64>,
    /// Scalar summary of each level (shift, scale, power or sample size),
    /// used to order report columns.
    pub levels: Vec<f64>,
    pub knobs: Vec<Knob>,
    /// Configuration the path starts from; identity unless rebased onto a
    /// branch point.
    #[serde(default, skip_serializing_if = "Knob::is_identity")]
    pub baseline: Knob,
    /// Mesh indices where chained segments meet.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub junctions: Vec<usize>,
}

/// A schedule compiled against a model for repeated `log_h` evaluation.
#[derive(Debug, Clone)]
pub struct CompiledSchedule {
    knobs: Vec<CompiledKnob>,
}

impl CompiledSchedule {
    pub fn steps(&self) -> usize {
        self.knobs.len() - 1
    }

    pub fn knob(&self, l: usize) -> &CompiledKnob {
        &self.knobs[l]
    }

    /// `log h_l(theta)`; exactly zero at `l = 0` for unrebased schedules.
    pub fn log_h(&self, model: &Model, l: usize, params: &[f64]) -> Result<f64> {
        let knob = self.knobs.get(l).ok_or_else(|| {
            Error::Usage(format!("mesh index {l} outside 0..={}", self.steps()))
        })?;
        model.log_h(params, knob)
    }
}

fn linear_mesh(steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::Usage("mesh needs at least one step".into()));
    }
    Ok((0..=steps).map(|l| l as f64 / steps as f64).collect())
}

fn prior_knob(component: PriorComponent, o: PriorOverride) -> Knob {
    let mut knob = Knob::identity();
    knob.prior_overrides.insert(component, o);
    knob
}

impl PerturbationSchedule {
    fn build(
        label: String,
        family: ScheduleFamily,
        mesh: Vec<f64>,
        levels: Vec<f64>,
        knobs: Vec<Knob>,
    ) -> Result<Self> {
        let s = Self {
            label,
            family,
            mesh,
            levels,
            knobs,
            baseline: Knob::identity(),
            junctions: Vec::new(),
        };
        s.validate()?;
        Ok(s)
    }

    /// Number of steps `L`.
    pub fn steps(&self) -> usize {
        self.mesh.len().saturating_sub(1)
    }

    pub fn knob_at(&self, l: usize) -> Result<&Knob> {
        self.knobs
            .get(l)
            .ok_or_else(|| Error::Usage(format!("mesh index {l} outside 0..={}", self.steps())))
    }

    pub fn terminal_knob(&self) -> &Knob {
        self.knobs.last().expect("validated schedule is nonempty")
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mesh.len();
        if n < 2 {
            return Err(Error::Usage("a schedule needs L >= 1".into()));
        }
        if self.knobs.len() != n || self.levels.len() != n {
            return Err(Error::Usage(format!(
                "mesh has {n} points but {} knobs and {} levels",
                self.knobs.len(),
                self.levels.len()
            )));
        }
        if self.mesh[0] != 0.0 || self.mesh[n - 1] != 1.0 {
            return Err(Error::Usage("mesh must start at 0 and end at 1".into()));
        }
        if self.mesh.windows(2).any(|w| w[1].is_nan() || w[1] <= w[0]) {
            return Err(Error::Usage("mesh must be strictly increasing".into()));
        }
        if !self.knobs[0].same_as(&self.baseline) {
            return Err(Error::Usage("the knob at u = 0 must equal the baseline".into()));
        }
        if self.junctions.iter().any(|&j| j == 0 || j >= n - 1) {
            return Err(Error::Usage("junctions must be interior mesh points".into()));
        }
        Ok(())
    }

    pub fn compile(&self, model: &Model) -> Result<CompiledSchedule> {
        self.validate()?;
        let knobs = self
            .knobs
            .iter()
            .enumerate()
            .map(|(l, k)| {
                k.compile(model).map_err(|e| match e {
                    Error::Usage(m) => Error::Usage(format!("mesh point {l}: {m}")),
                    other => other,
                })
            })
            .collect::<Result<_>>()?;
        Ok(CompiledSchedule { knobs })
    }

    /// `L` identity steps.
    pub fn identity(steps: usize) -> Result<Self> {
        let mesh = linear_mesh(steps)?;
        Self::build(
            "identity".into(),
            ScheduleFamily::Identity,
            mesh.clone(),
            vec![1.0; mesh.len()],
            vec![Knob::identity(); mesh.len()],
        )
    }

    /// New polls enter with power `gamma*(u_l) = u_l`, occupying error slots
    /// `first_slot..`.
    pub fn data_arrival(
        model: &Model,
        polls: &[PollObservation],
        first_slot: Option<usize>,
        steps: usize,
    ) -> Result<Self> {
        if polls.is_empty() {
            return Err(Error::Usage("data arrival needs at least one poll".into()));
        }
        let first = first_slot.unwrap_or_else(|| model.first_free_slot());
        let mesh = linear_mesh(steps)?;
        for p in polls {
            p.validate(model.spec())?;
            if model.poll_index(&p.poll_id).is_some() {
                return Err(Error::Usage(format!(
                    "poll {} is already part of the baseline",
                    p.poll_id
                )));
            }
        }
        if first + polls.len() > model.layout().n_slots {
            return Err(Error::Usage(format!(
                "{} arriving polls from slot {first} exceed the {} declared slots",
                polls.len(),
                model.layout().n_slots
            )));
        }
        let knobs = mesh
            .iter()
            .map(|&u| {
                let mut knob = Knob::identity();
                if u > 0.0 {
                    knob.hypothetical = polls
                        .iter()
                        .enumerate()
                        .map(|(k, p)| HypotheticalPoll {
                            slot: first + k,
                            poll_id: p.poll_id.clone(),
                            day: p.day,
                            state: p.state,
                            y: p.y as f64,
                            n: p.n as f64,
                            meta: p.meta,
                            power: u,
                        })
                        .collect();
                }
                knob
            })
            .collect();
        Self::build(
            format!("arrival of {} poll(s)", polls.len()),
            ScheduleFamily::DataArrival,
            mesh.clone(),
            mesh,
            knobs,
        )
    }

    /// Inserts one poll whose `(y, n)` follows `path[l - 1]` for `l >= 1`.
    /// With `fixed_ratio`, every point must share the support share `y / n`.
    pub fn hypothetical_poll_path(
        model: &Model,
        template: &PollTemplate,
        path: &[(f64, f64)],
        fixed_ratio: bool,
    ) -> Result<Self> {
        if path.is_empty() {
            return Err(Error::Usage("count path is empty".into()));
        }
        let slot = template.slot.unwrap_or_else(|| model.first_free_slot());
        if let Some(&(y0, n0)) = path.first() {
            if fixed_ratio {
                let ratio = y0 / n0;
                for (l, &(y, n)) in path.iter().enumerate() {
                    if ((y / n) - ratio).abs() > 1e-12 {
                        return Err(Error::Usage(format!(
                            "count path point {} has share {} but the path fixes {ratio}",
                            l + 1,
                            y / n
                        )));
                    }
                }
            }
        }
        let mesh = linear_mesh(path.len())?;
        let mut knobs = vec![Knob::identity()];
        let mut levels = vec![0.0];
        for &(y, n) in path {
            let mut knob = Knob::identity();
            knob.hypothetical.push(HypotheticalPoll {
                slot,
                poll_id: template.poll_id.clone(),
                day: template.day,
                state: template.state,
                y,
                n,
                meta: template.meta,
                power: 1.0,
            });
            knobs.push(knob);
            levels.push(n);
        }
        let s = Self::build(
            format!("hypothetical poll {}", template.poll_id),
            ScheduleFamily::HypotheticalPoll,
            mesh,
            levels,
            knobs,
        )?;
        s.compile(model)?;
        Ok(s)
    }

    /// Hypothetical poll growing linearly from `start` to `end` counts.
    pub fn hypothetical_poll(
        model: &Model,
        template: &PollTemplate,
        start: (f64, f64),
        end: (f64, f64),
        steps: usize,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Usage("mesh needs at least one step".into()));
        }
        let (y0, n0) = start;
        let (y1, n1) = end;
        if !(n0 > 0.0 && n1 > 0.0) {
            return Err(Error::Usage("hypothetical sample sizes must be positive".into()));
        }
        let ratio = y0 / n0;
        if ((y1 / n1) - ratio).abs() > 1e-12 {
            return Err(Error::Usage(format!(
                "end share {} differs from start share {ratio}",
                y1 / n1
            )));
        }
        let path: Vec<(f64, f64)> = (1..=steps)
            .map(|l| {
                if l == 1 {
                    return (y0, n0);
                }
                if l == steps {
                    return (y1, n1);
                }
                let n = n0 + (l - 1) as f64 / (steps - 1) as f64 * (n1 - n0);
                (n * ratio, n)
            })
            .collect();
        let path = if steps == 1 { vec![(y1, n1)] } else { path };
        Self::hypothetical_poll_path(model, template, &path, true)
    }

    /// Shifts the terminal-day prior mean of one state: `f + a_l e_s`,
    /// `a_l = u_l a_max`.
    pub fn prior_location(model: &Model, state: usize, a_max: f64, steps: usize) -> Result<Self> {
        let s = model.spec().states;
        if state >= s {
            return Err(Error::Usage(format!("state index {state} outside 0..{s}")));
        }
        if !a_max.is_finite() {
            return Err(Error::Usage("shift must be finite".into()));
        }
        let mesh = linear_mesh(steps)?;
        let levels: Vec<f64> = mesh.iter().map(|u| u * a_max).collect();
        let knobs = levels
            .iter()
            .map(|&a| {
                let mut shift = vec![0.0; s];
                shift[state] = a;
                prior_knob(
                    PriorComponent::Terminal,
                    PriorOverride {
                        location_shift: Some(shift),
                        ..Default::default()
                    },
                )
                .normalized()
            })
            .collect();
        Self::build(
            format!(
                "fundamentals shift {a_max:+} in {}",
                model.spec().state_label(state)
            ),
            ScheduleFamily::PriorLocation,
            mesh,
            levels,
            knobs,
        )
    }

    fn scale_family(
        component: PriorComponent,
        family: ScheduleFamily,
        name: &str,
        a_max: f64,
        steps: usize,
    ) -> Result<Self> {
        if !(a_max.is_finite() && a_max > 0.0) {
            return Err(Error::Usage(format!("a_max must be positive (got {a_max})")));
        }
        let mesh = linear_mesh(steps)?;
        let levels: Vec<f64> = mesh
            .iter()
            .enumerate()
            .map(|(l, u)| if l == 0 { 1.0 } else { a_max.powf(*u) })
            .collect();
        let knobs = levels
            .iter()
            .map(|&a| {
                prior_knob(
                    component,
                    PriorOverride {
                        scale: a,
                        ..Default::default()
                    },
                )
                .normalized()
            })
            .collect();
        Self::build(format!("{name} x{a_max}"), family, mesh, levels, knobs)
    }

    /// Terminal prior covariance `C -> a_l C`.
    pub fn prior_scale(a_max: f64, steps: usize) -> Result<Self> {
        Self::scale_family(
            PriorComponent::Terminal,
            ScheduleFamily::PriorScale,
            "terminal prior covariance",
            a_max,
            steps,
        )
    }

    /// Random-walk innovation covariance `Sigma_mu -> a_l Sigma_mu`.
    pub fn rw_scale(a_max: f64, steps: usize) -> Result<Self> {
        Self::scale_family(
            PriorComponent::Walk,
            ScheduleFamily::RwScale,
            "random-walk covariance",
            a_max,
            steps,
        )
    }

    /// Moves one observed count linearly from `y_i` to `target_y`.
    pub fn data_value(model: &Model, poll_id: &str, target_y: f64, steps: usize) -> Result<Self> {
        let index = model
            .poll_index(poll_id)
            .ok_or_else(|| Error::Usage(format!("unknown poll id `{poll_id}`")))?;
        let poll = &model.polls()[index];
        let n = poll.n as f64;
        if !(target_y > 0.0 && target_y < n) {
            return Err(Error::Usage(format!(
                "target count {target_y} must lie in (0, {n})"
            )));
        }
        let y0 = poll.y as f64;
        let mesh = linear_mesh(steps)?;
        let levels: Vec<f64> = mesh
            .iter()
            .enumerate()
            .map(|(l, u)| if l == steps { target_y } else { y0 + u * (target_y - y0) })
            .collect();
        let knobs = levels
            .iter()
            .map(|&y| {
                let mut knob = Knob::identity();
                if y != y0 {
                    knob.likelihood_overrides.insert(
                        poll_id.to_string(),
                        LikelihoodOverride {
                            y: Some(y),
                            ..Default::default()
                        },
                    );
                }
                knob
            })
            .collect();
        let s = Self::build(
            format!("poll {poll_id} count {y0} -> {target_y}"),
            ScheduleFamily::DataValue,
            mesh,
            levels,
            knobs,
        )?;
        s.compile(model)?;
        Ok(s)
    }

    /// Power scaling along explicit paths, each of length `L + 1` and
    /// starting at 1.
    pub fn power(
        prior_paths: &BTreeMap<PriorComponent, Vec<f64>>,
        likelihood_paths: &BTreeMap<String, Vec<f64>>,
    ) -> Result<Self> {
        let len = prior_paths
            .values()
            .chain(likelihood_paths.values())
            .map(Vec::len)
            .next()
            .ok_or_else(|| Error::Usage("power schedule declares no paths".into()))?;
        let steps = len.saturating_sub(1);
        let mesh = linear_mesh(steps)?;
        for (name, path) in prior_paths
            .iter()
            .map(|(k, p)| (format!("{k:?}"), p))
            .chain(likelihood_paths.iter().map(|(k, p)| (format!("poll {k}"), p)))
        {
            if path.len() != len {
                return Err(Error::Usage(format!("power path for {name} has the wrong length")));
            }
            if path[0] != 1.0 {
                return Err(Error::Usage(format!("power path for {name} must start at 1")));
            }
        }
        for (k, path) in prior_paths {
            if path.iter().any(|r| !(r.is_finite() && *r > 0.0 && *r <= 1.0)) {
                return Err(Error::Usage(format!(
                    "prior power for {k:?} must stay in (0, 1]"
                )));
            }
        }
        for (id, path) in likelihood_paths {
            if path.iter().any(|g| !(g.is_finite() && (0.0..=1.0).contains(g))) {
                return Err(Error::Usage(format!(
                    "likelihood power for poll {id} must stay in [0, 1]"
                )));
            }
        }
        let knobs = (0..len)
            .map(|l| {
                let mut knob = Knob::identity();
                for (k, path) in prior_paths {
                    knob.prior_overrides.insert(
                        *k,
                        PriorOverride {
                            power: path[l],
                            ..Default::default()
                        },
                    );
                }
                for (id, path) in likelihood_paths {
                    knob.likelihood_overrides.insert(
                        id.clone(),
                        LikelihoodOverride {
                            power: path[l],
                            ..Default::default()
                        },
                    );
                }
                knob.normalized()
            })
            .collect();
        Self::build(
            "power scaling".into(),
            ScheduleFamily::Power,
            mesh.clone(),
            mesh,
            knobs,
        )
    }

    /// Linear power paths from 1 to the given targets.
    pub fn power_linear(
        prior_targets: &BTreeMap<PriorComponent, f64>,
        likelihood_targets: &BTreeMap<String, f64>,
        steps: usize,
    ) -> Result<Self> {
        let mesh = linear_mesh(steps)?;
        let path = |target: f64| -> Vec<f64> {
            mesh.iter()
                .enumerate()
                .map(|(l, u)| if l == steps { target } else { 1.0 + u * (target - 1.0) })
                .collect()
        };
        let priors = prior_targets.iter().map(|(k, t)| (*k, path(*t))).collect();
        let likes = likelihood_targets
            .iter()
            .map(|(k, t)| (k.clone(), path(*t)))
            .collect();
        Self::power(&priors, &likes)
    }

    /// Concatenates schedules whose junction knobs agree. The combined mesh
    /// is re-indexed as `u = l / L_total`.
    pub fn chain(parts: &[PerturbationSchedule]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("chain needs at least one schedule".into()))?;
        let mut knobs = first.knobs.clone();
        let mut levels = first.levels.clone();
        let mut junctions = first.junctions.clone();
        for (j, part) in parts.iter().enumerate().skip(1) {
            part.validate()?;
            let end = knobs.last().expect("nonempty");
            if !end.same_as(&part.knobs[0]) {
                return Err(Error::Usage(format!(
                    "junction {j}: schedule `{}` does not start where `{}` ends",
                    part.label,
                    parts[j - 1].label
                )));
            }
            let offset = knobs.len() - 1;
            junctions.push(offset);
            junctions.extend(part.junctions.iter().map(|x| x + offset));
            knobs.extend(part.knobs[1..].iter().cloned());
            levels.extend(part.levels[1..].iter().copied());
        }
        let steps = knobs.len() - 1;
        let mesh = linear_mesh(steps)?;
        let (family, label) = if parts.len() == 1 {
            (first.family, first.label.clone())
        } else {
            (
                ScheduleFamily::Chain,
                parts
                    .iter()
                    .map(|p| p.label.as_str())
                    .collect::<Vec<_>>()
                    .join(" then "),
            )
        };
        let s = Self {
            label,
            family,
            mesh,
            levels,
            knobs,
            baseline: first.baseline.clone(),
            junctions,
        };
        s.validate()?;
        Ok(s)
    }

    /// Re-expresses this schedule on top of `base`: every knob becomes
    /// `base` layered with the original knob.
    pub fn rebased(&self, base: &Knob) -> Result<Self> {
        let knobs = self
            .knobs
            .iter()
            .map(|k| base.layered(k).map(|k| k.normalized()))
            .collect::<Result<Vec<_>>>()?;
        let s = Self {
            knobs,
            baseline: base.normalized(),
            ..self.clone()
        };
        s.validate()?;
        Ok(s)
    }

    /// This schedule followed by `next` rebased onto this terminal knob.
    pub fn then(&self, next: &PerturbationSchedule) -> Result<Self> {
        let next = next.rebased(self.terminal_knob())?;
        Self::chain(&[self.clone(), next])
    }
}

/// Fixed attributes of a hypothetical poll.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollTemplate {
    pub poll_id: String,
    pub day: usize,
    pub state: Option<usize>,
    pub meta: PollMeta,
    /// Error slot; defaults to the first one after the observed polls.
    #[serde(default)]
    pub slot: Option<usize>,
}
