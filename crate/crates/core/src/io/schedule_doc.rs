//! Declarative schedule documents.
//!
//! A `family` field selects the builder; the remaining fields are that
//! builder's arguments. `mesh` falls back to the caller's default. An empty
//! document is the identity schedule.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::kv::KvDocument;
use super::polls::parse_polls;
use crate::meta::{Knob, PerturbationSchedule, PollTemplate, PriorComponent};
use crate::model::{Model, ModelSpec, PollMeta, PollObservation};
use crate::{Error, Result};

/// A categorical value given by name or 0-based index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Index(usize),
    Name(String),
}

impl Label {
    fn resolve(&self, what: &str, lookup: impl Fn(&str) -> Option<usize>) -> Result<usize> {
        let key = match self {
            Label::Index(i) => i.to_string(),
            Label::Name(s) => s.clone(),
        };
        lookup(&key).ok_or_else(|| Error::Usage(format!("unknown {what} `{key}`")))
    }
}

/// A poll written inline in a document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PollEntry {
    pub poll_id: String,
    pub day: usize,
    /// Absent for a national poll.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<Label>,
    pub y: u64,
    pub n: u64,
    pub pollster: Label,
    pub mode: Label,
    pub population: Label,
}

fn resolve_meta(spec: &ModelSpec, pollster: &Label, mode: &Label, population: &Label) -> Result<PollMeta> {
    Ok(PollMeta {
        pollster: pollster.resolve("pollster", |k| spec.pollster_index(k))?,
        mode: mode.resolve("mode", |k| spec.mode_index(k))?,
        population: population.resolve("population", |k| spec.population_index(k))?,
    })
}

fn resolve_state(spec: &ModelSpec, state: &Option<Label>) -> Result<Option<usize>> {
    state
        .as_ref()
        .map(|s| s.resolve("state", |k| spec.state_index(k)))
        .transpose()
}

fn label(names: &[String], i: usize) -> Label {
    names.get(i).map_or(Label::Index(i), |n| Label::Name(n.clone()))
}

impl PollEntry {
    /// Inline form of `poll`, using declared names where `spec` has them.
    pub fn from_observation(poll: &PollObservation, spec: &ModelSpec) -> Self {
        Self {
            poll_id: poll.poll_id.clone(),
            day: poll.day,
            state: poll.state.map(|s| label(&spec.state_names, s)),
            y: poll.y,
            n: poll.n,
            pollster: label(&spec.pollster_names, poll.meta.pollster),
            mode: label(&spec.mode_names, poll.meta.mode),
            population: label(&spec.population_names, poll.meta.population),
        }
    }

    pub fn resolve(&self, spec: &ModelSpec) -> Result<PollObservation> {
        let poll = PollObservation {
            poll_id: self.poll_id.clone(),
            day: self.day,
            state: resolve_state(spec, &self.state)?,
            y: self.y,
            n: self.n,
            meta: resolve_meta(spec, &self.pollster, &self.mode, &self.population)?,
        };
        poll.validate(spec)?;
        Ok(poll)
    }
}

/// Declares the document enum once and emits two forms of it: the public
/// internally tagged one, and an externally tagged twin that decoding goes
/// through, since buffering an internally tagged enum loses field paths.
macro_rules! schedule_docs {
    ($( $(#[$vm:meta])* $variant:ident { $( $(#[$fm:meta])* $field:ident : $ty:ty ),* $(,)? } ),* $(,)?) => {
        #[derive(Debug, Clone, PartialEq, Serialize)]
        #[serde(tag = "family", rename_all = "snake_case")]
        pub enum ScheduleDoc {
            $( $(#[$vm])* $variant { $( $(#[$fm])* $field: $ty ),* } ),*
        }

        #[derive(Deserialize)]
        #[serde(rename_all = "snake_case", deny_unknown_fields)]
        enum Tagged {
            $( $variant { $( $(#[$fm])* $field: $ty ),* } ),*
        }

        impl From<Tagged> for ScheduleDoc {
            fn from(t: Tagged) -> Self {
                match t {
                    $( Tagged::$variant { $( $field ),* } => ScheduleDoc::$variant { $( $field ),* } ),*
                }
            }
        }
    };
}

schedule_docs! {
    Identity {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mesh: Option<usize>,
    },
    DataArrival {
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        polls: Vec<PollEntry>,
        /// Poll table, relative to the document's directory.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        polls_file: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        first_slot: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mesh: Option<usize>,
    },
    HypotheticalPoll {
        #[serde(default = "hypothetical_id")]
        poll_id: String,
        day: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        state: Option<Label>,
        pollster: Label,
        mode: Label,
        population: Label,
        /// `[y, n]` at the first step; requires `end`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        start: Option<[f64; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        end: Option<[f64; 2]>,
        /// Explicit `[y, n]` per step, instead of `start` / `end`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<Vec<[f64; 2]>>,
        #[serde(default = "yes")]
        fixed_ratio: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        slot: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mesh: Option<usize>,
    },
    PriorLocation {
        state: Label,
        a_max: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mesh: Option<usize>,
    },
    PriorScale {
        a_max: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mesh: Option<usize>,
    },
    RwScale {
        a_max: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mesh: Option<usize>,
    },
    DataValue {
        poll_id: String,
        target_y: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mesh: Option<usize>,
    },
    Power {
        /// Terminal powers per prior component, reached linearly.
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        prior: BTreeMap<PriorComponent, f64>,
        /// Terminal powers per poll id, reached linearly.
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        likelihood: BTreeMap<String, f64>,
        /// Explicit paths; when present, `prior` / `likelihood` must be empty.
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        prior_paths: BTreeMap<PriorComponent, Vec<f64>>,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        likelihood_paths: BTreeMap<String, Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mesh: Option<usize>,
    },
    /// Each part continues from the previous part's terminal knob.
    Chain { parts: Vec<ScheduleDoc> },
}

/// Errors inside the document come out as ``at `field`: message`` so the
/// enclosing decoder can extend its own path.
impl<'de> Deserialize<'de> for ScheduleDoc {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        use serde_json::{Map, Value};
        let mut map = Map::<String, Value>::deserialize(d)?;
        let family = match map.remove("family") {
            Some(Value::String(f)) => f,
            Some(other) => return Err(D::Error::custom(format!("at `family`: expected a family name, found {other}"))),
            None => return Err(D::Error::missing_field("family")),
        };
        let wrapped = Value::Object(Map::from_iter([(family, Value::Object(map))]));
        serde_path_to_error::deserialize::<_, Tagged>(wrapped).map(Into::into).map_err(|e| {
            let message = e.inner().to_string();
            let path = e.path().to_string();
            // The first path segment is the family itself.
            let field = match path.split_once('.') {
                _ if message.starts_with("unknown variant") => "family".to_string(),
                Some((_, rest)) => super::kv::field_path(rest, &message),
                None => super::kv::field_path("", &message),
            };
            D::Error::custom(format!("at `{field}`: {}", super::kv::located(&message).1))
        })
    }
}

fn hypothetical_id() -> String {
    "hypothetical".into()
}

fn yes() -> bool {
    true
}

impl ScheduleDoc {
    /// Parses a key-value document; an empty one is the identity.
    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let doc = KvDocument::parse(text, file)?;
        if doc.is_empty() {
            return Ok(ScheduleDoc::Identity { mesh: None });
        }
        doc.decode(file)
    }

    /// Builds the schedule. `base_dir` resolves `polls_file` entries.
    pub fn build(&self, model: &Model, default_mesh: usize, base_dir: Option<&Path>) -> Result<PerturbationSchedule> {
        let mut next_slot = model.first_free_slot();
        self.build_from(model, default_mesh, base_dir, &mut next_slot)
    }

    /// Builds the schedule as a continuation of `base`: new polls take
    /// slots after those `base` already uses, and every knob is layered on
    /// `base`.
    pub fn build_on(
        &self,
        model: &Model,
        default_mesh: usize,
        base_dir: Option<&Path>,
        base: &Knob,
    ) -> Result<PerturbationSchedule> {
        let mut next_slot = base
            .hypothetical
            .iter()
            .map(|h| h.slot + 1)
            .fold(model.first_free_slot(), usize::max);
        let s = self.build_from(model, default_mesh, base_dir, &mut next_slot)?;
        if base.is_identity() {
            Ok(s)
        } else {
            s.rebased(base)
        }
    }

    fn build_from(
        &self,
        model: &Model,
        default_mesh: usize,
        base_dir: Option<&Path>,
        next_slot: &mut usize,
    ) -> Result<PerturbationSchedule> {
        let spec = model.spec();
        let steps = |mesh: &Option<usize>| mesh.unwrap_or(default_mesh);
        match self {
            ScheduleDoc::Identity { mesh } => PerturbationSchedule::identity(steps(mesh)),
            ScheduleDoc::DataArrival {
                polls,
                polls_file,
                first_slot,
                mesh,
            } => {
                let mut all = polls
                    .iter()
                    .map(|p| p.resolve(spec))
                    .collect::<Result<Vec<_>>>()?;
                if let Some(file) = polls_file {
                    let path = base_dir.map_or_else(|| PathBuf::from(file), |d| d.join(file));
                    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    all.extend(parse_polls(&text, &path.display().to_string(), spec)?);
                }
                let first = first_slot.unwrap_or(*next_slot);
                *next_slot = first + all.len();
                PerturbationSchedule::data_arrival(model, &all, Some(first), steps(mesh))
            }
            ScheduleDoc::HypotheticalPoll {
                poll_id,
                day,
                state,
                pollster,
                mode,
                population,
                start,
                end,
                path,
                fixed_ratio,
                slot,
                mesh,
            } => {
                let slot = slot.unwrap_or(*next_slot);
                *next_slot = slot + 1;
                let template = PollTemplate {
                    poll_id: poll_id.clone(),
                    day: *day,
                    state: resolve_state(spec, state)?,
                    meta: resolve_meta(spec, pollster, mode, population)?,
                    slot: Some(slot),
                };
                match (start, end, path) {
                    (Some(s), Some(e), None) => PerturbationSchedule::hypothetical_poll(
                        model,
                        &template,
                        (s[0], s[1]),
                        (e[0], e[1]),
                        steps(mesh),
                    ),
                    (None, None, Some(p)) => {
                        let pts: Vec<(f64, f64)> = p.iter().map(|x| (x[0], x[1])).collect();
                        PerturbationSchedule::hypothetical_poll_path(model, &template, &pts, *fixed_ratio)
                    }
                    _ => Err(Error::Usage(
                        "hypothetical_poll needs either `start` and `end` or `path`".into(),
                    )),
                }
            }
            ScheduleDoc::PriorLocation { state, a_max, mesh } => {
                let s = state.resolve("state", |k| spec.state_index(k))?;
                PerturbationSchedule::prior_location(model, s, *a_max, steps(mesh))
            }
            ScheduleDoc::PriorScale { a_max, mesh } => {
                PerturbationSchedule::prior_scale(*a_max, steps(mesh))
            }
            ScheduleDoc::RwScale { a_max, mesh } => PerturbationSchedule::rw_scale(*a_max, steps(mesh)),
            ScheduleDoc::DataValue {
                poll_id,
                target_y,
                mesh,
            } => PerturbationSchedule::data_value(model, poll_id, *target_y, steps(mesh)),
            ScheduleDoc::Power {
                prior,
                likelihood,
                prior_paths,
                likelihood_paths,
                mesh,
            } => {
                let explicit = !prior_paths.is_empty() || !likelihood_paths.is_empty();
                let targets = !prior.is_empty() || !likelihood.is_empty();
                match (explicit, targets) {
                    (true, false) => PerturbationSchedule::power(prior_paths, likelihood_paths),
                    (false, _) => PerturbationSchedule::power_linear(prior, likelihood, steps(mesh)),
                    (true, true) => Err(Error::Usage(
                        "power schedules take either targets or explicit paths".into(),
                    )),
                }
            }
            ScheduleDoc::Chain { parts } => {
                let mut iter = parts.iter();
                let first = iter
                    .next()
                    .ok_or_else(|| Error::Usage("chain needs at least one part".into()))?;
                let mut acc = first.build_from(model, default_mesh, base_dir, next_slot)?;
                for part in iter {
                    let next = part.build_from(model, default_mesh, base_dir, next_slot)?;
                    acc = acc.then(&next)?;
                }
                Ok(acc)
            }
        }
    }
}

/// Reads and builds a schedule file.
pub fn load_schedule(path: &Path, model: &Model, default_mesh: usize) -> Result<PerturbationSchedule> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc = ScheduleDoc::parse(&text, &path.display().to_string())?;
    doc.build(model, default_mesh, path.parent())
}
