//! Baselines, jobs and their on-disk form.
//!
//! Layout under the data directory:
//!
//! ```text
//! baselines/<id>/baseline.json   label, slots, desk seed
//! baselines/<id>/spec.json
//! baselines/<id>/polls.csv
//! baselines/<id>/draws.csv
//! jobs/<id>/job.json             request, lineage and state
//! jobs/<id>/schedule.json        the built schedule
//! jobs/<id>/report.json          once DONE or FAILED
//! jobs/<id>/snapshots/<step>.csv particles after <step>
//! jobs/<id>/snapshots/<step>.knob.json
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use pollsmc_core::io::draws::{read_draws, write_draws};
use pollsmc_core::io::report::{FailureInfo, RunReport};
use pollsmc_core::io::{load_polls, load_spec, read_text, save_spec, write_atomic, write_polls};
use pollsmc_core::meta::{Knob, PerturbationSchedule};
use pollsmc_core::smc::{ParticleSet, StepRecord};
use pollsmc_core::{Model, Result};
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use crate::api::ScenarioRequest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_final(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }

    /// States only move forward; DONE and FAILED are terminal.
    pub fn can_become(self, next: JobState) -> bool {
        !self.is_final() && next > self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineMeta {
    pub id: String,
    pub label: String,
    pub n_slots: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub desk_seed: Option<u64>,
}

pub struct Baseline {
    pub meta: BaselineMeta,
    pub model: Arc<Model>,
    pub particles: ParticleSet,
}

/// Where a job starts: a baseline, or a job's particles after `step`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParentRef {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
}

/// The persisted part of a job.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobMeta {
    pub id: String,
    pub seq: u64,
    pub baseline: String,
    pub parent: ParentRef,
    pub request: ScenarioRequest,
    pub state: JobState,
    pub steps_total: usize,
    /// Snapshot steps saved to disk, the terminal step always among them.
    pub snapshots: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<FailureInfo>,
}

pub struct Job {
    pub meta: JobMeta,
    pub schedule: PerturbationSchedule,
    pub records: Vec<StepRecord>,
    pub report: Option<RunReport>,
    /// Number of records published so far, for event streams.
    pub progress: watch::Sender<usize>,
}

#[derive(Default)]
pub struct Registry {
    pub baselines: BTreeMap<String, Arc<Baseline>>,
    pub jobs: BTreeMap<String, Job>,
    /// Largest id suffix handed out so far.
    pub next_baseline: u64,
    pub next_job: u64,
}

pub struct Store {
    pub root: PathBuf,
}

impl Store {
    pub fn baseline_dir(&self, id: &str) -> PathBuf {
        self.root.join("baselines").join(id)
    }

    pub fn job_dir(&self, id: &str) -> PathBuf {
        self.root.join("jobs").join(id)
    }

    fn snapshot_path(&self, job: &str, step: usize) -> PathBuf {
        self.job_dir(job).join("snapshots").join(format!("{step}.csv"))
    }

    fn snapshot_knob_path(&self, job: &str, step: usize) -> PathBuf {
        self.job_dir(job).join("snapshots").join(format!("{step}.knob.json"))
    }

    pub fn save_baseline(&self, b: &Baseline) -> Result<()> {
        let dir = self.baseline_dir(&b.meta.id);
        save_spec(&dir.join("spec.json"), b.model.spec())?;
        write_atomic(&dir.join("polls.csv"), write_polls(b.model.polls(), b.model.spec())?.as_bytes())?;
        write_atomic(&dir.join("draws.csv"), write_draws(b.model.layout(), &b.particles)?.as_bytes())?;
        write_atomic(&dir.join("baseline.json"), &json(&b.meta)?)
    }

    pub fn load_baseline(&self, dir: &Path) -> Result<Baseline> {
        let meta: BaselineMeta = from_json(&dir.join("baseline.json"))?;
        let spec = load_spec(&dir.join("spec.json"))?;
        let polls = load_polls(&dir.join("polls.csv"), &spec)?;
        let model = Model::new(spec, polls, meta.n_slots)?;
        let path = dir.join("draws.csv");
        let draws = read_draws(&read_text(&path)?, &path.display().to_string())?;
        Ok(Baseline {
            meta,
            model: Arc::new(model),
            particles: draws.particles,
        })
    }

    pub fn save_job(&self, meta: &JobMeta) -> Result<()> {
        write_atomic(&self.job_dir(&meta.id).join("job.json"), &json(meta)?)
    }

    pub fn save_schedule(&self, job: &str, schedule: &PerturbationSchedule) -> Result<()> {
        write_atomic(&self.job_dir(job).join("schedule.json"), &json(schedule)?)
    }

    pub fn save_report(&self, job: &str, report: &RunReport) -> Result<()> {
        write_atomic(&self.job_dir(job).join("report.json"), report.to_json()?.as_bytes())
    }

    pub fn load_report(&self, job: &str) -> Result<Option<RunReport>> {
        let path = self.job_dir(job).join("report.json");
        if !path.exists() {
            return Ok(None);
        }
        RunReport::from_json(&read_text(&path)?, &path.display().to_string()).map(Some)
    }

    pub fn save_snapshot(&self, job: &str, step: usize, model: &Model, set: &ParticleSet, knob: &Knob) -> Result<()> {
        write_atomic(&self.snapshot_path(job, step), write_draws(model.layout(), set)?.as_bytes())?;
        write_atomic(&self.snapshot_knob_path(job, step), &json(knob)?)
    }

    /// Particles and configuration of a stored snapshot.
    pub fn load_snapshot(&self, job: &str, step: usize) -> Result<(ParticleSet, Knob)> {
        let path = self.snapshot_path(job, step);
        let draws = read_draws(&read_text(&path)?, &path.display().to_string())?;
        let knob = from_json(&self.snapshot_knob_path(job, step))?;
        Ok((draws.particles, knob))
    }

    /// Every stored baseline and job. Jobs that were still queued or
    /// running when the process stopped come back FAILED.
    pub fn load_all(&self) -> Result<Registry> {
        let mut reg = Registry::default();
        for dir in subdirs(&self.root.join("baselines"))? {
            let b = self.load_baseline(&dir)?;
            reg.next_baseline = reg.next_baseline.max(numeric_suffix(&b.meta.id));
            reg.baselines.insert(b.meta.id.clone(), Arc::new(b));
        }
        for dir in subdirs(&self.root.join("jobs"))? {
            let mut meta: JobMeta = from_json(&dir.join("job.json"))?;
            if !meta.state.is_final() {
                meta.state = JobState::Failed;
                meta.error = Some(FailureInfo {
                    kind: "interrupted".into(),
                    message: "the service stopped before the job finished".into(),
                });
                self.save_job(&meta)?;
            }
            let report = self.load_report(&meta.id)?;
            let schedule: PerturbationSchedule = from_json(&dir.join("schedule.json"))?;
            let records = report.as_ref().map(|r| r.records.clone()).unwrap_or_default();
            let (progress, _) = watch::channel(records.len());
            reg.next_job = reg.next_job.max(meta.seq);
            reg.jobs.insert(
                meta.id.clone(),
                Job {
                    meta,
                    schedule,
                    records,
                    report,
                    progress,
                },
            );
        }
        Ok(reg)
    }
}

fn json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    serde_json::to_vec_pretty(value).map_err(|e| pollsmc_core::Error::Config(e.to_string()))
}

fn from_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| pollsmc_core::Error::Schema {
        file: path.display().to_string(),
        line: e.line(),
        field: String::new(),
        message: e.to_string(),
    })
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| pollsmc_core::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

fn numeric_suffix(id: &str) -> u64 {
    id.rsplit('-').next().and_then(|n| n.parse().ok()).unwrap_or(0)
}
