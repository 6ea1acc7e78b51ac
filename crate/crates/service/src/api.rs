//! Routes, request documents and the job runner.

use std::convert::Infallible;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use pollsmc_core::forecast::{forecast_summary, ForecastSummary, SeriesSummary};
use pollsmc_core::hmc::{reference_chains, ReferenceConfig};
use pollsmc_core::io::draws::read_draws;
use pollsmc_core::io::kv::{field_path, located};
use pollsmc_core::io::report::FailureInfo;
use pollsmc_core::io::schedule_doc::{PollEntry, ScheduleDoc};
use pollsmc_core::io::{desk_instance, desk_presets, Preset};
use pollsmc_core::meta::{CompiledKnob, Knob};
use pollsmc_core::model::{ModelSpec, PollObservation};
use pollsmc_core::scenario::execute;
use pollsmc_core::smc::{ParticleSet, SmcConfig, StepRecord};
use pollsmc_core::Model;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::{watch, Semaphore};

use crate::error::ApiError;
use crate::registry::{Baseline, BaselineMeta, Job, JobMeta, JobState, ParentRef, Registry, Store};

/// Shared service state.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    registry: Mutex<Registry>,
    store: Store,
    workers: Arc<Semaphore>,
}

impl AppState {
    /// Opens (or creates) the data directory and reloads what it holds.
    pub fn open(data_dir: &std::path::Path, workers: usize) -> pollsmc_core::Result<Self> {
        std::fs::create_dir_all(data_dir).map_err(|e| pollsmc_core::Error::Io {
            path: data_dir.to_path_buf(),
            source: e,
        })?;
        let store = Store {
            root: data_dir.to_path_buf(),
        };
        let registry = store.load_all()?;
        Ok(Self {
            inner: Arc::new(Inner {
                registry: Mutex::new(registry),
                store,
                workers: Arc::new(Semaphore::new(workers.max(1))),
            }),
        })
    }

    fn registry(&self) -> MutexGuard<'_, Registry> {
        self.inner.registry.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn store(&self) -> &Store {
        &self.inner.store
    }
}

/// Largest accepted request body.
pub const BODY_LIMIT: usize = 256 << 20;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/baselines", post(create_baseline).get(list_baselines))
        .route("/baselines/{id}", get(get_baseline))
        .route("/baselines/{id}/forecast", get(baseline_forecast))
        .route("/baselines/{id}/presets", get(baseline_presets))
        .route("/scenarios", post(submit_scenario).get(list_scenarios))
        .route("/scenarios/{id}", get(get_scenario))
        .route("/scenarios/{id}/events", get(scenario_events))
        .route("/scenarios/{id}/report", get(scenario_report))
        .route("/scenarios/{id}/forecast", get(scenario_forecast))
        .route("/lineage", get(lineage))
        // Baseline uploads carry whole draws files.
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// Decodes a JSON body; errors name the offending field path.
fn decode<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let mut de = serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let message = e.inner().to_string();
        let field = field_path(&e.path().to_string(), &message);
        ApiError::validation(Some(field), located(&message).1)
    })
}

fn blocking_error(e: tokio::task::JoinError) -> ApiError {
    ApiError::internal(format!("worker task failed: {e}"))
}

// ---------------------------------------------------------------- baselines

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitRequest {
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for FitRequest {
    fn default() -> Self {
        let r = ReferenceConfig::default();
        Self {
            iterations: r.iterations,
            burn_in: r.burn_in,
            seed: 0,
        }
    }
}

/// Either `desk_seed` (the synthetic desk instance) or `spec` with `polls`.
/// Without `draws` the baseline is fitted by reference MCMC.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineRequest {
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub desk_seed: Option<u64>,
    #[serde(default)]
    pub spec: Option<ModelSpec>,
    #[serde(default)]
    pub polls: Vec<PollEntry>,
    /// Error slots; defaults to the poll count plus eight spares.
    #[serde(default)]
    pub n_slots: Option<usize>,
    /// A draws file's text.
    #[serde(default)]
    pub draws: Option<String>,
    #[serde(default)]
    pub fit: FitRequest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineView {
    pub id: String,
    pub label: String,
    pub particles: usize,
    pub dim: usize,
    pub states: usize,
    pub days: usize,
    pub state_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub desk_seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineDetail {
    #[serde(flatten)]
    pub view: BaselineView,
    pub spec: ModelSpec,
    pub polls: Vec<PollObservation>,
}

fn baseline_view(b: &Baseline) -> BaselineView {
    let spec = b.model.spec();
    BaselineView {
        id: b.meta.id.clone(),
        label: b.meta.label.clone(),
        particles: b.particles.len(),
        dim: b.model.dim(),
        states: spec.states,
        days: spec.days,
        state_names: (0..spec.states).map(|s| spec.state_label(s)).collect(),
        desk_seed: b.meta.desk_seed,
    }
}

fn build_baseline(req: BaselineRequest, id: String) -> Result<Baseline, ApiError> {
    let (spec, polls, n_slots, label) = match (&req.desk_seed, &req.spec) {
        (Some(seed), None) => {
            if !req.polls.is_empty() || req.n_slots.is_some() {
                return Err(ApiError::validation(
                    Some("desk_seed".into()),
                    "`desk_seed` replaces `polls` and `n_slots`",
                ));
            }
            let desk = desk_instance(*seed)?;
            (desk.spec, desk.baseline, desk.n_slots, format!("desk instance {seed}"))
        }
        (None, Some(spec)) => {
            let polls = req
                .polls
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    p.resolve(spec).map_err(|e| ApiError::validation(Some(format!("polls[{i}]")), e.to_string()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let n_slots = req.n_slots.unwrap_or(polls.len() + 8);
            (spec.clone(), polls, n_slots, "custom baseline".to_string())
        }
        _ => {
            return Err(ApiError::validation(
                Some("spec".into()),
                "give exactly one of `desk_seed` and `spec`",
            ))
        }
    };
    let model = Model::new(spec, polls, n_slots)?;
    let particles = match &req.draws {
        Some(text) => {
            let file = read_draws(text, "draws")?;
            if file.layout != *model.layout() {
                return Err(ApiError::validation(
                    Some("draws".into()),
                    "the draws header does not match the model layout",
                ));
            }
            file.particles
        }
        None => {
            let config = ReferenceConfig {
                iterations: req.fit.iterations,
                burn_in: req.fit.burn_in,
                ..ReferenceConfig::default()
            };
            let run = reference_chains(&model, &CompiledKnob::identity(&model), &config, &[req.fit.seed])?.remove(0);
            ParticleSet::from_draws(run.draws)?
        }
    };
    Ok(Baseline {
        meta: BaselineMeta {
            id,
            label: req.label.clone().unwrap_or(label),
            n_slots,
            desk_seed: req.desk_seed,
        },
        model: Arc::new(model),
        particles,
    })
}

async fn create_baseline(State(state): State<AppState>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: BaselineRequest = decode(&body)?;
    let id = {
        let mut reg = state.registry();
        reg.next_baseline += 1;
        format!("baseline-{}", reg.next_baseline)
    };
    let st = state.clone();
    let baseline = tokio::task::spawn_blocking(move || -> Result<Baseline, ApiError> {
        let b = build_baseline(req, id)?;
        st.store().save_baseline(&b)?;
        Ok(b)
    })
    .await
    .map_err(blocking_error)??;
    let view = baseline_view(&baseline);
    state.registry().baselines.insert(view.id.clone(), Arc::new(baseline));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn list_baselines(State(state): State<AppState>) -> Json<Vec<BaselineView>> {
    Json(state.registry().baselines.values().map(|b| baseline_view(b)).collect())
}

fn find_baseline(state: &AppState, id: &str) -> Result<Arc<Baseline>, ApiError> {
    state
        .registry()
        .baselines
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::not_found("baseline", id))
}

async fn get_baseline(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<BaselineDetail>, ApiError> {
    let b = find_baseline(&state, &id)?;
    Ok(Json(BaselineDetail {
        view: baseline_view(&b),
        spec: b.model.spec().clone(),
        polls: b.model.polls().to_vec(),
    }))
}

async fn baseline_forecast(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<ForecastSummary>, ApiError> {
    let b = find_baseline(&state, &id)?;
    let summary = tokio::task::spawn_blocking(move || forecast_summary(&b.model, &b.particles))
        .await
        .map_err(blocking_error)??;
    Ok(Json(summary))
}

#[derive(Debug, Deserialize)]
struct PresetQuery {
    mesh: Option<usize>,
}

/// One-click schedule documents; only desk baselines have them.
async fn baseline_presets(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<PresetQuery>,
) -> Result<Json<Vec<Preset>>, ApiError> {
    let b = find_baseline(&state, &id)?;
    let mesh = q.mesh.unwrap_or(SmcConfig::default().mesh);
    match b.meta.desk_seed {
        Some(seed) => Ok(Json(desk_presets(&desk_instance(seed)?, mesh))),
        None => Ok(Json(Vec::new())),
    }
}

// ---------------------------------------------------------------- scenarios

/// Engine settings a request may override; the rest keep their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ess_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweeps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub khat_threshold: Option<f64>,
}

impl ConfigOverrides {
    pub fn apply(&self, mut c: SmcConfig) -> SmcConfig {
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.mesh {
            c.mesh = v;
        }
        if let Some(v) = self.ess_fraction {
            c.ess_fraction = v;
        }
        if let Some(v) = self.sweeps {
            c.sweeps = v;
        }
        if let Some(v) = self.khat_threshold {
            c.khat_threshold = v;
        }
        c
    }
}

/// `parent` is a baseline id, a job id (its terminal particles: a
/// horizontal continuation) or `job@step` (a stored snapshot: a branch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioRequest {
    pub parent: String,
    pub schedule: ScheduleDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub config: ConfigOverrides,
    /// Extra steps whose particles are kept for later branching.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshots: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobView {
    pub id: String,
    pub label: String,
    pub baseline: String,
    pub parent: ParentRef,
    pub state: JobState,
    pub family: String,
    pub steps_done: usize,
    pub steps_total: usize,
    pub snapshots: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub progress: Option<StepRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<FailureInfo>,
}

fn job_view(job: &Job) -> JobView {
    JobView {
        id: job.meta.id.clone(),
        label: job.schedule.label.clone(),
        baseline: job.meta.baseline.clone(),
        parent: job.meta.parent.clone(),
        state: job.meta.state,
        family: serde_json::to_value(job.schedule.family)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
        steps_done: job.records.len(),
        steps_total: job.meta.steps_total,
        snapshots: job.meta.snapshots.clone(),
        progress: job.records.last().cloned(),
        error: job.meta.error.clone(),
    }
}

fn parse_parent(s: &str) -> ParentRef {
    match s.rsplit_once('@') {
        Some((id, step)) if step.parse::<usize>().is_ok() => ParentRef {
            id: id.to_string(),
            step: step.parse().ok(),
        },
        _ => ParentRef {
            id: s.to_string(),
            step: None,
        },
    }
}

/// Root baseline, starting particles and configuration of `parent`.
fn starting_point(state: &AppState, parent: &ParentRef) -> Result<(Arc<Baseline>, ParticleSet, Knob), ApiError> {
    let (baseline_id, step) = {
        let reg = state.registry();
        if let Some(b) = reg.baselines.get(&parent.id) {
            if parent.step.is_some() {
                return Err(ApiError::validation(Some("parent".into()), "baselines have no snapshots"));
            }
            return Ok((b.clone(), b.particles.clone(), Knob::identity()));
        }
        let job = reg
            .jobs
            .get(&parent.id)
            .ok_or_else(|| ApiError::not_found("baseline or scenario", &parent.id))?;
        let step = match parent.step {
            Some(s) => s,
            None if job.meta.state == JobState::Done => job.meta.steps_total,
            None => {
                return Err(ApiError::conflict(format!(
                    "scenario `{}` is {:?}; continue from it once it is DONE",
                    parent.id, job.meta.state
                )))
            }
        };
        let stored = job.meta.snapshots.contains(&step) && job.records.len() >= step;
        if !stored {
            return Err(ApiError::validation(
                Some("parent".into()),
                format!("scenario `{}` has no stored snapshot at step {step}", parent.id),
            ));
        }
        (job.meta.baseline.clone(), step)
    };
    let baseline = find_baseline(state, &baseline_id)?;
    let (particles, knob) = state.store().load_snapshot(&parent.id, step)?;
    Ok((baseline, particles, knob))
}

async fn submit_scenario(State(state): State<AppState>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: ScenarioRequest = decode(&body)?;
    if let ScheduleDoc::DataArrival { polls_file: Some(_), .. } = req.schedule {
        return Err(ApiError::validation(
            Some("schedule.polls_file".into()),
            "send polls inline; the service does not read files",
        ));
    }
    let parent = parse_parent(&req.parent);
    let st = state.clone();
    let req2 = req.clone();
    let prepared = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
        let (baseline, particles, base_knob) = starting_point(&st, &parent)?;
        let config = req2.config.apply(SmcConfig::default());
        config.validate()?;
        let schedule = req2
            .schedule
            .build_on(&baseline.model, config.mesh, None, &base_knob)
            .map_err(|e| match e {
                pollsmc_core::Error::Schema { .. } => ApiError::from(e),
                other => ApiError::validation(Some("schedule".into()), other.to_string()),
            })?;
        let steps = schedule.steps();
        if let Some(bad) = req2.snapshots.iter().find(|s| **s > steps) {
            return Err(ApiError::validation(
                Some("snapshots".into()),
                format!("snapshot step {bad} outside 0..={steps}"),
            ));
        }
        Ok((baseline, particles, config, schedule, parent))
    })
    .await
    .map_err(blocking_error)??;
    let (baseline, particles, config, mut schedule, parent) = prepared;
    if let Some(label) = &req.label {
        schedule.label = label.clone();
    }
    let mut snapshots = req.snapshots.clone();
    snapshots.push(schedule.steps());
    snapshots.sort_unstable();
    snapshots.dedup();
    let (progress, _) = watch::channel(0usize);
    let view = {
        let mut reg = state.registry();
        reg.next_job += 1;
        let seq = reg.next_job;
        let meta = JobMeta {
            id: format!("job-{seq}"),
            seq,
            baseline: baseline.meta.id.clone(),
            parent,
            request: req,
            state: JobState::Queued,
            steps_total: schedule.steps(),
            snapshots: snapshots.clone(),
            error: None,
        };
        state.store().save_job(&meta)?;
        state.store().save_schedule(&meta.id, &schedule)?;
        let job = Job {
            meta,
            schedule: schedule.clone(),
            records: Vec::new(),
            report: None,
            progress,
        };
        let view = job_view(&job);
        reg.jobs.insert(view.id.clone(), job);
        view
    };
    tokio::spawn(run_job(state.clone(), view.id.clone(), baseline, particles, config, schedule, snapshots));
    Ok((StatusCode::ACCEPTED, Json(view)))
}

/// Moves a job to `next`; refuses backward or repeated transitions.
fn transition(state: &AppState, id: &str, next: JobState, error: Option<FailureInfo>) {
    let mut reg = state.registry();
    let Some(job) = reg.jobs.get_mut(id) else { return };
    if !job.meta.state.can_become(next) {
        log::error!("refusing transition of {id} from {:?} to {next:?}", job.meta.state);
        return;
    }
    job.meta.state = next;
    job.meta.error = error;
    if let Err(e) = state.store().save_job(&job.meta) {
        log::error!("cannot persist {id}: {e}");
    }
    job.progress.send_modify(|_| {});
}

async fn run_job(
    state: AppState,
    id: String,
    baseline: Arc<Baseline>,
    particles: ParticleSet,
    config: SmcConfig,
    schedule: pollsmc_core::PerturbationSchedule,
    snapshots: Vec<usize>,
) {
    let Ok(_permit) = state.inner.workers.clone().acquire_owned().await else {
        return;
    };
    transition(&state, &id, JobState::Running, None);
    let st = state.clone();
    let job_id = id.clone();
    let outcome = tokio::task::spawn_blocking(move || {
        let mut publish = |record: &StepRecord| {
            let mut reg = st.registry();
            if let Some(job) = reg.jobs.get_mut(&job_id) {
                job.records.push(record.clone());
                let n = job.records.len();
                job.progress.send_replace(n);
            }
        };
        let out = execute(&baseline.model, &schedule, particles, &config, &snapshots, &mut publish)?;
        for snap in &out.run.snapshots {
            st.store()
                .save_snapshot(&job_id, snap.step, &baseline.model, &snap.particles, &schedule.knobs[snap.step])?;
        }
        st.store().save_report(&job_id, &out.report)?;
        Ok::<_, pollsmc_core::Error>(out)
    })
    .await;
    match outcome {
        Ok(Ok(out)) => {
            let failure = out.error.as_ref().map(FailureInfo::from_error);
            {
                let mut reg = state.registry();
                if let Some(job) = reg.jobs.get_mut(&id) {
                    job.report = Some(out.report);
                    // Snapshots past the failure point were never taken.
                    let taken: Vec<usize> = out.run.snapshots.iter().map(|s| s.step).collect();
                    job.meta.snapshots.retain(|s| taken.contains(s));
                }
            }
            let next = if failure.is_some() { JobState::Failed } else { JobState::Done };
            transition(&state, &id, next, failure);
        }
        Ok(Err(e)) => transition(&state, &id, JobState::Failed, Some(FailureInfo::from_error(&e))),
        Err(e) => transition(
            &state,
            &id,
            JobState::Failed,
            Some(FailureInfo {
                kind: "internal".into(),
                message: e.to_string(),
            }),
        ),
    }
}

async fn list_scenarios(State(state): State<AppState>) -> Json<Vec<JobView>> {
    let reg = state.registry();
    let mut jobs: Vec<&Job> = reg.jobs.values().collect();
    jobs.sort_by_key(|j| j.meta.seq);
    Json(jobs.into_iter().map(job_view).collect())
}

fn with_job<T>(state: &AppState, id: &str, f: impl FnOnce(&Job) -> Result<T, ApiError>) -> Result<T, ApiError> {
    let reg = state.registry();
    let job = reg.jobs.get(id).ok_or_else(|| ApiError::not_found("scenario", id))?;
    f(job)
}

async fn get_scenario(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<JobView>, ApiError> {
    with_job(&state, &id, |j| Ok(Json(job_view(j))))
}

/// The run report; FAILED jobs return their partial report.
async fn scenario_report(State(state): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let report = with_job(&state, &id, |j| {
        if !j.meta.state.is_final() {
            return Err(ApiError::conflict(format!("scenario `{id}` is {:?}", j.meta.state)));
        }
        j.report
            .clone()
            .ok_or_else(|| ApiError::conflict(format!("scenario `{id}` failed before producing a report")))
    })?;
    let body = report.to_json()?;
    Ok(([(axum::http::header::CONTENT_TYPE, "application/json")], body))
}

#[derive(Debug, Deserialize)]
struct ForecastQuery {
    state: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastPayload {
    pub scenario: String,
    pub forecast: ForecastSummary,
    /// The same summary at the scenario's starting point.
    pub parent: ForecastSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateForecastPayload {
    pub scenario: String,
    pub state: String,
    pub forecast: SeriesSummary,
    pub parent: SeriesSummary,
}

async fn scenario_forecast(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ForecastQuery>,
) -> Result<axum::response::Response, ApiError> {
    let (forecast, parent) = with_job(&state, &id, |j| {
        if j.meta.state != JobState::Done {
            return Err(ApiError::conflict(format!("scenario `{id}` is {:?}", j.meta.state)));
        }
        let f = j.report.as_ref().and_then(|r| r.forecast.clone());
        Ok((f, j.meta.parent.clone()))
    })?;
    let forecast = forecast.ok_or_else(|| ApiError::internal("report without a forecast"))?;
    let st = state.clone();
    let parent_forecast = tokio::task::spawn_blocking(move || -> Result<ForecastSummary, ApiError> {
        let (baseline, particles, _) = starting_point(&st, &parent)?;
        Ok(forecast_summary(&baseline.model, &particles)?)
    })
    .await
    .map_err(blocking_error)??;
    match q.state {
        None => Ok(Json(ForecastPayload {
            scenario: id,
            forecast,
            parent: parent_forecast,
        })
        .into_response()),
        Some(name) => {
            let pick = |f: &ForecastSummary| {
                if name == "national" {
                    return Some(f.national.clone());
                }
                f.states.iter().find(|s| s.label == name).cloned()
            };
            match (pick(&forecast), pick(&parent_forecast)) {
                (Some(a), Some(b)) => Ok(Json(StateForecastPayload {
                    scenario: id,
                    state: name,
                    forecast: a,
                    parent: b,
                })
                .into_response()),
                _ => Err(ApiError::not_found("state", &name)),
            }
        }
    }
}

/// Server-sent events: one `step` event per completed mesh step in step
/// order, then a single `end` event. `Last-Event-ID` resumes after a step.
async fn scenario_events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    let rx = with_job(&state, &id, |j| Ok(j.progress.subscribe()))?;
    struct Cursor {
        state: AppState,
        id: String,
        next: usize,
        rx: watch::Receiver<usize>,
        finished: bool,
    }
    let cursor = Cursor {
        state,
        id,
        next: resume,
        rx,
        finished: false,
    };
    let events = stream::unfold(cursor, |mut c| async move {
        loop {
            if c.finished {
                return None;
            }
            let (record, end) = {
                let reg = c.state.registry();
                let job = reg.jobs.get(&c.id)?;
                let record = job.records.get(c.next).cloned();
                let end = (record.is_none() && job.meta.state.is_final()).then(|| {
                    serde_json::json!({ "state": job.meta.state, "error": job.meta.error })
                });
                (record, end)
            };
            if let Some(r) = record {
                c.next += 1;
                let data = serde_json::to_string(&r).unwrap_or_default();
                let ev = Event::default().event("step").id(r.step.to_string()).data(data);
                return Some((Ok(ev), c));
            }
            if let Some(end) = end {
                c.finished = true;
                return Some((Ok(Event::default().event("end").data(end.to_string())), c));
            }
            if c.rx.changed().await.is_err() {
                return None;
            }
        }
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}

// ---------------------------------------------------------------- lineage

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineageNode {
    pub id: String,
    pub kind: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    /// Snapshot step of the parent a branch starts from; absent for a
    /// continuation from the parent's terminal state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<JobState>,
    pub children: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lineage {
    pub roots: Vec<String>,
    pub nodes: Vec<LineageNode>,
}

async fn lineage(State(state): State<AppState>) -> Json<Lineage> {
    let reg = state.registry();
    let mut nodes: Vec<LineageNode> = reg
        .baselines
        .values()
        .map(|b| LineageNode {
            id: b.meta.id.clone(),
            kind: "baseline".into(),
            label: b.meta.label.clone(),
            parent: None,
            parent_step: None,
            state: None,
            children: Vec::new(),
        })
        .collect();
    let mut jobs: Vec<&Job> = reg.jobs.values().collect();
    jobs.sort_by_key(|j| j.meta.seq);
    for j in &jobs {
        nodes.push(LineageNode {
            id: j.meta.id.clone(),
            kind: "scenario".into(),
            label: j.schedule.label.clone(),
            parent: Some(j.meta.parent.id.clone()),
            parent_step: j.meta.parent.step,
            state: Some(j.meta.state),
            children: Vec::new(),
        });
    }
    for j in &jobs {
        if let Some(p) = nodes.iter_mut().find(|n| n.id == j.meta.parent.id) {
            p.children.push(j.meta.id.clone());
        }
    }
    Json(Lineage {
        roots: reg.baselines.keys().cloned().collect(),
        nodes,
    })
}
