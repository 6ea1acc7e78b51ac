//! The subcommands. Each writes its artifacts atomically under the output
//! directory and a run report where a run takes place.

use std::path::{Path, PathBuf};

use pollsmc_core::backtest::{backtest_compare, BacktestConfig};
use pollsmc_core::forecast::{forecast_summary, scenario_report, LevelSummary};
use pollsmc_core::hmc::{reference_chains, ReferenceConfig};
use pollsmc_core::io::{
    desk_instance, desk_presets, from_kv, generate_synthetic, load_polls, load_spec, parse_spec, read_draws, read_text,
    save_spec, to_kv, write_atomic, write_draws, write_polls, PollPlan, RunReport, ScheduleDoc,
};
use pollsmc_core::io::kv::{field_path, located};
use pollsmc_core::meta::CompiledKnob;
use pollsmc_core::scenario::execute;
use pollsmc_core::{Knob, Model, ParticleSet, PerturbationSchedule, ScheduleFamily, SmcConfig, SmcRun};
use serde::Serialize;

use crate::error::CliError;

type Outcome = Result<(), CliError>;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::usage(e.to_string(), "report a bug"))?;
    text.push('\n');
    Ok(write_atomic(path, text.as_bytes())?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read_text(path)?;
    let mut de = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let message = e.inner().to_string();
        pollsmc_core::Error::Schema {
            file: path.display().to_string(),
            line: e.inner().line(),
            field: field_path(&e.path().to_string(), &message),
            message: located(&message).1.to_string(),
        }
        .into()
    })
}

/// Document in kv form, or JSON when the file name ends in `.json`.
fn read_document<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    if path.extension().is_some_and(|e| e == "json") {
        read_json(path)
    } else {
        Ok(from_kv(&read_text(path)?, &path.display().to_string())?)
    }
}

pub fn generate(out: &Path, spec: Option<&Path>, plan: Option<&Path>, seed: u64) -> Outcome {
    let (spec, polls, truth) = match (spec, plan) {
        (Some(spec_path), Some(plan_path)) => {
            let spec = parse_spec(&read_text(spec_path)?, &spec_path.display().to_string())?;
            let plan: PollPlan = read_document(plan_path)?;
            let (polls, truth) = generate_synthetic(&spec, &plan, seed)?;
            (spec, polls, truth)
        }
        (None, None) => {
            let desk = desk_instance(seed)?;
            let arrivals: Vec<_> = desk.arrivals.iter().flatten().cloned().collect();
            write_atomic(&out.join("arrivals.csv"), write_polls(&arrivals, &desk.spec)?.as_bytes())?;
            for preset in desk_presets(&desk, SmcConfig::default().mesh) {
                let text = format!("# {}\n{}", preset.description, to_kv(&preset.document)?);
                write_atomic(&out.join("presets").join(format!("{}.kv", preset.name)), text.as_bytes())?;
            }
            (desk.spec, desk.baseline, desk.truth)
        }
        _ => return Err(CliError::usage("--spec and --plan go together", "give both, or neither for the desk instance")),
    };
    save_spec(&out.join("spec.kv"), &spec)?;
    write_atomic(&out.join("polls.csv"), write_polls(&polls, &spec)?.as_bytes())?;
    write_json(&out.join("truth.json"), &truth)?;
    log::info!("wrote {} polls to {}", polls.len(), out.display());
    Ok(())
}

pub struct FitPlan {
    pub spec: PathBuf,
    pub polls: PathBuf,
    pub slots: Option<usize>,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
}

/// Sampler statistics of a baseline fit.
#[derive(Debug, Serialize)]
struct FitSummary {
    draws: usize,
    iterations: usize,
    burn_in: usize,
    seed: u64,
    accept_rate: f64,
    divergences: usize,
    step_size: f64,
    seconds: f64,
    warning: Option<String>,
}

/// A zero-step schedule: the report of a fit has no perturbation steps.
fn fit_schedule() -> PerturbationSchedule {
    PerturbationSchedule {
        label: "baseline fit".into(),
        family: ScheduleFamily::Identity,
        mesh: vec![0.0],
        levels: vec![1.0],
        knobs: vec![Knob::identity()],
        baseline: Knob::identity(),
        junctions: Vec::new(),
    }
}

pub fn fit_baseline(out: &Path, plan: &FitPlan) -> Outcome {
    let spec = load_spec(&plan.spec)?;
    let polls = load_polls(&plan.polls, &spec)?;
    let slots = plan.slots.unwrap_or(polls.len() + 8);
    let model = Model::new(spec, polls, slots)?;
    let config = ReferenceConfig {
        iterations: plan.iterations,
        burn_in: plan.burn_in,
        ..ReferenceConfig::default()
    };
    let mut runs = reference_chains(&model, &CompiledKnob::identity(&model), &config, &[plan.seed])?;
    let run = runs.remove(0);
    if let Some(w) = &run.warning {
        log::warn!("{w}");
    }
    let summary = FitSummary {
        draws: run.draws.len(),
        iterations: plan.iterations,
        burn_in: plan.burn_in,
        seed: plan.seed,
        accept_rate: run.accept_rate,
        divergences: run.divergences,
        step_size: run.step_size,
        seconds: run.seconds,
        warning: run.warning.clone(),
    };
    let particles = ParticleSet::from_draws(run.draws)?;
    write_atomic(&out.join("draws.csv"), write_draws(model.layout(), &particles)?.as_bytes())?;
    let fit = SmcRun {
        particles,
        records: Vec::new(),
        snapshots: Vec::new(),
    };
    let report = RunReport::new(&model, &fit_schedule(), &SmcConfig::default(), &fit, rayon::current_num_threads(), None)?;
    write_atomic(&out.join("report.json"), report.to_json()?.as_bytes())?;
    write_json(&out.join("fit.json"), &summary)?;
    log::info!(
        "{} draws, acceptance {:.2}, {} divergences, {:.1}s",
        summary.draws,
        summary.accept_rate,
        summary.divergences,
        summary.seconds
    );
    Ok(())
}

pub struct RunPlan {
    pub spec: PathBuf,
    pub polls: PathBuf,
    pub baseline: Option<PathBuf>,
    pub schedule: PathBuf,
    pub after: Option<PathBuf>,
    pub config: SmcConfig,
}

/// Model, starting particles and schedule of a run.
struct Prepared {
    model: Model,
    particles: ParticleSet,
    schedule: PerturbationSchedule,
}

fn prepare(plan: &RunPlan) -> Result<Prepared, CliError> {
    let Some(draws_path) = &plan.baseline else {
        return Err(CliError::usage(
            "a run needs baseline draws",
            "run `pollsmc fit-baseline` first and pass --baseline <out>/draws.csv",
        ));
    };
    plan.config.validate()?;
    let spec = load_spec(&plan.spec)?;
    let polls = load_polls(&plan.polls, &spec)?;
    let draws = read_draws(&read_text(draws_path)?, &draws_path.display().to_string())?;
    let model = Model::new(spec, polls, draws.layout.n_slots)?;
    if *model.layout() != draws.layout {
        return Err(CliError::usage(
            format!("{} was fitted to a different model", draws_path.display()),
            "pass the spec the draws were fitted with",
        ));
    }
    let base = match &plan.after {
        Some(p) => read_json::<Knob>(p)?,
        None => Knob::identity(),
    };
    let doc = ScheduleDoc::parse(&read_text(&plan.schedule)?, &plan.schedule.display().to_string())?;
    let schedule = doc.build_on(&model, plan.config.mesh, plan.schedule.parent(), &base)?;
    Ok(Prepared {
        model,
        particles: draws.particles,
        schedule,
    })
}

pub fn run_scenario(out: &Path, plan: &RunPlan, extra_snapshots: &[usize]) -> Outcome {
    let Prepared {
        model,
        particles,
        schedule,
    } = prepare(plan)?;
    let steps = schedule.steps();
    if let Some(bad) = extra_snapshots.iter().find(|s| **s > steps) {
        return Err(CliError::usage(format!("snapshot step {bad} outside 0..={steps}"), "pick steps of the schedule's mesh"));
    }
    let mut snapshots = extra_snapshots.to_vec();
    snapshots.push(steps);
    snapshots.sort_unstable();
    snapshots.dedup();
    let before = forecast_summary(&model, &particles)?;
    let outcome = execute(&model, &schedule, particles, &plan.config, &snapshots, &mut |_| {})?;
    write_atomic(&out.join("report.json"), outcome.report.to_json()?.as_bytes())?;
    for snap in &outcome.run.snapshots {
        let (draws, knob) = if snap.step == steps {
            (out.join("draws.csv"), out.join("knob.json"))
        } else {
            let dir = out.join("snapshots");
            (dir.join(format!("{}.csv", snap.step)), dir.join(format!("{}.knob.json", snap.step)))
        };
        write_atomic(&draws, write_draws(model.layout(), &snap.particles)?.as_bytes())?;
        write_json(&knob, &schedule.knobs[snap.step])?;
    }
    if let Some(e) = outcome.error {
        log::error!("stopped after step {}; partial report written", outcome.run.records.len());
        return Err(e.into());
    }
    let levels = outcome
        .run
        .records
        .iter()
        .map(|r| LevelSummary::from_record(&model, r))
        .collect::<pollsmc_core::Result<Vec<_>>>()?;
    let table = scenario_report(&before, &levels, &schedule)?;
    write_atomic(&out.join("summary.txt"), table.render().as_bytes())?;
    let d = &outcome.report.diagnostics;
    log::info!(
        "{} steps, {} rejuvenations, min ESS {:.1}; artifacts in {}",
        d.steps,
        d.rejuvenations,
        d.min_ess,
        out.display()
    );
    Ok(())
}

pub struct OracleSettings {
    pub chains: usize,
    pub tolerance: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub refits: bool,
}

pub fn backtest(out: &Path, plan: &RunPlan, oracle: &OracleSettings) -> Outcome {
    let Prepared {
        model,
        particles,
        schedule,
    } = prepare(plan)?;
    let config = BacktestConfig {
        smc: plan.config.clone(),
        reference: ReferenceConfig {
            iterations: oracle.iterations,
            burn_in: oracle.burn_in,
            ..ReferenceConfig::default()
        },
        oracle_chains: oracle.chains,
        tolerance: oracle.tolerance,
        time_refits: oracle.refits,
    };
    let result = backtest_compare(&model, particles, &schedule, &config)?;
    write_atomic(&out.join("report.json"), result.run.to_json()?.as_bytes())?;
    write_atomic(&out.join("comparison.csv"), result.comparison.to_csv().as_bytes())?;
    write_atomic(&out.join("timing.csv"), result.timing.to_csv().as_bytes())?;
    for w in &result.reference_warnings {
        log::warn!("reference: {w}");
    }
    let c = &result.comparison;
    log::info!(
        "{:.1}% of {} coordinates within {}x combined MCSE (max |z| {:.2})",
        100.0 * c.within_fraction,
        c.rows.len(),
        c.tolerance,
        c.max_z
    );
    let t = &result.timing;
    match t.reference_wall_seconds {
        Some(r) => log::info!("SMC {:.2}s, per-step refits {:.2}s on {} threads", t.smc_wall_seconds, r, t.threads),
        None => log::info!("SMC {:.2}s on {} threads", t.smc_wall_seconds, t.threads),
    }
    Ok(())
}
