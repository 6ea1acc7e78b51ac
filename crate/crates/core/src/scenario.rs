//! One scenario run end to end: the shared path behind the CLI and the
//! service, so both produce identical reports for identical inputs.

use crate::io::report::RunReport;
use crate::meta::{Knob, PerturbationSchedule};
use crate::model::Model;
use crate::smc::{run_schedule, ParticleSet, SmcConfig, SmcRun, StepRecord};
use crate::{Error, Result};

#[derive(Debug)]
pub struct ScenarioOutcome {
    /// Complete on success; on failure it holds the steps that finished
    /// and a `failure` entry.
    pub report: RunReport,
    pub run: SmcRun,
    pub error: Option<Error>,
}

impl ScenarioOutcome {
    /// Configuration reached at the last completed step.
    pub fn reached_knob<'a>(&self, schedule: &'a PerturbationSchedule) -> &'a Knob {
        &schedule.knobs[self.run.records.len()]
    }
}

/// Runs `schedule` from `initial` and assembles the report. Errors are
/// returned only when no report can be built; engine failures are carried
/// in the outcome.
pub fn execute(
    model: &Model,
    schedule: &PerturbationSchedule,
    initial: ParticleSet,
    config: &SmcConfig,
    snapshot_steps: &[usize],
    observer: &mut dyn FnMut(&StepRecord),
) -> Result<ScenarioOutcome> {
    let threads = rayon::current_num_threads();
    let (run, error) = match run_schedule(model, schedule, initial, config, snapshot_steps, observer) {
        Ok(run) => (run, None),
        Err(failure) => {
            let failure = *failure;
            (failure.partial, Some(failure.error))
        }
    };
    let report = RunReport::new(model, schedule, config, &run, threads, error.as_ref())?;
    Ok(ScenarioOutcome { report, run, error })
}
