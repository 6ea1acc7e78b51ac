//! Run reports: the config echo, every step record, the terminal forecast,
//! timing and a diagnostics roll-up.

use serde::{Deserialize, Serialize};

use crate::forecast::{forecast_summary, ForecastSummary};
use crate::meta::{PerturbationSchedule, ScheduleFamily};
use crate::model::Model;
use crate::smc::{SmcConfig, SmcRun, StepRecord};
use crate::{Error, Result};

pub const REPORT_FORMAT: &str = "pollsmc-report v1";

/// Wall-clock totals. `cumulative[l]` is the sum of `per_step[..=l]` and
/// `total_seconds` the sum of all steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub threads: usize,
    pub per_step: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub total_seconds: f64,
}

impl Timing {
    pub fn from_records(records: &[StepRecord], threads: usize) -> Self {
        let per_step: Vec<f64> = records.iter().map(|r| r.seconds).collect();
        let cumulative: Vec<f64> = per_step
            .iter()
            .scan(0.0, |acc, s| {
                *acc += s;
                Some(*acc)
            })
            .collect();
        Self {
            threads,
            total_seconds: cumulative.last().copied().unwrap_or(0.0),
            per_step,
            cumulative,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRollup {
    pub steps: usize,
    pub rejuvenations: usize,
    /// Largest finite k̂ over reweight-only steps.
    pub max_khat: Option<f64>,
    pub khat_warnings: usize,
    pub divergences: usize,
    /// Infinite for a run with no steps.
    #[serde(with = "crate::io::nonfinite")]
    pub min_ess: f64,
    /// `log Z_L - log Z_0`, the summed evidence increments.
    pub log_evidence: f64,
    pub warnings: Vec<String>,
}

impl DiagnosticsRollup {
    pub fn from_records(records: &[StepRecord]) -> Self {
        let mut warnings = Vec::new();
        for r in records {
            for w in &r.warnings {
                warnings.push(format!("step {}: {w}", r.step));
            }
        }
        Self {
            steps: records.len(),
            rejuvenations: records.iter().filter(|r| r.rejuvenated).count(),
            max_khat: records
                .iter()
                .filter_map(|r| r.khat)
                .filter(|k| k.is_finite())
                .reduce(f64::max),
            khat_warnings: records.iter().filter(|r| r.khat_warning).count(),
            divergences: records.iter().map(|r| r.divergences).sum(),
            min_ess: records
                .iter()
                .map(|r| r.ess_before)
                .fold(f64::INFINITY, f64::min),
            log_evidence: records.iter().map(|r| r.log_evidence_increment).sum(),
            warnings,
        }
    }
}

/// Structured description of a failed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureInfo {
    pub kind: String,
    pub message: String,
}

impl FailureInfo {
    pub fn from_error(e: &Error) -> Self {
        Self {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub format: String,
    pub scenario: String,
    pub family: ScheduleFamily,
    pub config: SmcConfig,
    pub particles: usize,
    pub mesh: Vec<f64>,
    pub levels: Vec<f64>,
    pub records: Vec<StepRecord>,
    /// Absent when the run failed before its last step.
    pub forecast: Option<ForecastSummary>,
    pub diagnostics: DiagnosticsRollup,
    pub timing: Timing,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureInfo>,
}

impl RunReport {
    /// Report for a (possibly partial) run. `failure` is the error that
    /// stopped it, if any.
    pub fn new(
        model: &Model,
        schedule: &PerturbationSchedule,
        config: &SmcConfig,
        run: &SmcRun,
        threads: usize,
        failure: Option<&Error>,
    ) -> Result<Self> {
        let forecast = match failure {
            None => Some(forecast_summary(model, &run.particles)?),
            Some(_) => None,
        };
        Ok(Self {
            format: REPORT_FORMAT.into(),
            scenario: schedule.label.clone(),
            family: schedule.family,
            config: config.clone(),
            particles: run.particles.len(),
            mesh: schedule.mesh.clone(),
            levels: schedule.levels.clone(),
            records: run.records.clone(),
            forecast,
            diagnostics: DiagnosticsRollup::from_records(&run.records),
            timing: Timing::from_records(&run.records, threads),
            failure: failure.map(FailureInfo::from_error),
        })
    }

    /// The report with every wall-clock quantity and the thread count
    /// cleared; equal inputs and seed give byte-identical payloads.
    pub fn canonical(&self) -> Self {
        let mut out = self.clone();
        for r in &mut out.records {
            r.seconds = 0.0;
        }
        out.timing = Timing::from_records(&out.records, 0);
        out
    }

    pub fn canonical_payload(&self) -> Result<String> {
        self.canonical().to_json()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| Error::Config(format!("cannot encode report: {e}")))
    }

    pub fn from_json(text: &str, file: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Schema {
            file: file.to_string(),
            line: e.inner().line(),
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }
}
