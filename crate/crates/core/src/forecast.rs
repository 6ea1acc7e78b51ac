//! Forecast summaries and scenario comparison tables.
//!
//! Trajectories are summarized on the vote-share scale: the weighted mean of
//! `sigmoid(mu)` and the weighted 5% / 95% quantiles of `mu` mapped through
//! `sigmoid`. National series aggregate `sum_s w_s mu_(t,s)` on the logit
//! scale before the transform. State errors `u` are not part of forecasts.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::meta::{PerturbationSchedule, ScheduleFamily};
use crate::model::{sigmoid, Model};
use crate::smc::{Functional, ParticleSet, StepRecord};
use crate::{Error, Result};

pub const LOWER_QUANTILE: f64 = 0.05;
pub const UPPER_QUANTILE: f64 = 0.95;

/// Left-continuous inverse of the weighted empirical CDF: the smallest value
/// whose cumulative weight reaches `q`. Weights need not be normalized.
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() || values.len() != weights.len() {
        return Err(Error::Usage("quantile needs matching nonempty inputs".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Usage(format!("quantile level {q} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..values.len()).filter(|&i| weights[i] > 0.0).collect();
    if order.is_empty() {
        return Err(Error::DegenerateWeights {
            step: 0,
            message: "all weights are zero".into(),
        });
    }
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = order.iter().map(|&i| weights[i]).sum();
    let target = q * total;
    let mut cum = 0.0;
    for &i in &order {
        cum += weights[i];
        if cum >= target {
            return Ok(values[i]);
        }
    }
    Ok(values[*order.last().unwrap()])
}

/// Per-day mean and 90% band on the vote-share scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub label: String,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SeriesSummary {
    /// Election-day posterior mean.
    pub fn final_score(&self) -> f64 {
        *self.mean.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSummary {
    pub states: Vec<SeriesSummary>,
    pub national: SeriesSummary,
    /// Election-day posterior mean per state.
    pub final_score: Vec<f64>,
    pub national_final: f64,
    /// `sigmoid(f_s)`.
    pub prior_forecast: Vec<f64>,
}

/// Summarizes a logit-scale series given as `series[r][t]`.
fn summarize(label: String, series: &[Vec<f64>], weights: &[f64]) -> Result<SeriesSummary> {
    let days = series[0].len();
    let mut out = SeriesSummary {
        label,
        mean: Vec::with_capacity(days),
        lower: Vec::with_capacity(days),
        upper: Vec::with_capacity(days),
    };
    let mut column = vec![0.0; series.len()];
    for t in 0..days {
        for (c, s) in column.iter_mut().zip(series) {
            *c = s[t];
        }
        out.mean
            .push(column.iter().zip(weights).map(|(v, w)| w * sigmoid(*v)).sum());
        out.lower
            .push(sigmoid(weighted_quantile(&column, weights, LOWER_QUANTILE)?));
        out.upper
            .push(sigmoid(weighted_quantile(&column, weights, UPPER_QUANTILE)?));
    }
    Ok(out)
}

/// `mu` trajectories of every particle, `[r][(t - 1) * S + s]`.
fn trajectories(model: &Model, set: &ParticleSet) -> Result<Vec<Vec<f64>>> {
    if set.dim() != model.dim() {
        return Err(Error::Config(format!(
            "particles must have dimension {}",
            model.dim()
        )));
    }
    Ok(set
        .particles
        .par_iter()
        .map(|p| model.mu_trajectory(p))
        .collect())
}

fn state_series(model: &Model, mu: &[Vec<f64>], s: usize) -> Vec<Vec<f64>> {
    let l = model.layout();
    mu.iter()
        .map(|m| (0..l.days).map(|t| m[t * l.states + s]).collect())
        .collect()
}

fn national_series(model: &Model, mu: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let l = model.layout();
    let w = &model.spec().weights;
    mu.iter()
        .map(|m| {
            (0..l.days)
                .map(|t| {
                    m[t * l.states..(t + 1) * l.states]
                        .iter()
                        .zip(w)
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect()
        })
        .collect()
}

pub fn state_summary(model: &Model, set: &ParticleSet, s: usize) -> Result<SeriesSummary> {
    if s >= model.layout().states {
        return Err(Error::Usage(format!("state index {s} out of range")));
    }
    let mu = trajectories(model, set)?;
    summarize(model.spec().state_label(s), &state_series(model, &mu, s), &set.weights()?)
}

pub fn national_summary(model: &Model, set: &ParticleSet) -> Result<SeriesSummary> {
    let mu = trajectories(model, set)?;
    summarize("national".into(), &national_series(model, &mu), &set.weights()?)
}

/// Every state and the national series.
pub fn forecast_summary(model: &Model, set: &ParticleSet) -> Result<ForecastSummary> {
    let weights = set.weights()?;
    let mu = trajectories(model, set)?;
    let states = (0..model.layout().states)
        .map(|s| summarize(model.spec().state_label(s), &state_series(model, &mu, s), &weights))
        .collect::<Result<Vec<_>>>()?;
    let national = summarize("national".into(), &national_series(model, &mu), &weights)?;
    Ok(ForecastSummary {
        final_score: states.iter().map(SeriesSummary::final_score).collect(),
        national_final: national.final_score(),
        prior_forecast: model.spec().fundamentals.iter().map(|f| sigmoid(*f)).collect(),
        states,
        national,
    })
}

/// Election-day means at one perturbation level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub step: usize,
    pub level: f64,
    pub final_score: Vec<f64>,
    pub national_final: f64,
}

impl LevelSummary {
    pub fn from_forecast(step: usize, level: f64, f: &ForecastSummary) -> Self {
        Self {
            step,
            level,
            final_score: f.final_score.clone(),
            national_final: f.national_final,
        }
    }

    /// Reads the default election-day estimates out of a step record.
    pub fn from_record(model: &Model, record: &StepRecord) -> Result<Self> {
        let l = model.layout();
        let find = |f: Functional| {
            record
                .estimates
                .iter()
                .find(|e| e.name == f)
                .map(|e| e.mean)
                .ok_or_else(|| {
                    Error::Usage(format!("step {} has no estimate of `{f}`", record.step))
                })
        };
        Ok(Self {
            step: record.step,
            level: record.level,
            final_score: (0..l.states)
                .map(|state| find(Functional::Share { day: l.days, state }))
                .collect::<Result<_>>()?,
            national_final: find(Functional::NationalShare { day: l.days })?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    /// Absent for the national row.
    pub prior_forecast: Option<f64>,
    pub baseline: f64,
    /// One entry per column of [`ScenarioReport::columns`].
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportColumn {
    pub step: usize,
    /// Family parameter at this step (scale factor, shift, power, ...).
    pub level: f64,
}

/// Election-day means per state at each perturbation level. Columns run
/// from the smallest family parameter to the largest, which for scale
/// families reads from tighter to looser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub label: String,
    pub family: ScheduleFamily,
    pub columns: Vec<ReportColumn>,
    pub rows: Vec<ReportRow>,
}

pub fn scenario_report(
    baseline: &ForecastSummary,
    levels: &[LevelSummary],
    schedule: &PerturbationSchedule,
) -> Result<ScenarioReport> {
    let s = baseline.states.len();
    if let Some(bad) = levels.iter().find(|l| l.final_score.len() != s) {
        return Err(Error::Usage(format!(
            "level at step {} has {} states, baseline has {s}",
            bad.step,
            bad.final_score.len()
        )));
    }
    if let Some(bad) = levels.iter().find(|l| l.step > schedule.steps()) {
        return Err(Error::Usage(format!(
            "step {} is beyond the schedule's {} steps",
            bad.step,
            schedule.steps()
        )));
    }
    let param = |l: &LevelSummary| schedule.levels.get(l.step).copied().unwrap_or(l.level);
    let mut order: Vec<usize> = (0..levels.len()).collect();
    order.sort_by(|&a, &b| {
        param(&levels[a])
            .total_cmp(&param(&levels[b]))
            .then(levels[a].step.cmp(&levels[b].step))
    });
    let columns = order
        .iter()
        .map(|&i| ReportColumn {
            step: levels[i].step,
            level: param(&levels[i]),
        })
        .collect();
    let mut rows: Vec<ReportRow> = baseline
        .states
        .iter()
        .enumerate()
        .map(|(k, series)| ReportRow {
            label: series.label.clone(),
            prior_forecast: Some(baseline.prior_forecast[k]),
            baseline: baseline.final_score[k],
            values: order.iter().map(|&i| levels[i].final_score[k]).collect(),
        })
        .collect();
    rows.push(ReportRow {
        label: "national".into(),
        prior_forecast: None,
        baseline: baseline.national_final,
        values: order.iter().map(|&i| levels[i].national_final).collect(),
    });
    Ok(ScenarioReport {
        label: schedule.label.clone(),
        family: schedule.family,
        columns,
        rows,
    })
}

impl ScenarioReport {
    /// Plain-text table with one row per state.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} ({:?})", self.label, self.family);
        let _ = write!(out, "{:<16} {:>8} {:>8}", "state", "prior", "baseline");
        for c in &self.columns {
            let _ = write!(out, " {:>8}", format!("{:.3}", c.level));
        }
        out.push('\n');
        for row in &self.rows {
            let prior = row
                .prior_forecast
                .map_or_else(|| "-".to_string(), |p| format!("{p:.4}"));
            let _ = write!(out, "{:<16} {:>8} {:>8.4}", row.label, prior, row.baseline);
            for v in &row.values {
                let _ = write!(out, " {v:>8.4}");
            }
            out.push('\n');
        }
        out
    }
}
