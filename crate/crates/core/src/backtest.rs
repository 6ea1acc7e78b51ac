//! SMC versus brute-force MCMC.
//!
//! The SMC terminal posterior means are compared coordinate by coordinate
//! with pooled reference chains run directly on the terminal posterior, and
//! the wall time of the SMC walk is set against independent reference refits
//! at every mesh point.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{mean_and_mcse_chains, standardized_difference, weighted_mean_and_mcse};
use crate::hmc::{reference_chains, ReferenceConfig, ReferenceRun};
use crate::io::report::RunReport;
use crate::meta::{CompiledKnob, PerturbationSchedule};
use crate::model::Model;
use crate::smc::{run_schedule, Functional, ParticleSet, SmcConfig};
use crate::{Error, Result};

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub mcse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub left: MeanEstimate,
    pub right: MeanEstimate,
    /// `|left - right| / sqrt(se_left^2 + se_right^2)`.
    pub z: f64,
    pub within: bool,
}

/// Mean-versus-mean table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub left_label: String,
    pub right_label: String,
    pub tolerance: f64,
    pub rows: Vec<ComparisonRow>,
    /// Share of rows with `z <= tolerance`.
    pub within_fraction: f64,
    pub max_z: f64,
}

/// Compares two columns of estimates. Swapping the columns swaps `left`
/// and `right` in every row and changes nothing else.
pub fn compare_columns(
    names: &[String],
    left: (&str, &[MeanEstimate]),
    right: (&str, &[MeanEstimate]),
    tolerance: f64,
) -> Result<ComparisonTable> {
    if names.len() != left.1.len() || names.len() != right.1.len() {
        return Err(Error::Usage("comparison columns differ in length".into()));
    }
    if names.is_empty() {
        return Err(Error::Usage("nothing to compare".into()));
    }
    let rows: Vec<ComparisonRow> = names
        .iter()
        .zip(left.1.iter().zip(right.1))
        .map(|(name, (a, b))| {
            let z = standardized_difference((a.mean, a.mcse), (b.mean, b.mcse));
            ComparisonRow {
                name: name.clone(),
                left: *a,
                right: *b,
                z,
                within: z <= tolerance,
            }
        })
        .collect();
    let within = rows.iter().filter(|r| r.within).count();
    Ok(ComparisonTable {
        left_label: left.0.to_string(),
        right_label: right.0.to_string(),
        tolerance,
        within_fraction: within as f64 / rows.len() as f64,
        max_z: rows.iter().map(|r| r.z).fold(0.0, f64::max),
        rows,
    })
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let (l, r) = (&self.left_label, &self.right_label);
        let mut out = format!("name,{l}_mean,{l}_mcse,{r}_mean,{r}_mcse,z,within\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.name, row.left.mean, row.left.mcse, row.right.mean, row.right.mcse, row.z, row.within
            ));
        }
        out
    }
}

/// Weighted particle means of every coordinate.
pub fn particle_means(set: &ParticleSet) -> Result<Vec<MeanEstimate>> {
    let weights = set.weights()?;
    Ok((0..set.dim())
        .into_par_iter()
        .map(|j| {
            let col: Vec<f64> = set.particles.iter().map(|p| p[j]).collect();
            let (mean, mcse) = weighted_mean_and_mcse(&col, &weights);
            MeanEstimate { mean, mcse }
        })
        .collect())
}

/// Pooled chain means of `f` with multi-chain standard errors.
pub fn chain_means(model: &Model, runs: &[ReferenceRun], functionals: &[Functional]) -> Vec<MeanEstimate> {
    functionals
        .par_iter()
        .map(|f| {
            let chains: Vec<Vec<f64>> = runs
                .iter()
                .map(|r| r.draws.iter().map(|d| f.eval(model, d)).collect())
                .collect();
            let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
            let (mean, mcse) = mean_and_mcse_chains(&refs);
            MeanEstimate { mean, mcse }
        })
        .collect()
}

/// Weighted particle means of `f`.
pub fn particle_functional_means(
    model: &Model,
    set: &ParticleSet,
    functionals: &[Functional],
) -> Result<Vec<MeanEstimate>> {
    let weights = set.weights()?;
    Ok(functionals
        .par_iter()
        .map(|f| {
            let vals: Vec<f64> = set.particles.iter().map(|p| f.eval(model, p)).collect();
            let (mean, mcse) = weighted_mean_and_mcse(&vals, &weights);
            MeanEstimate { mean, mcse }
        })
        .collect())
}

/// Every unconstrained coordinate as a functional.
pub fn coordinates(model: &Model) -> Vec<Functional> {
    (0..model.dim()).map(Functional::Coordinate).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestConfig {
    pub smc: SmcConfig,
    pub reference: ReferenceConfig,
    /// Independent reference chains pooled for the terminal oracle.
    pub oracle_chains: usize,
    /// Pass threshold on the standardized difference.
    pub tolerance: f64,
    /// Time a reference refit at every mesh point.
    pub time_refits: bool,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            smc: SmcConfig::default(),
            reference: ReferenceConfig::default(),
            oracle_chains: 5,
            tolerance: 3.0,
            time_refits: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub step: usize,
    pub level: f64,
    pub rejuvenated: bool,
    pub smc_seconds: f64,
    /// One reference refit at this mesh point.
    pub reference_seconds: Option<f64>,
}

/// Per-step and cumulative cost of SMC against per-mesh-point refits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingTable {
    pub threads: usize,
    pub rows: Vec<TimingRow>,
    pub smc_wall_seconds: f64,
    /// Wall time of all refits, run concurrently on the same pool.
    pub reference_wall_seconds: Option<f64>,
    /// Largest reweight-only step cost as a fraction of the mean refit.
    pub max_reweight_fraction: Option<f64>,
}

impl TimingTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,level,rejuvenated,smc_seconds,smc_cumulative,reference_seconds,reference_cumulative\n");
        let (mut smc_acc, mut ref_acc) = (0.0, 0.0);
        for r in &self.rows {
            smc_acc += r.smc_seconds;
            let refs = r.reference_seconds.map(|s| {
                ref_acc += s;
                (s.to_string(), ref_acc.to_string())
            });
            let (rs, rc) = refs.unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.step, r.level, r.rejuvenated, r.smc_seconds, smc_acc, rs, rc
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub run: RunReport,
    pub comparison: ComparisonTable,
    pub timing: TimingTable,
    /// Reference chain warnings (divergences and the like).
    pub reference_warnings: Vec<String>,
}

/// Reference chains for the step-`l` posterior, seeded from `seed`.
fn oracle_runs(
    model: &Model,
    knob: &CompiledKnob,
    config: &ReferenceConfig,
    chains: usize,
    seed: u64,
) -> Result<Vec<ReferenceRun>> {
    let seeds: Vec<u64> = (0..chains as u64).map(|c| seed.wrapping_mul(1000).wrapping_add(c + 1)).collect();
    reference_chains(model, knob, config, &seeds)
}

/// Runs SMC from `baseline` along `schedule` and checks it against
/// brute-force MCMC.
pub fn backtest_compare(
    model: &Model,
    baseline: ParticleSet,
    schedule: &PerturbationSchedule,
    config: &BacktestConfig,
) -> Result<BacktestReport> {
    if config.oracle_chains < 2 {
        return Err(Error::Usage("the oracle needs at least two chains".into()));
    }
    let compiled = schedule.compile(model)?;
    let threads = rayon::current_num_threads();
    let started = Instant::now();
    let run = run_schedule(model, schedule, baseline, &config.smc, &[], &mut |_| {}).map_err(|f| f.error)?;
    let smc_wall_seconds = started.elapsed().as_secs_f64();
    let report = RunReport::new(model, schedule, &config.smc, &run, threads, None)?;

    let terminal = compiled.knob(compiled.steps());
    let oracle = oracle_runs(model, terminal, &config.reference, config.oracle_chains, config.smc.seed)?;
    let functionals = coordinates(model);
    let names: Vec<String> = (0..model.dim()).map(|j| model.layout().coordinate_name(j)).collect();
    let comparison = compare_columns(
        &names,
        ("smc", &particle_means(&run.particles)?),
        ("mcmc", &chain_means(model, &oracle, &functionals)),
        config.tolerance,
    )?;
    let mut reference_warnings: Vec<String> = oracle
        .iter()
        .filter_map(|r| r.warning.clone())
        .map(|w| format!("terminal oracle: {w}"))
        .collect();

    let (refits, reference_wall_seconds) = if config.time_refits {
        let started = Instant::now();
        let refits = (1..=compiled.steps())
            .into_par_iter()
            .map(|l| {
                let seed = config.smc.seed.wrapping_mul(1000).wrapping_add(500 + l as u64);
                reference_chains(model, compiled.knob(l), &config.reference, &[seed]).map(|mut v| v.remove(0))
            })
            .collect::<Result<Vec<_>>>()?;
        (Some(refits), Some(started.elapsed().as_secs_f64()))
    } else {
        (None, None)
    };
    if let Some(refits) = &refits {
        for (l, r) in refits.iter().enumerate() {
            if let Some(w) = &r.warning {
                reference_warnings.push(format!("refit at step {}: {w}", l + 1));
            }
        }
    }
    let rows: Vec<TimingRow> = run
        .records
        .iter()
        .map(|r| TimingRow {
            step: r.step,
            level: r.level,
            rejuvenated: r.rejuvenated,
            smc_seconds: r.seconds,
            reference_seconds: refits.as_ref().map(|v| v[r.step - 1].seconds),
        })
        .collect();
    let max_reweight_fraction = refits.as_ref().and_then(|v| {
        let mean_refit = v.iter().map(|r| r.seconds).sum::<f64>() / v.len() as f64;
        rows.iter()
            .filter(|r| !r.rejuvenated)
            .map(|r| r.smc_seconds / mean_refit)
            .reduce(f64::max)
    });
    Ok(BacktestReport {
        run: report,
        comparison,
        timing: TimingTable {
            threads,
            rows,
            smc_wall_seconds,
            reference_wall_seconds,
            max_reweight_fraction,
        },
        reference_warnings,
    })
}
