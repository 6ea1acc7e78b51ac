//! Synthetic campaigns drawn from the model's own prior.

use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::model::{logit, Model, ModelSpec, PollMeta, PollObservation, PriorScales};
use crate::rng::{stream, Purpose};
use crate::{Error, Result};

/// One line of a poll plan: `count` polls of size `n` on `day`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub day: usize,
    pub state: Option<usize>,
    pub count: usize,
    pub n: u64,
    /// Fixed metadata; drawn uniformly from the tables when absent.
    #[serde(default)]
    pub meta: Option<PollMeta>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PollPlan {
    pub entries: Vec<PlanEntry>,
}

impl PollPlan {
    pub fn poll_count(&self) -> usize {
        self.entries.iter().map(|e| e.count).sum()
    }
}

/// Ground truth behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub params: Vec<f64>,
    /// `mu[t - 1][s]`.
    pub mu: Vec<Vec<f64>>,
    pub u: Vec<f64>,
    pub sigma_state: f64,
    pub sigma_national: f64,
    /// Success probability of each generated poll.
    pub p: Vec<f64>,
}

/// Draws `Theta` from the prior and `y_i ~ Binomial(n_i, p_i)`.
///
/// The returned truth has one poll-error slot per generated poll.
pub fn generate_synthetic(
    spec: &ModelSpec,
    plan: &PollPlan,
    seed: u64,
) -> Result<(Vec<PollObservation>, TruthRecord)> {
    spec.factorize()?;
    let mut rng = stream(seed, Purpose::Synthetic, 0, 0);
    let mut polls = Vec::with_capacity(plan.poll_count());
    for entry in &plan.entries {
        if entry.n == 0 {
            return Err(Error::Data(format!("plan entry on day {} has n = 0", entry.day)));
        }
        for _ in 0..entry.count {
            let meta = entry.meta.unwrap_or_else(|| PollMeta {
                pollster: rng.random_range(0..spec.n_pollsters),
                mode: rng.random_range(0..spec.n_modes),
                population: rng.random_range(0..spec.n_populations),
            });
            polls.push(PollObservation {
                poll_id: format!("p{:04}", polls.len() + 1),
                day: entry.day,
                state: entry.state,
                y: 0,
                n: entry.n,
                meta,
            });
        }
    }
    let model = Model::new(spec.clone(), polls, plan.poll_count())?;
    let layout = *model.layout();
    let mut params: Vec<f64> = (0..layout.dim()).map(|_| rng.sample(StandardNormal)).collect();
    let sc = &spec.prior_scales;
    let hn = |rng: &mut rand_chacha::ChaCha8Rng, s: f64| -> f64 {
        let x: f64 = rng.sample(StandardNormal);
        (s * x.abs()).max(1e-12).ln()
    };
    params[layout.log_sigma_state()] = hn(&mut rng, sc.sigma_state);
    params[layout.log_sigma_national()] = hn(&mut rng, sc.sigma_national);
    let latent = model.transform(&params)?;
    let mut polls = model.polls().to_vec();
    for (poll, &p) in polls.iter_mut().zip(&latent.p) {
        let draw = Binomial::new(poll.n, p).map_err(|e| Error::eval("binomial", e.to_string()))?;
        poll.y = draw.sample(&mut rng);
    }
    Ok((
        polls,
        TruthRecord {
            params,
            mu: latent.mu,
            u: latent.u,
            sigma_state: latent.sigma_state,
            sigma_national: latent.sigma_national,
            p: latent.p,
        },
    ))
}

/// Five-state, sixty-day specification used by the desk-scale instances.
pub fn desk_spec() -> ModelSpec {
    let states = ["California", "Pennsylvania", "Ohio", "Arkansas", "Utah"];
    let shares = [0.62, 0.51, 0.47, 0.36, 0.33];
    let weights = vec![0.40, 0.22, 0.18, 0.08, 0.12];
    let s = states.len();
    let cov = |sd: f64, rho: f64| -> Vec<Vec<f64>> {
        (0..s)
            .map(|i| {
                (0..s)
                    .map(|j| if i == j { sd * sd } else { rho * sd * sd })
                    .collect()
            })
            .collect()
    };
    ModelSpec {
        states: s,
        days: 60,
        weights,
        fundamentals: shares.iter().map(|p| logit(*p)).collect(),
        terminal_cov: cov(0.15, 0.5),
        walk_cov: cov(0.02, 0.7),
        state_error_cov: cov(0.05, 0.3),
        n_pollsters: 4,
        n_modes: 3,
        n_populations: 3,
        prior_scales: PriorScales {
            house: 0.05,
            mode: 0.03,
            population: 0.03,
            sigma_state: 0.05,
            sigma_national: 0.03,
        },
        state_names: states.iter().map(|s| s.to_string()).collect(),
        pollster_names: ["NBC", "Marist", "YouGov", "Rasmussen"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        mode_names: ["live phone", "online", "IVR"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        population_names: ["registered voters", "likely voters", "adults"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    }
}

/// Last observed day of the desk instance ("today").
pub const DESK_TODAY: usize = 45;

/// A desk-scale campaign: forty baseline polls up to [`DESK_TODAY`] and two
/// later days of arriving polls.
#[derive(Debug, Clone)]
pub struct DeskInstance {
    pub spec: ModelSpec,
    pub baseline: Vec<PollObservation>,
    pub arrivals: Vec<Vec<PollObservation>>,
    pub truth: TruthRecord,
    /// Error slots: baseline polls, arrivals, plus spares for hypothetical
    /// polls.
    pub n_slots: usize,
}

impl DeskInstance {
    pub fn model(&self) -> Result<Model> {
        Model::new(self.spec.clone(), self.baseline.clone(), self.n_slots)
    }
}

pub fn desk_plan() -> PollPlan {
    let mut entries = Vec::new();
    // Uneven coverage: California and Ohio are poll-rich, Arkansas has one.
    let state_days: [(usize, &[usize]); 5] = [
        (0, &[3, 8, 12, 17, 21, 26, 30, 34, 38, 41, 44]),
        (1, &[5, 14, 22, 29, 36, 43]),
        (2, &[4, 10, 16, 20, 25, 31, 35, 40, 45]),
        (3, &[18]),
        (4, &[9, 27, 39]),
    ];
    for (s, days) in state_days {
        for &d in days {
            entries.push(PlanEntry {
                day: d,
                state: Some(s),
                count: 1,
                n: 800,
                meta: None,
            });
        }
    }
    for d in [2, 7, 13, 19, 24, 28, 32, 37, 42, 45] {
        entries.push(PlanEntry {
            day: d,
            state: None,
            count: 1,
            n: 1200,
            meta: None,
        });
    }
    entries.sort_by_key(|e| (e.day, e.state.map_or(usize::MAX, |s| s)));
    // Arriving polls: day 46 and day 47.
    for (d, s) in [(46, Some(0)), (46, Some(1)), (46, None), (47, Some(2)), (47, Some(3)), (47, None)] {
        entries.push(PlanEntry {
            day: d,
            state: s,
            count: 1,
            n: 900,
            meta: None,
        });
    }
    PollPlan { entries }
}

/// Builds the desk instance from the prior with `seed`.
pub fn desk_instance(seed: u64) -> Result<DeskInstance> {
    let spec = desk_spec();
    let (polls, truth) = generate_synthetic(&spec, &desk_plan(), seed)?;
    let n_base = polls.iter().filter(|p| p.day <= DESK_TODAY).count();
    let baseline = polls[..n_base].to_vec();
    let mut arrivals: Vec<Vec<PollObservation>> = Vec::new();
    for p in &polls[n_base..] {
        match arrivals.last_mut() {
            Some(day) if day[0].day == p.day => day.push(p.clone()),
            _ => arrivals.push(vec![p.clone()]),
        }
    }
    let n_slots = polls.len() + 4;
    Ok(DeskInstance {
        spec,
        baseline,
        arrivals,
        truth,
        n_slots,
    })
}
