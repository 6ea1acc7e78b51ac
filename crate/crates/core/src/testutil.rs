//! Fixtures shared by unit tests.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{Model, ModelSpec, PollMeta, PollObservation, PriorScales};
use crate::rng::{stream, Purpose};

pub(crate) fn spd(s: usize, sd: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let a: Vec<Vec<f64>> = (0..s)
        .map(|_| (0..s).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    (0..s)
        .map(|i| {
            (0..s)
                .map(|j| {
                    let dot: f64 = (0..s).map(|k| a[i][k] * a[j][k]).sum();
                    sd * sd * (dot / s as f64 + if i == j { 0.5 } else { 0.0 })
                })
                .collect()
        })
        .collect()
}

/// A small spec with dense random covariances.
pub(crate) fn small_spec(s: usize, t: usize, seed: u64) -> ModelSpec {
    let mut rng = stream(seed, Purpose::Test, 0, 0);
    let raw: Vec<f64> = (0..s).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let head: f64 = weights[..s - 1].iter().sum();
    weights[s - 1] = 1.0 - head;
    ModelSpec {
        states: s,
        days: t,
        weights,
        fundamentals: (0..s).map(|_| rng.random_range(-0.6..0.6)).collect(),
        terminal_cov: spd(s, 0.2, &mut rng),
        walk_cov: spd(s, 0.05, &mut rng),
        state_error_cov: spd(s, 0.07, &mut rng),
        n_pollsters: 3,
        n_modes: 2,
        n_populations: 2,
        prior_scales: PriorScales {
            house: 0.1,
            mode: 0.05,
            population: 0.07,
            sigma_state: 0.1,
            sigma_national: 0.08,
        },
        state_names: Vec::new(),
        pollster_names: Vec::new(),
        mode_names: Vec::new(),
        population_names: Vec::new(),
    }
}

pub(crate) fn random_polls(spec: &ModelSpec, count: usize, seed: u64) -> Vec<PollObservation> {
    let mut rng = stream(seed, Purpose::Test, 1, 0);
    (0..count)
        .map(|i| {
            let n = rng.random_range(50..2000u64);
            PollObservation {
                poll_id: format!("q{i}"),
                day: rng.random_range(1..=spec.days),
                state: if rng.random_bool(0.3) {
                    None
                } else {
                    Some(rng.random_range(0..spec.states))
                },
                y: rng.random_range((n / 3)..=(2 * n / 3)),
                n,
                meta: PollMeta {
                    pollster: rng.random_range(0..spec.n_pollsters),
                    mode: rng.random_range(0..spec.n_modes),
                    population: rng.random_range(0..spec.n_populations),
                },
            }
        })
        .collect()
}

/// A 3-state, 6-day model with 12 polls and 3 spare slots.
pub(crate) fn small_model(seed: u64) -> Model {
    let spec = small_spec(3, 6, seed);
    let polls = random_polls(&spec, 12, seed);
    Model::new(spec, polls, 15).unwrap()
}

pub(crate) fn random_point(model: &Model, seed: u64, sd: f64) -> Vec<f64> {
    let mut rng = stream(seed, Purpose::Test, 2, 0);
    (0..model.dim())
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Equally weighted Gaussian draws around the origin.
pub(crate) fn cloud(model: &Model, r: usize, sd: f64, seed: u64) -> crate::smc::ParticleSet {
    let draws = (0..r)
        .map(|i| random_point(model, seed * 10_000 + i as u64, sd))
        .collect();
    crate::smc::ParticleSet::from_draws(draws).unwrap()
}
