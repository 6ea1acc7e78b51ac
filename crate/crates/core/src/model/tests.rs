use nalgebra::{DMatrix, DVector};

use super::*;
use crate::meta::{CompiledKnob, HypotheticalPoll, Knob, LikelihoodOverride, PriorComponent, PriorOverride};
use crate::testutil::{random_point, small_model, small_spec};

fn mat(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows.len(), |i, j| rows[i][j])
}

fn mvn_logpdf(x: &DVector<f64>, m: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = x.len() as f64;
    let inv = cov.clone().try_inverse().unwrap();
    let r = x - m;
    let q = (r.transpose() * inv * &r)[(0, 0)];
    -0.5 * q - 0.5 * cov.determinant().ln() - 0.5 * d * (2.0 * std::f64::consts::PI).ln()
}

fn normal_logpdf(x: f64, sd: f64) -> f64 {
    -0.5 * (x / sd).powi(2) - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

fn ln_choose(n: u64, y: u64) -> f64 {
    let ln_fact = |k: u64| (1..=k).map(|i| (i as f64).ln()).sum::<f64>();
    ln_fact(n) - ln_fact(y) - ln_fact(n - y)
}

/// Centered quantities computed directly from the matrices.
struct Centered {
    mu: Vec<DVector<f64>>,
    u: DVector<f64>,
    house: Vec<f64>,
    mode: Vec<f64>,
    population: Vec<f64>,
    sigma: (f64, f64),
}

fn centered(model: &Model, z: &[f64]) -> Centered {
    let spec = model.spec();
    let l = model.layout();
    let s = spec.states;
    let lc = mat(&spec.terminal_cov).cholesky().unwrap().l();
    let lm = mat(&spec.walk_cov).cholesky().unwrap().l();
    let lu = mat(&spec.state_error_cov).cholesky().unwrap().l();
    let f = DVector::from_vec(spec.fundamentals.clone());
    let mut mu = vec![DVector::zeros(s); spec.days];
    mu[spec.days - 1] = &f + &lc * DVector::from_column_slice(&z[l.terminal()]);
    for t in (1..spec.days).rev() {
        mu[t - 1] = &mu[t] + &lm * DVector::from_column_slice(&z[l.walk_day(t)]);
    }
    let sc = &spec.prior_scales;
    Centered {
        mu,
        u: &lu * DVector::from_column_slice(&z[l.state_error()]),
        house: z[l.house()].iter().map(|v| v * sc.house).collect(),
        mode: z[l.mode()].iter().map(|v| v * sc.mode).collect(),
        population: z[l.population()].iter().map(|v| v * sc.population).collect(),
        sigma: (z[l.log_sigma_state()].exp(), z[l.log_sigma_national()].exp()),
    }
}

fn oracle_p(model: &Model, z: &[f64]) -> Vec<f64> {
    let c = centered(model, z);
    let eps = &z[model.layout().eps()];
    model
        .polls()
        .iter()
        .enumerate()
        .map(|(i, poll)| {
            let mu = &c.mu[poll.day - 1];
            let (base, sigma) = match poll.state {
                Some(s) => (mu[s] + c.u[s], c.sigma.0),
                None => {
                    let w = &model.spec().weights;
                    ((0..w.len()).map(|k| w[k] * (mu[k] + c.u[k])).sum(), c.sigma.1)
                }
            };
            let eta = base
                + c.house[poll.meta.pollster]
                + c.mode[poll.meta.mode]
                + c.population[poll.meta.population]
                + sigma * eps[i];
            1.0 / (1.0 + (-eta).exp())
        })
        .collect()
}

/// Centered prior density plus the log-Jacobian of the non-centering map.
fn oracle_log_prior(model: &Model, z: &[f64]) -> f64 {
    let spec = model.spec();
    let l = model.layout();
    let c = centered(model, z);
    let cm = mat(&spec.terminal_cov);
    let wm = mat(&spec.walk_cov);
    let um = mat(&spec.state_error_cov);
    let f = DVector::from_vec(spec.fundamentals.clone());
    let mut lp = mvn_logpdf(&c.mu[spec.days - 1], &f, &cm) + 0.5 * cm.determinant().ln();
    for t in 1..spec.days {
        lp += mvn_logpdf(&c.mu[t - 1], &c.mu[t], &wm) + 0.5 * wm.determinant().ln();
    }
    lp += mvn_logpdf(&c.u, &DVector::zeros(spec.states), &um) + 0.5 * um.determinant().ln();
    let sc = &spec.prior_scales;
    for (vals, sd) in [(&c.house, sc.house), (&c.mode, sc.mode), (&c.population, sc.population)] {
        for v in vals {
            lp += normal_logpdf(*v, sd) + sd.ln();
        }
    }
    for (sigma, sd) in [(c.sigma.0, sc.sigma_state), (c.sigma.1, sc.sigma_national)] {
        lp += 2f64.ln() + normal_logpdf(sigma, sd) + sigma.ln();
    }
    for e in &z[l.eps()] {
        lp += normal_logpdf(*e, 1.0);
    }
    lp
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn zero_innovations_propagate_the_anchor() {
    let model = small_model(1);
    let latent = model.transform(&vec![0.0; model.dim()]).unwrap();
    for row in &latent.mu {
        assert_eq!(row, &model.spec().fundamentals);
    }
    assert!(latent.u.iter().all(|v| *v == 0.0));
}

fn one_state_model(polls: Vec<PollObservation>) -> Model {
    let mut spec = small_spec(1, 1, 3);
    spec.weights = vec![1.0];
    spec.fundamentals = vec![0.0];
    let n = polls.len();
    Model::new(spec, polls, n).unwrap()
}

fn national(y: u64, n: u64) -> PollObservation {
    PollObservation {
        poll_id: "a".into(),
        day: 1,
        state: None,
        y,
        n,
        meta: PollMeta {
            pollster: 0,
            mode: 0,
            population: 0,
        },
    }
}

#[test]
fn logit_zero_gives_one_half() {
    let model = one_state_model(vec![national(1, 2)]);
    let z = vec![0.0; model.dim()];
    assert_eq!(model.transform(&z).unwrap().p, vec![0.5]);
    let ll = model.log_likelihood(&z, None).unwrap();
    assert!((ll - 0.5f64.ln()).abs() < 1e-14);
    assert_eq!(model.log_likelihood(&z, Some(&[0.0])).unwrap(), 0.0);
}

#[test]
fn prior_at_origin_is_standard_normal_mass() {
    let mut spec = small_spec(1, 1, 3);
    spec.weights = vec![1.0];
    spec.prior_scales = PriorScales {
        house: 1.0,
        mode: 1.0,
        population: 1.0,
        sigma_state: 1.0,
        sigma_national: 1.0,
    };
    let model = Model::new(spec, Vec::new(), 0).unwrap();
    let d = model.dim() - 2;
    let half_normal_at_one = 2f64.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5;
    let expected = -(d as f64) / 2.0 * (2.0 * std::f64::consts::PI).ln() + 2.0 * half_normal_at_one;
    let z = vec![0.0; model.dim()];
    assert!((model.log_prior(&z).unwrap() - expected).abs() < 1e-12);
    let mut z1 = z.clone();
    z1[0] = 0.7;
    let diff = model.log_prior(&z1).unwrap() - model.log_prior(&z).unwrap();
    assert!((diff + 0.49 / 2.0).abs() < 1e-12);
}

#[test]
fn transform_matches_centered_oracle() {
    for seed in 0..10 {
        let model = small_model(seed);
        let z = random_point(&model, seed, 1.0);
        let p = model.transform(&z).unwrap().p;
        for (a, b) in p.iter().zip(oracle_p(&model, &z)) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn log_prior_matches_centered_density_oracle() {
    for seed in 0..10 {
        let model = small_model(seed);
        let z = random_point(&model, seed + 100, 1.0);
        let a = model.log_prior(&z).unwrap();
        let b = oracle_log_prior(&model, &z);
        assert!(close(a, b, 1e-10), "{a} vs {b}");
    }
}

#[test]
fn log_likelihood_matches_direct_summation() {
    let spec = small_spec(3, 6, 9);
    let polls = crate::testutil::random_polls(&spec, 20, 9);
    let model = Model::new(spec, polls, 20).unwrap();
    let z = random_point(&model, 4, 0.8);
    let p = oracle_p(&model, &z);
    let expected: f64 = model
        .polls()
        .iter()
        .zip(&p)
        .map(|(poll, p)| {
            ln_choose(poll.n, poll.y) + poll.y as f64 * p.ln() + (poll.n - poll.y) as f64 * (1.0 - p).ln()
        })
        .sum();
    let got = model.log_likelihood(&z, None).unwrap();
    assert!(close(got, expected, 1e-10), "{got} vs {expected}");
}

#[test]
fn identity_knob_is_prior_plus_likelihood_exactly() {
    let model = small_model(5);
    let id = Knob::identity().compile(&model).unwrap();
    for seed in 0..5 {
        let z = random_point(&model, seed, 1.0);
        let lp = model.log_posterior(&z, &id).unwrap();
        let sum = model.log_prior(&z).unwrap() + model.log_likelihood(&z, None).unwrap();
        assert_eq!(lp, sum);
        assert_eq!(model.log_h(&z, &id).unwrap(), 0.0);
    }
}

fn knob_zoo(model: &Model) -> Vec<Knob> {
    let s = model.spec().states;
    let slot = model.first_free_slot();
    let mut out = vec![Knob::identity()];
    let mut k = Knob::identity();
    let mut shift = vec![0.0; s];
    shift[1] = 0.3;
    k.prior_overrides.insert(
        PriorComponent::Terminal,
        PriorOverride {
            location_shift: Some(shift),
            ..Default::default()
        },
    );
    out.push(k);
    for c in [PriorComponent::Terminal, PriorComponent::Walk, PriorComponent::SigmaState] {
        let mut k = Knob::identity();
        k.prior_overrides.insert(
            c,
            PriorOverride {
                scale: 1.3,
                power: 0.7,
                ..Default::default()
            },
        );
        out.push(k);
    }
    let mut k = Knob::identity();
    k.likelihood_overrides.insert(
        "q2".into(),
        LikelihoodOverride {
            y: Some(model.polls()[2].y as f64 + 7.5),
            meta: Some(PollMeta {
                pollster: 2,
                mode: 1,
                population: 0,
            }),
            power: 0.4,
        },
    );
    out.push(k);
    let mut k = Knob::identity();
    k.hypothetical.push(HypotheticalPoll {
        slot,
        poll_id: "h".into(),
        day: 2,
        state: Some(0),
        y: 120.0,
        n: 250.0,
        meta: PollMeta {
            pollster: 1,
            mode: 0,
            population: 1,
        },
        power: 0.6,
    });
    k.hypothetical.push(HypotheticalPoll {
        slot: slot + 1,
        poll_id: "hn".into(),
        day: 5,
        state: None,
        y: 300.0,
        n: 610.0,
        meta: PollMeta {
            pollster: 0,
            mode: 1,
            population: 1,
        },
        power: 1.0,
    });
    out.push(k);
    out
}

fn check_gradient(model: &Model, knob: &CompiledKnob, z: &[f64]) {
    let mut g = vec![0.0; model.dim()];
    model.log_posterior_grad(z, knob, &mut g).unwrap();
    let h = 1e-5;
    let mut zp = z.to_vec();
    for j in 0..z.len() {
        zp[j] = z[j] + h;
        let up = model.log_posterior(&zp, knob).unwrap();
        zp[j] = z[j] - h;
        let down = model.log_posterior(&zp, knob).unwrap();
        zp[j] = z[j];
        let fd = (up - down) / (2.0 * h);
        assert!(
            (g[j] - fd).abs() <= 1e-5 * fd.abs().max(1.0),
            "coordinate {}: analytic {} vs fd {}",
            model.layout().coordinate_name(j),
            g[j],
            fd
        );
    }
}

#[test]
fn gradient_matches_finite_differences_under_every_knob() {
    let model = small_model(7);
    for (k, knob) in knob_zoo(&model).iter().enumerate() {
        let compiled = knob.compile(&model).unwrap();
        for seed in 0..4 {
            check_gradient(&model, &compiled, &random_point(&model, 40 + seed + 10 * k as u64, 0.7));
        }
    }
}

#[test]
fn log_h_is_the_difference_of_full_evaluations() {
    let model = small_model(8);
    let id = CompiledKnob::identity(&model);
    for knob in knob_zoo(&model) {
        let compiled = knob.compile(&model).unwrap();
        for seed in 0..5 {
            let z = random_point(&model, seed, 1.0);
            let direct = model.log_posterior(&z, &compiled).unwrap() - model.log_posterior(&z, &id).unwrap();
            let sparse = model.log_h(&z, &compiled).unwrap();
            assert!(close(sparse, direct, 1e-10), "{knob:?}: {sparse} vs {direct}");
        }
    }
}

#[test]
fn hypothetical_poll_adds_its_log_pmf() {
    let model = small_model(2);
    let z = random_point(&model, 3, 0.5);
    let slot = model.first_free_slot();
    let mut knob = Knob::identity();
    knob.hypothetical.push(HypotheticalPoll {
        slot,
        poll_id: "h".into(),
        day: 3,
        state: Some(1),
        y: 40.0,
        n: 90.0,
        meta: PollMeta {
            pollster: 0,
            mode: 0,
            population: 0,
        },
        power: 1.0,
    });
    let compiled = knob.compile(&model).unwrap();
    let c = centered(&model, &z);
    let sigma = c.sigma.0;
    let eta = c.mu[2][1] + c.u[1] + c.house[0] + c.mode[0] + c.population[0] + sigma * z[model.layout().eps().start + slot];
    let p = 1.0 / (1.0 + (-eta).exp());
    let pmf = ln_choose(90, 40) + 40.0 * p.ln() + 50.0 * (1.0 - p).ln();
    let base = model.log_posterior(&z, &CompiledKnob::identity(&model)).unwrap();
    let with = model.log_posterior(&z, &compiled).unwrap();
    assert!(close(with - base, pmf, 1e-10));
    assert!(close(model.log_h(&z, &compiled).unwrap(), pmf, 1e-10));
}

#[test]
fn location_shift_is_a_difference_of_mvn_densities() {
    let model = small_model(4);
    let s = 2;
    let a = -0.35;
    let mut shift = vec![0.0; 3];
    shift[s] = a;
    let mut knob = Knob::identity();
    knob.prior_overrides.insert(
        PriorComponent::Terminal,
        PriorOverride {
            location_shift: Some(shift),
            ..Default::default()
        },
    );
    let compiled = knob.compile(&model).unwrap();
    let cm = mat(&model.spec().terminal_cov);
    let f = DVector::from_vec(model.spec().fundamentals.clone());
    let mut fs = f.clone();
    fs[s] += a;
    for seed in 0..5 {
        let z = random_point(&model, seed, 1.0);
        let mu_t = &centered(&model, &z).mu[model.spec().days - 1];
        let expected = mvn_logpdf(mu_t, &fs, &cm) - mvn_logpdf(mu_t, &f, &cm);
        assert!(close(model.log_h(&z, &compiled).unwrap(), expected, 1e-10));
    }
}

#[test]
fn gradient_of_powered_likelihood_is_linear_in_power() {
    let model = small_model(6);
    let z = random_point(&model, 1, 0.6);
    let grad_at = |gamma: f64| {
        let mut k = Knob::identity();
        k.likelihood_overrides.insert(
            "q3".into(),
            LikelihoodOverride {
                power: gamma,
                ..Default::default()
            },
        );
        let mut g = vec![0.0; model.dim()];
        model
            .log_posterior_grad(&z, &k.compile(&model).unwrap(), &mut g)
            .unwrap();
        g
    };
    let (g0, g1, g2) = (grad_at(0.0), grad_at(1.0), grad_at(2.5));
    for j in 0..model.dim() {
        let term = g1[j] - g0[j];
        assert!((g2[j] - g0[j] - 2.5 * term).abs() < 1e-9 * (1.0 + term.abs()));
    }
}

#[test]
fn prior_mode_has_zero_gradient_on_standardized_blocks() {
    let mut spec = small_spec(2, 3, 1);
    spec.prior_scales.sigma_state = 1.0;
    spec.prior_scales.sigma_national = 1.0;
    let model = Model::new(spec, Vec::new(), 0).unwrap();
    let mut g = vec![0.0; model.dim()];
    model
        .log_posterior_grad(&vec![0.0; model.dim()], &CompiledKnob::identity(&model), &mut g)
        .unwrap();
    let l = model.layout();
    for (j, v) in g.iter().enumerate() {
        if j != l.log_sigma_state() && j != l.log_sigma_national() {
            assert_eq!(*v, 0.0);
        }
    }
}

#[test]
fn walk_increments_are_cholesky_images() {
    let model = small_model(3);
    let z = random_point(&model, 9, 1.0);
    let mu = model.mu_trajectory(&z);
    let s = model.spec().states;
    let l = model.layout();
    for t in 1..model.spec().days {
        let mut step = vec![0.0; s];
        model.factors().walk.mul(&z[l.walk_day(t)], &mut step);
        for k in 0..s {
            let diff = mu[(t - 1) * s + k] - mu[t * s + k];
            assert!((diff - step[k]).abs() <= 1e-12);
        }
        let mut day = vec![0.0; s];
        model.mu_at(&z, t, &mut day);
        for k in 0..s {
            assert!((day[k] - mu[(t - 1) * s + k]).abs() <= 1e-12);
        }
    }
}

#[test]
fn evaluation_is_pure() {
    let model = small_model(10);
    let knob = knob_zoo(&model).pop().unwrap().compile(&model).unwrap();
    let z = random_point(&model, 2, 1.0);
    let mut g1 = vec![0.0; model.dim()];
    let mut g2 = vec![0.0; model.dim()];
    let a = model.log_posterior_grad(&z, &knob, &mut g1).unwrap();
    let b = model.log_posterior_grad(&z, &knob, &mut g2).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(g1, g2);
}

#[test]
fn invalid_inputs_are_rejected() {
    let model = small_model(11);
    assert!(matches!(model.transform(&[0.0; 3]), Err(Error::Config(_))));
    let mut z = vec![0.0; model.dim()];
    z[0] = f64::NAN;
    assert!(matches!(model.log_prior(&z), Err(Error::Evaluation { .. })));
    let mut spec = small_spec(2, 3, 1);
    spec.weights = vec![0.5, 0.6];
    assert!(matches!(Model::new(spec, Vec::new(), 0), Err(Error::Config(_))));
    let spec = small_spec(2, 3, 1);
    let mut bad = national(5, 4);
    assert!(matches!(Model::new(spec.clone(), vec![bad.clone()], 1), Err(Error::Data(_))));
    bad.y = 2;
    bad.day = 4;
    assert!(matches!(Model::new(spec, vec![bad], 1), Err(Error::Data(_))));
}
