//! Effective sample sizes and Monte Carlo standard errors.

/// Autocovariance of `x` at `lag`, normalized by `n`.
fn autocov(x: &[f64], mean: f64, lag: usize) -> f64 {
    let n = x.len();
    x[..n - lag]
        .iter()
        .zip(&x[lag..])
        .map(|(a, b)| (a - mean) * (b - mean))
        .sum::<f64>()
        / n as f64
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence
/// over the combined autocorrelation estimate. Chains must share a length.
pub fn ess_chains(chains: &[&[f64]]) -> f64 {
    let m = chains.len();
    if m == 0 {
        return 0.0;
    }
    let n = chains[0].len();
    assert!(chains.iter().all(|c| c.len() == n), "chains differ in length");
    if n < 4 {
        return (m * n) as f64;
    }
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let acov0: Vec<f64> = chains.iter().zip(&means).map(|(c, mu)| autocov(c, *mu, 0)).collect();
    let nf = n as f64;
    let mean_var = acov0.iter().map(|a| a * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        let grand = means.iter().sum::<f64>() / m as f64;
        var_plus += means.iter().map(|v| (v - grand).powi(2)).sum::<f64>() / (m as f64 - 1.0);
    }
    // Zero or NaN variance: the chain carries no spread to correct.
    if var_plus.is_nan() || var_plus <= 0.0 {
        return (m * n) as f64;
    }
    let rho = |t: usize| -> f64 {
        let acov_t = chains
            .iter()
            .zip(&means)
            .map(|(c, mu)| autocov(c, *mu, t))
            .sum::<f64>()
            / m as f64;
        1.0 - (mean_var - acov_t) / var_plus
    };
    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[1] = odd;
    let mut s = 1;
    while s < n - 4 && even + odd > 0.0 {
        even = rho(s + 1);
        odd = rho(s + 2);
        if even + odd >= 0.0 {
            rho_hat[s + 1] = even;
            rho_hat[s + 2] = odd;
        }
        s += 2;
    }
    let max_s = s;
    if even > 0.0 {
        rho_hat[max_s + 1] = even;
    }
    // Initial monotone sequence.
    let mut k = 1;
    while k + 3 <= max_s {
        let prev = rho_hat[k - 1] + rho_hat[k];
        if rho_hat[k + 1] + rho_hat[k + 2] > prev {
            rho_hat[k + 1] = prev / 2.0;
            rho_hat[k + 2] = prev / 2.0;
        }
        k += 2;
    }
    let total = (m * n) as f64;
    let tau = (-1.0 + 2.0 * rho_hat[..max_s].iter().sum::<f64>() + rho_hat[max_s + 1])
        .max(1.0 / total.log10());
    total / tau
}

/// Single-chain effective sample size.
pub fn ess_autocorr(x: &[f64]) -> f64 {
    ess_chains(&[x])
}

/// Sample mean and its Monte Carlo standard error for one chain.
pub fn mean_and_mcse(x: &[f64]) -> (f64, f64) {
    mean_and_mcse_chains(&[x])
}

/// Pooled mean and its Monte Carlo standard error over several chains.
pub fn mean_and_mcse_chains(chains: &[&[f64]]) -> (f64, f64) {
    let total: usize = chains.iter().map(|c| c.len()).sum();
    let mean = chains.iter().flat_map(|c| c.iter()).sum::<f64>() / total as f64;
    let var = chains
        .iter()
        .flat_map(|c| c.iter())
        .map(|v| (v - mean).powi(2))
        .sum::<f64>()
        / (total as f64 - 1.0);
    let ess = ess_chains(chains);
    (mean, (var / ess).sqrt())
}

/// Weighted mean of `values` under normalized `weights` and its Monte Carlo
/// standard error.
///
/// The error uses the delta-method sequence `g_r = R W_r (f_r - mean)` in
/// particle-index order; its autocorrelation accounts for duplicated and
/// jointly rejuvenated particles, which resampling keeps adjacent.
pub fn weighted_mean_and_mcse(values: &[f64], weights: &[f64]) -> (f64, f64) {
    let r = values.len() as f64;
    let mean: f64 = values.iter().zip(weights).map(|(v, w)| v * w).sum();
    let g: Vec<f64> = values
        .iter()
        .zip(weights)
        .map(|(v, w)| r * w * (v - mean))
        .collect();
    let second = g.iter().map(|x| x * x).sum::<f64>() / r;
    if second == 0.0 {
        return (mean, 0.0);
    }
    let ess = ess_autocorr(&g).min(r * 4.0);
    (mean, (second / ess).sqrt())
}

/// `|a - b| / sqrt(se_a^2 + se_b^2)`; symmetric in its two arguments.
pub fn standardized_difference(a: (f64, f64), b: (f64, f64)) -> f64 {
    let se = (a.1 * a.1 + b.1 * b.1).sqrt();
    let d = (a.0 - b.0).abs();
    if se == 0.0 {
        if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        d / se
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::rng::{stream, Purpose};

    fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, Purpose::Test, 3, 0);
        let mut x = 0.0;
        (0..n)
            .map(|_| {
                x = phi * x + (1.0 - phi * phi).sqrt() * rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect()
    }

    #[test]
    fn iid_ess_is_near_n() {
        let x = ar1(0.0, 4000, 1);
        let ess = ess_autocorr(&x);
        assert!((3000.0..5000.0).contains(&ess), "{ess}");
    }

    #[test]
    fn ar1_ess_matches_theory() {
        // tau = (1 + phi) / (1 - phi) = 3 for phi = 0.5
        let chains: Vec<Vec<f64>> = (0..4).map(|s| ar1(0.5, 5000, s)).collect();
        let refs: Vec<&[f64]> = chains.iter().map(|c| c.as_slice()).collect();
        let ess = ess_chains(&refs);
        let expected = 20000.0 / 3.0;
        assert!((ess / expected - 1.0).abs() < 0.15, "{ess} vs {expected}");
    }

    #[test]
    fn duplicated_particles_inflate_the_error() {
        let x = ar1(0.0, 500, 2);
        let dup: Vec<f64> = x.iter().flat_map(|v| [*v, *v]).collect();
        let w = vec![1.0 / 1000.0; 1000];
        let (_, se_dup) = weighted_mean_and_mcse(&dup, &w);
        let (_, se_iid) = mean_and_mcse(&x);
        assert!((se_dup / se_iid - 1.0).abs() < 0.2, "{se_dup} vs {se_iid}");
    }

    #[test]
    fn uniform_weighted_mean_is_arithmetic_mean() {
        let x = ar1(0.2, 300, 4);
        let w = vec![1.0 / 300.0; 300];
        let (m, _) = weighted_mean_and_mcse(&x, &w);
        let direct = x.iter().sum::<f64>() / 300.0;
        assert!((m - direct).abs() < 1e-14);
    }

    #[test]
    fn comparison_is_symmetric() {
        let a = (0.3, 0.02);
        let b = (0.25, 0.04);
        assert_eq!(standardized_difference(a, b), standardized_difference(b, a));
        assert_eq!(standardized_difference((1.0, 0.0), (1.0, 0.0)), 0.0);
    }
}
