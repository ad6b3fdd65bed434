//! Distances from an empirical sample to a normal law.
//!
//! W1 is the `L^1` distance between the empirical CDF and `Phi`, integrated
//! exactly between order statistics with the antiderivative
//! `G(z) = z Phi(z) + phi(z)` of `Phi`.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mc_engine::{derive_stream, seed_from_samples, StreamTag};
use crate::numerics::{mean_and_variance, normal_cdf, normal_pdf, normal_quantile};

/// Number of bootstrap resamples behind every standard error.
pub const BOOTSTRAP_RESAMPLES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DistanceMethod {
    W1,
    Ks,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistanceEstimate {
    pub value: f64,
    pub standard_error: f64,
    pub n: usize,
    pub method: DistanceMethod,
}

fn antiderivative(z: f64) -> f64 {
    z * normal_cdf(z) + normal_pdf(z)
}

// `int_a^b |p - Phi(z)| dz` for `a <= b`.
fn band(p: f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let signed = |lo: f64, hi: f64| p * (hi - lo) - (antiderivative(hi) - antiderivative(lo));
    if p <= 0.0 {
        return -signed(a, b);
    }
    if p >= 1.0 {
        return signed(a, b);
    }
    let c = normal_quantile(p);
    if c <= a {
        -signed(a, b)
    } else if c >= b {
        signed(a, b)
    } else {
        signed(a, c) - signed(c, b)
    }
}

/// `int |F_n - Phi|` in standard units for sorted standardized values.
fn w1_standardized(z: &[f64]) -> f64 {
    let n = z.len() as f64;
    let mut acc = antiderivative(z[0]) + antiderivative(-z[z.len() - 1]);
    for (i, w) in z.windows(2).enumerate() {
        acc += band((i + 1) as f64 / n, w[0], w[1]);
    }
    acc
}

fn ks_standardized(z: &[f64]) -> f64 {
    let n = z.len() as f64;
    z.iter()
        .enumerate()
        .map(|(i, &zi)| {
            let phi = normal_cdf(zi);
            ((i + 1) as f64 / n - phi).max(phi - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

fn standardize(samples: &[f64], mu: f64, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) || !mu.is_finite() {
        return Err(Error::Domain(format!("need finite mu and sigma > 0, got mu = {mu}, sigma = {sigma}")));
    }
    if samples.len() < 2 {
        return Err(Error::Usage(format!("need at least 2 samples, got {}", samples.len())));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("samples contain non-finite values".into()));
    }
    let mut z: Vec<f64> = samples.iter().map(|x| (x - mu) / sigma).collect();
    z.sort_by(|a, b| a.total_cmp(b));
    Ok(z)
}

fn estimate(
    samples: &[f64],
    mu: f64,
    sigma: f64,
    method: DistanceMethod,
    statistic: fn(&[f64]) -> f64,
    scale: f64,
) -> Result<DistanceEstimate> {
    let z = standardize(samples, mu, sigma)?;
    let value = scale * statistic(&z);
    // Seeding from the sorted sample keeps the SE a pure, order-free function of the data.
    let mut rng = derive_stream(seed_from_samples(&z), 0, StreamTag::Bootstrap);
    let mut resample = vec![0.0; z.len()];
    let replicates: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            for slot in resample.iter_mut() {
                *slot = z[rng.random_range(0..z.len())];
            }
            resample.sort_by(|a, b| a.total_cmp(b));
            scale * statistic(&resample)
        })
        .collect();
    let (_, var) = mean_and_variance(&replicates);
    Ok(DistanceEstimate { value, standard_error: var.sqrt(), n: samples.len(), method })
}

/// Wasserstein-1 distance between the empirical law of `samples` and `N(mu, sigma^2)`.
pub fn empirical_w1_to_normal(samples: &[f64], mu: f64, sigma: f64) -> Result<DistanceEstimate> {
    estimate(samples, mu, sigma, DistanceMethod::W1, w1_standardized, sigma)
}

/// One-sample Kolmogorov–Smirnov statistic against `N(mu, sigma^2)`.
pub fn ks_to_normal(samples: &[f64], mu: f64, sigma: f64) -> Result<DistanceEstimate> {
    estimate(samples, mu, sigma, DistanceMethod::Ks, ks_standardized, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = derive_stream(seed, 0, StreamTag::Custom(99));
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn constant_sample_is_mean_absolute_deviation() {
        let d = empirical_w1_to_normal(&[1.5; 10], 1.5, 2.0).unwrap();
        let want = 2.0 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((d.value - want).abs() < 1e-13, "{}", d.value);
        assert_eq!(d.standard_error, 0.0);
        let k = ks_to_normal(&[0.0; 4], 0.0, 1.0).unwrap();
        assert!((k.value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn large_normal_sample_is_close() {
        let x = normals(100_000, 3);
        let d = empirical_w1_to_normal(&x, 0.0, 1.0).unwrap();
        assert!(d.value < 0.01);
        let k = ks_to_normal(&x, 0.0, 1.0).unwrap();
        assert!(k.value < 1.63 / (x.len() as f64).sqrt());
    }

    #[test]
    fn mean_shift_recovers_exact_distance() {
        let x: Vec<f64> = normals(100_000, 4).iter().map(|v| v + 0.2).collect();
        let d = empirical_w1_to_normal(&x, 0.0, 1.0).unwrap();
        assert!((d.value - 0.2).abs() < 3.0 * d.standard_error.max(1e-3), "{d:?}");
    }

    #[test]
    fn affine_equivariance_and_permutation_invariance() {
        let x = normals(500, 5);
        let d = empirical_w1_to_normal(&x, 0.1, 1.0).unwrap();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 2.0).collect();
        let e = empirical_w1_to_normal(&y, 3.0 * 0.1 - 2.0, 3.0).unwrap();
        assert!((e.value - 3.0 * d.value).abs() < 1e-12);
        let mut r = x.clone();
        r.reverse();
        assert_eq!(empirical_w1_to_normal(&r, 0.1, 1.0).unwrap(), d);
    }

    #[test]
    fn shifted_sample_has_large_ks() {
        // N(3, 1) against N(0, 1): the sup distance is 2 Phi(1.5) - 1
        let x: Vec<f64> = normals(20_000, 6).iter().map(|v| v + 3.0).collect();
        let k = ks_to_normal(&x, 0.0, 1.0).unwrap();
        assert!((k.value - (2.0 * normal_cdf(1.5) - 1.0)).abs() < 1.63 / (x.len() as f64).sqrt());
        assert!(ks_to_normal(&[3.0; 8], 0.0, 1.0).unwrap().value > 0.9);
    }

    #[test]
    fn errors() {
        assert!(matches!(empirical_w1_to_normal(&[1.0, 2.0], 0.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(empirical_w1_to_normal(&[1.0], 0.0, 1.0), Err(Error::Usage(_))));
        assert!(matches!(ks_to_normal(&[1.0, f64::NAN], 0.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn w1_matches_brute_force_integration() {
        let x = normals(50, 8);
        let d = empirical_w1_to_normal(&x, 0.3, 1.2).unwrap().value;
        let mut s = x.clone();
        s.sort_by(|a, b| a.total_cmp(b));
        let (lo, hi, m) = (-12.0, 12.0, 2_000_000);
        let h = (hi - lo) / m as f64;
        let mut acc = 0.0;
        for k in 0..m {
            let t = lo + (k as f64 + 0.5) * h;
            let fn_ = s.partition_point(|v| *v <= t) as f64 / s.len() as f64;
            acc += (fn_ - normal_cdf((t - 0.3) / 1.2)).abs() * h;
        }
        assert!((d - acc).abs() < 1e-5, "{d} vs {acc}");
    }
}
