//! Deterministic numerical kernels shared by every other module: Gaussian
//! quadrature rules, trapezoid integration on uniform grids, log-log
//! regression and the standard normal distribution functions.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

/// Default number of Gauss–Hermite nodes for expectations against N(0,1).
pub const DEFAULT_HERMITE_NODES: usize = 64;

/// Uniform grid `t_start = t_0 < t_1 < ... < t_{n-1} = t_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    t_start: f64,
    t_end: f64,
    n_points: usize,
}

impl Grid {
    pub fn new(t_start: f64, t_end: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 {
            return Err(Error::Usage(format!("grid needs at least 2 points, got {n_points}")));
        }
        if !(t_start.is_finite() && t_end.is_finite()) || t_start < 0.0 || t_end <= t_start {
            return Err(Error::Domain(format!(
                "grid bounds must satisfy 0 <= t_start < t_end, got [{t_start}, {t_end}]"
            )));
        }
        Ok(Grid { t_start, t_end, n_points })
    }

    /// Grid on `[0, horizon]` whose step is the largest value `<= dt` dividing the horizon.
    pub fn with_step(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !(horizon > 0.0) {
            return Err(Error::Domain(format!("need horizon > 0 and dt > 0, got {horizon}, {dt}")));
        }
        let steps = (horizon / dt - 1e-9).ceil().max(1.0) as usize;
        Grid::new(0.0, horizon, steps + 1)
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn step(&self) -> f64 {
        (self.t_end - self.t_start) / (self.n_points - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.t_end
        } else {
            self.t_start + i as f64 * self.step()
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |i| self.point(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Nodes and weights of a Gaussian quadrature rule.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// Integrates `f` over `[a, b]` assuming this is a Legendre rule on `[-1, 1]`.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }
}

type RuleCache = Mutex<HashMap<usize, Arc<GaussRule>>>;

fn cached(cache: &'static OnceLock<RuleCache>, n: usize, build: fn(usize) -> GaussRule) -> Arc<GaussRule> {
    let cache = cache.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    guard.entry(n).or_insert_with(|| Arc::new(build(n))).clone()
}

/// Probabilists' Gauss–Hermite rule normalized to the standard normal density
/// (weights sum to one). Cached per node count.
pub fn hermite_rule(n: usize) -> Arc<GaussRule> {
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    cached(&CACHE, n, build_hermite_rule)
}

/// Gauss–Legendre rule on `[-1, 1]`. Cached per node count.
pub fn legendre_rule(n: usize) -> Arc<GaussRule> {
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    cached(&CACHE, n, build_legendre_rule)
}

/// Node clustering applied to one panel of a composite rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grading {
    None,
    /// Cluster nodes at the left end, for an integrable singularity there.
    Start,
    /// Cluster nodes at the right end.
    End,
}

/// Substitution power `w = a + (b - a) u^q` used by graded panels.
pub const GRADING_POWER: i32 = 6;

/// Composite Gauss–Legendre rule over `panels`, each with `n` nodes.
/// Returns nodes and weights such that `int f ~ sum w_i f(x_i)`.
pub fn composite_legendre(panels: &[(f64, f64, Grading)], n: usize) -> (Vec<f64>, Vec<f64>) {
    let rule = legendre_rule(n);
    let mut nodes = Vec::with_capacity(panels.len() * n);
    let mut weights = Vec::with_capacity(panels.len() * n);
    let q = GRADING_POWER;
    for &(a, b, grading) in panels {
        let len = b - a;
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            let u = 0.5 * (x + 1.0);
            let (node, jac) = match grading {
                Grading::None => (a + len * u, len),
                Grading::Start => (a + len * u.powi(q), len * q as f64 * u.powi(q - 1)),
                Grading::End => (b - len * u.powi(q), len * q as f64 * u.powi(q - 1)),
            };
            nodes.push(node);
            weights.push(0.5 * w * jac);
        }
    }
    (nodes, weights)
}

// Orthonormal Hermite recurrence p_{k+1} = (x p_k - sqrt(k) p_{k-1}) / sqrt(k+1).
// Returns (p_n(x), p_{n-1}(x)).
fn orthonormal_hermite(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..n {
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

fn build_hermite_rule(n: usize) -> GaussRule {
    assert!(n >= 1);
    // Golub–Welsch: eigenvalues of the symmetric Jacobi matrix are the nodes.
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.total_cmp(b));
    // Newton polish on p_n, then weights 1 / (n p_{n-1}(x)^2); avoids the poor
    // relative accuracy of tiny eigenvector components at the outer nodes.
    let sqrt_n = (n as f64).sqrt();
    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (pn, pn1) = orthonormal_hermite(n, *x);
            if pn1 == 0.0 {
                break;
            }
            *x -= pn / (sqrt_n * pn1);
        }
        let (_, pn1) = orthonormal_hermite(n, *x);
        weights.push(1.0 / (n as f64 * pn1 * pn1));
    }
    // Symmetrize to remove the last ulp of asymmetry.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    GaussRule { nodes, weights }
}

fn build_legendre_rule(n: usize) -> GaussRule {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    GaussRule { nodes, weights }
}

/// `E[g(Z)]` for `Z ~ N(0,1)` by the `n_nodes`-point probabilists' Gauss–Hermite rule.
/// Exact for polynomials of degree `<= 2 n_nodes - 1`.
pub fn gauss_hermite_expectation(g: impl Fn(f64) -> f64, n_nodes: usize) -> Result<f64> {
    if n_nodes == 0 {
        return Err(Error::Usage("n_nodes must be >= 1".into()));
    }
    let rule = hermite_rule(n_nodes);
    let mut acc = 0.0;
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        let v = g(x);
        if !v.is_finite() {
            return Err(Error::Domain(format!("integrand is not finite at node x = {x}: {v}")));
        }
        acc += w * v;
    }
    Ok(acc)
}

/// Trapezoid rule for pointwise samples on a uniform grid.
pub fn grid_integral(values: &[f64], grid: &Grid) -> Result<f64> {
    if values.len() != grid.n_points() {
        return Err(Error::Usage(format!(
            "{} values for a grid of {} points",
            values.len(),
            grid.n_points()
        )));
    }
    Ok(trapezoid(values, grid.step()))
}

/// Uniform-step trapezoid sum without length checks.
pub fn trapezoid(values: &[f64], step: f64) -> f64 {
    match values {
        [] | [_] => 0.0,
        [first, inner @ .., last] => step * (0.5 * (first + last) + inner.iter().sum::<f64>()),
    }
}

/// Least-squares fit of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<RegressionFit> {
    if xs.len() != ys.len() {
        return Err(Error::Usage(format!("length mismatch: {} xs vs {} ys", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::Usage(format!("need at least 3 points, got {}", xs.len())));
    }
    if let Some(bad) = xs.iter().chain(ys).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!("log-log fit needs positive finite entries, got {bad}")));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in lx.iter().zip(&ly) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::Domain("all abscissae are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    // A constant response is fitted perfectly by a zero slope.
    let r_squared = if syy <= f64::EPSILON * f64::EPSILON * n {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok(RegressionFit { slope, intercept, r_squared, n_points: xs.len() })
}

/// Pairwise (cascade) summation; the reduction tree depends only on the length.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 16 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Sample mean and unbiased variance with pairwise summation.
pub fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(values) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    (mean, pairwise_sum(&dev) / (n - 1) as f64)
}

/// Standard error of the unbiased sample variance, `sqrt((m4 - s^4) / n)`.
pub fn variance_standard_error(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let (mean, var) = mean_and_variance(values);
    let m4: Vec<f64> = values.iter().map(|v| (v - mean).powi(4)).collect();
    let m4 = pairwise_sum(&m4) / n;
    ((m4 - var * var).max(0.0) / n).sqrt()
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Inverse of the standard normal CDF on `(0, 1)`: Acklam's rational
/// approximation refined by one Halley step against `normal_cdf`.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x = if p < 0.02425 {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - 0.02425 {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    let e = normal_cdf(x) - p;
    let u = e / normal_pdf(x);
    x - u / (1.0 + 0.5 * x * u)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial(k: u32) -> f64 {
        (1..=k).rev().step_by(2).map(f64::from).product()
    }

    #[test]
    fn hermite_expectation_examples() {
        assert!((gauss_hermite_expectation(|_| 1.0, 5).unwrap() - 1.0).abs() < 1e-14);
        assert!((gauss_hermite_expectation(|x| x * x, 5).unwrap() - 1.0).abs() < 1e-13);
        assert!((gauss_hermite_expectation(|x| x.powi(4), 5).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn hermite_expectation_is_exact_on_monomials() {
        for n in [1usize, 2, 5, 16, 64] {
            for k in 0..(2 * n as u32).min(40) {
                let got = gauss_hermite_expectation(|x| x.powi(k as i32), n).unwrap();
                let want = if k % 2 == 1 { 0.0 } else { double_factorial(k.saturating_sub(1)) };
                // E|Z|^k magnitude bounds the rounding in the odd-moment cancellation
                let scale = double_factorial(k.saturating_sub(1)).max(double_factorial(k)).max(1.0);
                assert!((got - want).abs() / scale < 1e-10, "n={n} k={k}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn hermite_rejects_nonfinite_integrand() {
        let err = gauss_hermite_expectation(|x| 1.0 / x, 5).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        assert!(matches!(gauss_hermite_expectation(|x| x, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let rule = legendre_rule(256);
        let s: f64 = rule.weights.iter().sum();
        assert!((s - 2.0).abs() < 1e-13);
        let v = rule.integrate(0.0, 2.0, |x| x.powi(7));
        assert!((v - 32.0).abs() < 1e-11);
        let v = legendre_rule(3).integrate(-1.0, 1.0, |x| x.powi(4));
        assert!((v - 0.4).abs() < 1e-14);
    }

    #[test]
    fn grid_integral_examples() {
        let g = Grid::new(0.0, 2.0, 3).unwrap();
        assert_eq!(grid_integral(&[1.0, 1.0, 1.0], &g).unwrap(), 2.0);
        let g = Grid::new(0.0, 1.0, 101).unwrap();
        let v: Vec<f64> = g.points().collect();
        assert!((grid_integral(&v, &g).unwrap() - 0.5).abs() < 1e-14);
        let g = Grid::new(0.0, 1.0, 1001).unwrap();
        let v: Vec<f64> = g.points().map(|t| t * t).collect();
        assert!((grid_integral(&v, &g).unwrap() - 1.0 / 3.0).abs() < 1e-6);
        assert!(matches!(grid_integral(&[1.0], &g), Err(Error::Usage(_))));
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(0.0, 1.0, 1).is_err());
        assert!(Grid::new(1.0, 1.0, 3).is_err());
        let g = Grid::with_step(512.0, 0.25).unwrap();
        assert_eq!(g.n_points(), 2049);
        assert_eq!(g.step(), 0.25);
        assert_eq!(g.point(2048), 512.0);
    }

    #[test]
    fn loglog_examples() {
        let xs: Vec<f64> = (1..=10).map(|k| k as f64 * 10.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.powf(-0.25)).collect();
        let fit = loglog_slope(&xs, &ys).unwrap();
        assert!((fit.slope + 0.25).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        let fit = loglog_slope(&xs, &vec![3.0; xs.len()]).unwrap();
        assert!(fit.slope.abs() < 1e-12);
        assert!(matches!(loglog_slope(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::Usage(_))));
        assert!(matches!(loglog_slope(&[1.0, 2.0, 0.0], &[1.0, 2.0, 3.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn loglog_recovers_noisy_exponent() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..20).map(|k| 2f64.powf(k as f64 * 0.5)).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| 2.0 * x.powf(-0.5) * (1.0 + 0.01 * (rng.random::<f64>() * 2.0 - 1.0)))
            .collect();
        let fit = loglog_slope(&xs, &ys).unwrap();
        assert!((fit.slope + 0.5).abs() < 0.05, "{fit:?}");
    }

    #[test]
    fn normal_helpers() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-12, "{}", normal_cdf(1.959963984540054) - 0.975);
        for p in [1e-10, 0.01, 0.3, 0.5, 0.9, 0.999999] {
            assert!((normal_cdf(normal_quantile(p)) - p).abs() < 1e-12 * p.max(1e-3) * 1e3);
        }
    }

    #[test]
    fn graded_composite_rule_handles_endpoint_singularities() {
        let (x, w) = composite_legendre(&[(0.0, 1.0, Grading::Start), (1.0, 2.0, Grading::End)], 32);
        let got: f64 = x.iter().zip(&w).map(|(x, w)| w * (x * (2.0 - x)).sqrt()).sum();
        assert!((got - std::f64::consts::FRAC_PI_2).abs() < 1e-10, "{got}");
        let (x, w) = composite_legendre(&[(0.0, 3.0, Grading::None)], 4);
        let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(7)).sum();
        assert!((got - 3f64.powi(8) / 8.0).abs() < 1e-9);
    }
}
