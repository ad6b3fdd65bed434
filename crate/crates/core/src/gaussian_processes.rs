//! Stationary Gaussian covariance models and exact path sampling.
//!
//! The stationary fractional Ornstein–Uhlenbeck process
//! `Y_t = sigma * int_{-inf}^t e^{-lambda (t-u)} dB^H_u` has covariance
//!
//! ```text
//! C(s) = sigma^2 / 2 * ( E[g(s + W)] - g(s) ),   g(x) = |x|^{2H},
//! ```
//!
//! where `W` is Laplace distributed with density `lambda/2 e^{-lambda |w|}`.
//! Expanding `g` in a Taylor series recovers the known asymptotic series in
//! `lambda^{-2n} g^{(2n)}(s)`. The expectation is evaluated by composite
//! Gauss–Legendre quadrature with panels graded towards the cusp of `g`.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mc_engine::{run_replicates, MCConfig, Stream, StreamTag};
use crate::numerics::{composite_legendre, Grading, Grid};

const PANEL_NODES: usize = 32;
// Panel breakpoints in units of 1/lambda; e^{-80} is far below double precision.
const PANEL_EDGES: [f64; 13] = [0.0, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 48.0, 64.0, 80.0];
const PADDING_FACTORS: [usize; 5] = [1, 2, 4, 8, 16];
// Clipping perturbs every covariance entry by at most the clipped mass.
const CLIPPED_MASS_TOLERANCE: f64 = 1e-8;
const CHOLESKY_JITTER: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum CovarianceKind {
    Fgn { hurst: f64 },
    FracOu { hurst: f64, lambda: f64, sigma_tilde: f64 },
    Tabulated { lags: Vec<f64>, values: Vec<f64> },
}

/// A stationary covariance `C(t) = E[X_0 X_t]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryCovariance {
    kind: CovarianceKind,
    c0: f64,
}

fn check_hurst(hurst: f64) -> Result<()> {
    if hurst > 0.0 && hurst < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("Hurst index must lie in (0, 1), got {hurst}")))
    }
}

impl StationaryCovariance {
    /// Increments of fractional Brownian motion on unit spacing.
    pub fn fgn(hurst: f64) -> Result<Self> {
        check_hurst(hurst)?;
        Ok(StationaryCovariance { kind: CovarianceKind::Fgn { hurst }, c0: 1.0 })
    }

    /// Stationary fractional Ornstein–Uhlenbeck process.
    pub fn frac_ou(hurst: f64, lambda: f64, sigma_tilde: f64) -> Result<Self> {
        check_hurst(hurst)?;
        if !(lambda > 0.0 && lambda.is_finite()) || !(sigma_tilde > 0.0 && sigma_tilde.is_finite()) {
            return Err(Error::Domain(format!(
                "lambda and sigma_tilde must be positive, got {lambda} and {sigma_tilde}"
            )));
        }
        let c0 = sigma_tilde * sigma_tilde * libm::tgamma(2.0 * hurst + 1.0) / (2.0 * lambda.powf(2.0 * hurst));
        Ok(StationaryCovariance { kind: CovarianceKind::FracOu { hurst, lambda, sigma_tilde }, c0 })
    }

    /// Linearly interpolated table starting at lag 0; zero beyond the last lag.
    pub fn tabulated(lags: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if lags.len() != values.len() || lags.len() < 2 {
            return Err(Error::Usage("tabulated covariance needs >= 2 (lag, value) pairs".into()));
        }
        if lags[0] != 0.0 {
            return Err(Error::Validation(format!("first lag must be 0, got {}", lags[0])));
        }
        if lags.windows(2).any(|w| !(w[1] > w[0])) || lags.iter().any(|l| !l.is_finite()) {
            return Err(Error::Validation("lags must be finite and strictly increasing".into()));
        }
        let c0 = values[0];
        if !(c0 > 0.0) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("values must be finite with C(0) > 0".into()));
        }
        if let Some(v) = values.iter().find(|v| v.abs() > c0 * (1.0 + 1e-12)) {
            return Err(Error::Validation(format!("|C(t)| = {} exceeds C(0) = {c0}", v.abs())));
        }
        Ok(StationaryCovariance { kind: CovarianceKind::Tabulated { lags, values }, c0 })
    }

    pub fn kind(&self) -> &CovarianceKind {
        &self.kind
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn hurst(&self) -> Option<f64> {
        match self.kind {
            CovarianceKind::Fgn { hurst } | CovarianceKind::FracOu { hurst, .. } => Some(hurst),
            CovarianceKind::Tabulated { .. } => None,
        }
    }

    /// `C(t)`, extended evenly to negative `t`.
    pub fn eval(&self, t: f64) -> f64 {
        let t = t.abs();
        match &self.kind {
            CovarianceKind::Fgn { hurst } => fgn_covariance(*hurst, t),
            CovarianceKind::FracOu { hurst, lambda, sigma_tilde } => {
                if t == 0.0 {
                    self.c0
                } else {
                    0.5 * sigma_tilde * sigma_tilde * laplace_smoothing_excess(2.0 * hurst, *lambda, t)
                }
            }
            CovarianceKind::Tabulated { lags, values } => interpolate(lags, values, t),
        }
    }
}

/// `C(t)` of the model; alias of [`StationaryCovariance::eval`].
pub fn covariance_eval(model: &StationaryCovariance, t: f64) -> f64 {
    model.eval(t)
}

fn interpolate(lags: &[f64], values: &[f64], t: f64) -> f64 {
    let last = lags.len() - 1;
    if t > lags[last] {
        return 0.0;
    }
    let j = lags.partition_point(|&l| l <= t).clamp(1, last);
    let (l0, l1) = (lags[j - 1], lags[j]);
    let w = (t - l0) / (l1 - l0);
    values[j - 1] * (1.0 - w) + values[j] * w
}

/// `(1+x)^p - 1 - p x` without cancellation for small `x`; `|1+x|^p` beyond `x < -1`.
fn binomial_remainder(p: f64, x: f64) -> f64 {
    if x.abs() < 0.1 {
        let mut term = p * (p - 1.0) / 2.0 * x * x;
        let mut acc = term;
        let mut k = 2.0;
        while term.abs() > 1e-18 * acc.abs().max(1e-300) && k < 60.0 {
            term *= (p - k) / (k + 1.0) * x;
            acc += term;
            k += 1.0;
        }
        acc
    } else {
        (1.0 + x).abs().powf(p) - 1.0 - p * x
    }
}

fn fgn_covariance(hurst: f64, t: f64) -> f64 {
    let p = 2.0 * hurst;
    if t < 2.0 {
        0.5 * ((t + 1.0).powf(p) + (t - 1.0).abs().powf(p) - 2.0 * t.powf(p))
    } else {
        let x = 1.0 / t;
        0.5 * t.powf(p) * (binomial_remainder(p, x) + binomial_remainder(p, -x))
    }
}

/// `E[g(s+W)] - g(s)` for `g = |.|^p` and `W ~ Laplace(lambda)`, `s > 0`.
fn laplace_smoothing_excess(p: f64, lambda: f64, s: f64) -> f64 {
    let sp = s.powf(p);
    // Far from the origin subtract the tangent line as well; it integrates to zero.
    let bracket = |w: f64| -> f64 {
        if lambda * s > 1.0 {
            sp * binomial_remainder(p, w / s)
        } else {
            (s + w).abs().powf(p) - sp
        }
    };
    let integrand = |w: f64| 0.5 * lambda * (-lambda * w.abs()).exp() * bracket(w);

    let mut edges: Vec<f64> = PANEL_EDGES.iter().flat_map(|e| [e / lambda, -e / lambda]).collect();
    let kink = -s;
    let has_kink = lambda * s < PANEL_EDGES[PANEL_EDGES.len() - 1];
    if has_kink {
        edges.push(kink);
    }
    edges.sort_by(|a, b| a.total_cmp(b));
    edges.dedup();

    let panels: Vec<(f64, f64, Grading)> = edges
        .windows(2)
        .map(|w| {
            let grading = if has_kink && w[1] == kink {
                Grading::End
            } else if has_kink && w[0] == kink {
                Grading::Start
            } else {
                Grading::None
            };
            (w[0], w[1], grading)
        })
        .collect();
    let (nodes, weights) = composite_legendre(&panels, PANEL_NODES);
    nodes.iter().zip(&weights).map(|(w, wt)| wt * integrand(*w)).sum()
}

/// Truncated asymptotic series
/// `sigma^2/2 sum_{n=1}^N lambda^{-2n} prod_{k=0}^{2n-1} (2H - k) T^{2H-2n}`.
pub fn frac_ou_covariance_asymptotic(hurst: f64, lambda: f64, sigma_tilde: f64, terms: usize, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("T must be positive, got {t}")));
    }
    let p = 2.0 * hurst;
    let mut falling = 1.0;
    let mut acc = 0.0;
    for n in 1..=terms {
        let k0 = (2 * n - 2) as f64;
        falling *= (p - k0) * (p - k0 - 1.0);
        acc += falling * lambda.powi(-2 * n as i32) * t.powf(p - 2.0 * n as f64);
    }
    Ok(0.5 * sigma_tilde * sigma_tilde * acc)
}

/// Covariance of fractional Brownian motion, `(|t|^{2H} + |s|^{2H} - |t-s|^{2H}) / 2`.
pub fn fbm_covariance(hurst: f64, t: f64, s: f64) -> f64 {
    let p = 2.0 * hurst;
    0.5 * (t.abs().powf(p) + s.abs().powf(p) - (t - s).abs().powf(p))
}

/// Dense covariance matrix `C(t_i - t_j)` over a grid.
pub fn covariance_matrix(model: &StationaryCovariance, grid: &Grid) -> DMatrix<f64> {
    let n = grid.n_points();
    let lags: Vec<f64> = (0..n).map(|k| model.eval(k as f64 * grid.step())).collect();
    DMatrix::from_fn(n, n, |i, j| lags[i.abs_diff(j)])
}

enum Factor {
    Circulant { sqrt_eigen: Vec<f64>, fft: Arc<dyn Fft<f64>> },
    Dense(DMatrix<f64>),
}

/// Reusable exact sampler for a stationary model on a uniform grid.
pub struct StationarySampler {
    n_points: usize,
    factor: Factor,
}

impl StationarySampler {
    /// Circulant embedding, padded up to 16-fold with the true covariance until
    /// the negative eigenvalue mass is negligible; dense Cholesky otherwise.
    pub fn new(model: &StationaryCovariance, grid: &Grid) -> Result<Self> {
        let n = grid.n_points();
        let h = grid.step();
        let c0 = model.c0();
        let mut planner = FftPlanner::new();
        for pad in PADDING_FACTORS {
            let half = (n - 1) * pad;
            let m = 2 * half;
            let mut row: Vec<Complex64> = (0..m)
                .map(|k| Complex64::new(model.eval(k.min(m - k) as f64 * h), 0.0))
                .collect();
            let fft = planner.plan_fft_forward(m);
            fft.process(&mut row);
            let negative: f64 = row.iter().map(|z| (-z.re).max(0.0)).sum::<f64>() / m as f64;
            if negative <= CLIPPED_MASS_TOLERANCE * c0 {
                let sqrt_eigen = row.iter().map(|z| (z.re.max(0.0) / m as f64).sqrt()).collect();
                return Ok(StationarySampler { n_points: n, factor: Factor::Circulant { sqrt_eigen, fft } });
            }
        }
        let mut cov = covariance_matrix(model, grid);
        for i in 0..n {
            cov[(i, i)] += CHOLESKY_JITTER * c0;
        }
        let chol = Cholesky::new(cov).ok_or_else(|| {
            Error::Sampling(format!(
                "circulant embedding has negative eigenvalues up to 16-fold padding and the \
                 {n}x{n} covariance matrix is not positive definite"
            ))
        })?;
        Ok(StationarySampler { n_points: n, factor: Factor::Dense(chol.l()) })
    }

    pub fn is_circulant(&self) -> bool {
        matches!(self.factor, Factor::Circulant { .. })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    /// One path drawn from `rng`.
    pub fn sample(&self, rng: &mut Stream) -> Vec<f64> {
        match &self.factor {
            Factor::Circulant { sqrt_eigen, fft } => {
                let mut buf: Vec<Complex64> = sqrt_eigen
                    .iter()
                    .map(|s| {
                        let a: f64 = StandardNormal.sample(rng);
                        let b: f64 = StandardNormal.sample(rng);
                        Complex64::new(s * a, s * b)
                    })
                    .collect();
                fft.process(&mut buf);
                buf.iter().take(self.n_points).map(|z| z.re).collect()
            }
            Factor::Dense(l) => {
                let xi = DVector::from_fn(self.n_points, |_, _| StandardNormal.sample(rng));
                (l * xi).iter().copied().collect()
            }
        }
    }
}

/// Independent sample paths on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianPathEnsemble {
    pub grid: Grid,
    pub paths: Vec<Vec<f64>>,
    pub seed: u64,
    pub model: StationaryCovariance,
}

/// `n` independent draws; path `i` uses the stream derived from `(seed, i)`.
pub fn sample_stationary_paths(
    model: &StationaryCovariance,
    grid: &Grid,
    n: usize,
    seed: u64,
) -> Result<GaussianPathEnsemble> {
    let sampler = StationarySampler::new(model, grid)?;
    let config = MCConfig::new(n, seed);
    let paths = run_replicates(&config, |rep| Ok(sampler.sample(&mut rep.stream(StreamTag::Path))))?;
    Ok(GaussianPathEnsemble { grid: *grid, paths, seed, model: model.clone() })
}
