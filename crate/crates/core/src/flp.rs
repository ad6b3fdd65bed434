//! Fractional Lévy process `X_t ~ N_t^eps + sigma^(eps) B^H_t` on a compact grid.
//!
//! The kernel `K^H_t` is represented only through its inner products: the
//! Cholesky factor of the fBM covariance on the grid. Column `c` of the factor
//! belongs to the cell `(t_c, t_{c+1}]`, so `K^H_{t_i}(s) ~ K[i][c] / sqrt(h)`
//! for `s` in that cell.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussian_processes::fbm_covariance;
use crate::levy::{
    measure_moment, sample_big_jumps_with, signed_first_moment, small_jump_variance, third_moment_ratio,
    LevyMeasure, Region,
};
use crate::mc_engine::{run_replicates, MCConfig, StreamTag};
use crate::numerics::Grid;

const JITTER_START: f64 = 1e-12;
const JITTER_LIMIT: f64 = 1e-9;

/// Lower-triangular discrete kernel with `K K^T = fBM covariance` on the grid.
#[derive(Debug, Clone)]
pub struct GridKernel {
    pub grid: Grid,
    pub hurst: f64,
    /// `n_points x (n_points - 1)`; row 0 (time 0) is identically zero.
    pub k: DMatrix<f64>,
}

pub fn build_grid_kernel(hurst: f64, grid: Grid) -> Result<GridKernel> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(Error::Domain(format!("Hurst index must lie in (0, 1), got {hurst}")));
    }
    if grid.t_start() != 0.0 {
        return Err(Error::Domain("the kernel grid must start at 0".into()));
    }
    let n = grid.n_points() - 1;
    let cov = DMatrix::from_fn(n, n, |i, j| fbm_covariance(hurst, grid.point(i + 1), grid.point(j + 1)));
    let scale = cov.diagonal().max();
    let mut jitter = 0.0;
    let factor = loop {
        let mut m = cov.clone();
        for i in 0..n {
            m[(i, i)] += jitter * scale;
        }
        if let Some(chol) = m.cholesky() {
            break chol.unpack();
        }
        jitter = if jitter == 0.0 { JITTER_START } else { jitter * 10.0 };
        if jitter > JITTER_LIMIT {
            return Err(Error::Numerical(format!(
                "fBM covariance (H = {hurst}, {} points) is numerically indefinite",
                grid.n_points()
            )));
        }
    };
    let k = DMatrix::from_fn(n + 1, n, |i, c| if i == 0 { 0.0 } else { factor[(i - 1, c)] });
    Ok(GridKernel { grid, hurst, k })
}

impl GridKernel {
    /// `max |(K K^T)[i][j] - R_H(t_i, t_j)|`.
    pub fn covariance_error(&self) -> f64 {
        let gram = &self.k * self.k.transpose();
        let mut worst: f64 = 0.0;
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                let want = fbm_covariance(self.hurst, self.grid.point(i), self.grid.point(j));
                worst = worst.max((gram[(i, j)] - want).abs());
            }
        }
        worst
    }

    fn row_value(&self, i: usize, c: usize) -> f64 {
        self.k[(i, c)] / self.grid.step().sqrt()
    }

    /// `K^H_{t_i}(s)`: linear between cell midpoints, held over the half
    /// cells at either end, zero for `s > t_i`.
    pub fn kernel_at(&self, i: usize, s: f64) -> f64 {
        let t = self.grid.point(i);
        if i == 0 || s > t || s < 0.0 {
            return 0.0;
        }
        let u = s / self.grid.step() - 0.5;
        if u <= 0.0 {
            return self.row_value(i, 0);
        }
        let c = u.floor() as usize;
        if c + 1 >= i {
            return self.row_value(i, i - 1);
        }
        let w = u - c as f64;
        (1.0 - w) * self.row_value(i, c) + w * self.row_value(i, c + 1)
    }

    /// `int_0^{t_i} K^H_{t_i}(s) ds` of the interpolated kernel.
    pub fn kernel_integral(&self, i: usize) -> f64 {
        if i == 0 {
            return 0.0;
        }
        let h = self.grid.step();
        let v: Vec<f64> = (0..i).map(|c| self.row_value(i, c)).collect();
        let inner: f64 = v.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum();
        h * (0.5 * v[0] + inner + 0.5 * v[i - 1])
    }

    /// `max |<K_{t_i}, K_{t_j}> - R_H(t_i, t_j)|` for the interpolated kernel;
    /// the price of evaluating the kernel off the grid.
    pub fn interpolation_covariance_error(&self) -> f64 {
        let n = self.grid.n_points();
        let h = self.grid.step();
        let mut worst: f64 = 0.0;
        for i in 1..n {
            for j in 1..=i {
                // Breakpoints: 0, the midpoints below t_j, then t_j. Simpson is
                // exact for the product of two linear pieces.
                let mut knots = vec![0.0];
                knots.extend((0..j).map(|c| (c as f64 + 0.5) * h));
                knots.push(self.grid.point(j));
                let inner: f64 = knots
                    .windows(2)
                    .map(|w| {
                        let m = 0.5 * (w[0] + w[1]);
                        let f = |s: f64| self.kernel_at(i, s) * self.kernel_at(j, s);
                        (w[1] - w[0]) / 6.0 * (f(w[0]) + 4.0 * f(m) + f(w[1]))
                    })
                    .sum();
                let want = fbm_covariance(self.hurst, self.grid.point(i), self.grid.point(j));
                worst = worst.max((inner - want).abs());
            }
        }
        worst
    }
}

/// Maximal kernel inner-product error on the grid.
pub fn kernel_covariance_error(hurst: f64, grid: Grid) -> Result<f64> {
    Ok(build_grid_kernel(hurst, grid)?.covariance_error())
}

/// Replicate paths with the jump and Gaussian parts kept apart.
#[derive(Debug, Clone, Serialize)]
pub struct FlpEnsemble {
    pub grid: Grid,
    pub hurst: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// `sigma^(eps)`, the scale of the fBM part.
    pub sigma_small: f64,
    /// `int_{|x|>=eps} x^2 dnu`.
    pub big_jump_second_moment: f64,
    /// Small-jump third-moment ratio; `None` when no jumps lie below `eps`.
    pub third_moment_ratio: Option<f64>,
    pub jumps: Vec<Vec<f64>>,
    pub gaussian: Vec<Vec<f64>>,
}

impl FlpEnsemble {
    pub fn n(&self) -> usize {
        self.jumps.len()
    }

    /// `X_{t_i}` for replicate `r`.
    pub fn path(&self, r: usize) -> Vec<f64> {
        self.jumps[r].iter().zip(&self.gaussian[r]).map(|(a, b)| a + b).collect()
    }

    /// Row-major `n x n_points` values of `X`.
    pub fn values(&self) -> Vec<f64> {
        (0..self.n()).flat_map(|r| self.path(r)).collect()
    }
}

pub fn simulate_flp_approx(
    hurst: f64,
    measure: &LevyMeasure,
    epsilon: f64,
    grid: Grid,
    config: &MCConfig,
) -> Result<FlpEnsemble> {
    let kernel = build_grid_kernel(hurst, grid)?;
    simulate_with_kernel(&kernel, measure, epsilon, config)
}

/// [`simulate_flp_approx`] reusing a prebuilt kernel.
pub fn simulate_with_kernel(
    kernel: &GridKernel,
    measure: &LevyMeasure,
    epsilon: f64,
    config: &MCConfig,
) -> Result<FlpEnsemble> {
    let grid = kernel.grid;
    let n_points = grid.n_points();
    let sigma_small = small_jump_variance(measure, epsilon)?.sqrt();
    let ratio = match third_moment_ratio(measure, epsilon) {
        Ok(r) => Some(r),
        Err(Error::NoSmallJumps(_)) => None,
        Err(e) => return Err(e),
    };
    let big_second = measure_moment(measure, 2.0, Region::Big(epsilon))?;
    let big_mean = signed_first_moment(measure, Region::Big(epsilon))?;
    let compensator: Vec<f64> = (0..n_points).map(|i| big_mean * kernel.kernel_integral(i)).collect();
    let horizon = grid.t_end();
    let rows = run_replicates(config, |rep| {
        let path = sample_big_jumps_with(
            measure,
            epsilon,
            horizon,
            config.master_seed,
            &mut rep.stream(StreamTag::Poisson),
        )?;
        let mut jumps: Vec<f64> = compensator.iter().map(|c| -c).collect();
        for (s, x) in path.times.iter().zip(&path.sizes) {
            let first = (s / grid.step()).ceil() as usize;
            for (i, slot) in jumps.iter_mut().enumerate().skip(first.max(1)) {
                *slot += x * kernel.kernel_at(i, *s);
            }
        }
        let mut rng = rep.stream(StreamTag::Wiener);
        let xi: Vec<f64> = (0..n_points - 1).map(|_| StandardNormal.sample(&mut rng)).collect();
        let gaussian: Vec<f64> = (0..n_points)
            .map(|i| sigma_small * (0..i).map(|c| kernel.k[(i, c)] * xi[c]).sum::<f64>())
            .collect();
        Ok((jumps, gaussian))
    })?;
    let (jumps, gaussian) = rows.into_iter().unzip();
    Ok(FlpEnsemble {
        grid,
        hurst: kernel.hurst,
        epsilon,
        seed: config.master_seed,
        sigma_small,
        big_jump_second_moment: big_second,
        third_moment_ratio: ratio,
        jumps,
        gaussian,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{mean_and_variance, variance_standard_error};

    fn grid(n: usize) -> Grid {
        Grid::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn brownian_kernel_is_cumulative_sum() {
        let g = grid(65);
        let k = build_grid_kernel(0.5, g).unwrap();
        let h = g.step();
        for i in 1..65 {
            for c in 0..64 {
                let want = if c < i { h.sqrt() } else { 0.0 };
                assert!((k.k[(i, c)] - want).abs() < 1e-13);
            }
        }
        assert!(k.covariance_error() < 1e-12);
    }

    #[test]
    fn kernel_identity_on_grids() {
        for h in [0.25, 0.5, 0.75] {
            assert!(kernel_covariance_error(h, grid(128)).unwrap() < 1e-8, "H = {h}");
        }
        let k = build_grid_kernel(0.75, Grid::new(0.0, 2.0, 129).unwrap()).unwrap();
        let gram = &k.k * k.k.transpose();
        assert!((gram[(64, 64)] - 1.0).abs() < 1e-10);
        assert!((gram[(128, 64)] - 2f64.sqrt()).abs() < 1e-8);
        assert!(k.covariance_error() < 1e-8);
    }

    #[test]
    fn zeroed_entry_is_detected() {
        let mut k = build_grid_kernel(0.75, grid(32)).unwrap();
        k.k[(20, 5)] = 0.0;
        assert!(k.covariance_error() > 1e-6);
    }

    #[test]
    fn interpolation_is_exact_for_brownian_kernel() {
        let k = build_grid_kernel(0.5, grid(33)).unwrap();
        assert!(k.interpolation_covariance_error() < 1e-12);
        assert!((k.kernel_integral(32) - 1.0).abs() < 1e-12);
        let k = build_grid_kernel(0.75, grid(65)).unwrap();
        assert!(k.interpolation_covariance_error() < 0.02);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(build_grid_kernel(1.0, grid(8)), Err(Error::Domain(_))));
        assert!(matches!(build_grid_kernel(0.5, Grid::new(1.0, 2.0, 8).unwrap()), Err(Error::Domain(_))));
    }

    #[test]
    fn no_big_jumps_gives_scaled_fbm() {
        let m = LevyMeasure::power_law(0.0, 0.1, 0.1).unwrap();
        let e = simulate_flp_approx(0.75, &m, 0.2, grid(17), &MCConfig::new(20, 1)).unwrap();
        assert!(e.jumps.iter().flatten().all(|v| *v == 0.0));
        let sigma = small_jump_variance(&m, 0.2).unwrap().sqrt();
        assert!((e.sigma_small - sigma).abs() < 1e-15);
        assert_eq!(e.path(3), e.gaussian[3]);
    }

    #[test]
    fn variance_covariance_and_independence() {
        let m = LevyMeasure::power_law(0.0, 1.0, 1.0).unwrap();
        let g = Grid::new(0.0, 2.0, 65).unwrap();
        let e = simulate_flp_approx(0.75, &m, 0.1, g, &MCConfig::new(10_000, 5)).unwrap();
        let total = e.big_jump_second_moment + e.sigma_small * e.sigma_small;
        let x1: Vec<f64> = (0..e.n()).map(|r| e.jumps[r][32] + e.gaussian[r][32]).collect();
        let x2: Vec<f64> = (0..e.n()).map(|r| e.jumps[r][64] + e.gaussian[r][64]).collect();
        let (_, v1) = mean_and_variance(&x1);
        let se = variance_standard_error(&x1);
        assert!((v1 - total).abs() < 4.0 * se, "{v1} vs {total}");
        // correlation shape: Cov(X1, X2) / Var(X1) = R(1, 2) / R(1, 1)
        let prods: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a * b).collect();
        let (cov, pv) = mean_and_variance(&prods);
        let want = fbm_covariance(0.75, 1.0, 2.0) * total;
        assert!((cov - want).abs() < 4.0 * (pv / prods.len() as f64).sqrt());
        let cross: Vec<f64> = (0..e.n()).map(|r| e.jumps[r][64] * e.gaussian[r][64]).collect();
        let (c, cv) = mean_and_variance(&cross);
        assert!(c.abs() < 4.0 * (cv / cross.len() as f64).sqrt());
        let again = simulate_flp_approx(0.75, &m, 0.1, g, &MCConfig::new(50, 5).with_workers(3)).unwrap();
        assert_eq!(again.jumps[7], e.jumps[7]);
        assert_eq!(again.gaussian[7], e.gaussian[7]);
    }
}
