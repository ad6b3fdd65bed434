//! Lévy measures, small-jump moments and compound-Poisson jump sampling.
//!
//! Every quantity is computed on a band `{lo <= |x| < hi}`. "Small" jumps are
//! the band `(0, eps)`, "big" jumps the band `[eps, inf)`.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::Serialize;

use crate::distance::{empirical_w1_to_normal, DistanceEstimate};
use crate::error::{Error, Result};
use crate::mc_engine::{derive_seed, derive_stream, run_replicates, MCConfig, Replicate, Stream, StreamTag};
use crate::numerics::{legendre_rule, mean_and_variance, variance_standard_error};

const PIECE_NODES: usize = 16;
const BAND_NODES: usize = 32;
const TIME_NODES: usize = 32;
const MAX_GRADING: f64 = 64.0;
/// Default first sub-floor: small jumps are simulated exactly down to `eps / 64`.
pub const DEFAULT_FLOOR_DIVISOR: u32 = 64;
/// The floor is never pushed below `eps / 1024`.
pub const MAX_FLOOR_DIVISOR: u32 = 1024;

/// Subset of `R \ {0}` selected by jump size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Region {
    All,
    /// `|x| < eps`
    Small(f64),
    /// `|x| >= eps`
    Big(f64),
}

impl Region {
    fn band(self) -> (f64, f64) {
        match self {
            Region::All => (0.0, f64::INFINITY),
            Region::Small(eps) => (0.0, eps),
            Region::Big(eps) => (eps, f64::INFINITY),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum LevyMeasure {
    /// Point masses `w_i` at `x_i`.
    Atoms { atoms: Vec<(f64, f64)> },
    /// Density `|x|^{-(2+delta)}` on `[-a, b] \ {0}`.
    TruncatedPowerLaw { delta: f64, a: f64, b: f64 },
    /// Piecewise-linear density through `(x_i, density_i)`, zero outside.
    TabulatedDensity { xs: Vec<f64>, densities: Vec<f64> },
}

// Linear density piece on [x0, x1] with x0 * x1 >= 0.
#[derive(Debug, Clone, Copy)]
struct Piece {
    x0: f64,
    x1: f64,
    d0: f64,
    d1: f64,
}

impl Piece {
    fn at(&self, x: f64) -> f64 {
        let w = (x - self.x0) / (self.x1 - self.x0);
        self.d0 + (self.d1 - self.d0) * w
    }

    /// The part of the piece with `lo <= |x| < hi`.
    fn clip(&self, lo: f64, hi: f64) -> Option<Piece> {
        let (alo, ahi) = if self.x0 >= 0.0 { (self.x0, self.x1) } else { (-self.x1, -self.x0) };
        let (l, u) = (alo.max(lo), ahi.min(hi));
        if !(u > l) {
            return None;
        }
        let (x0, x1) = if self.x0 >= 0.0 { (l, u) } else { (-u, -l) };
        Some(Piece { x0, x1, d0: self.at(x0), d1: self.at(x1) })
    }

    fn mass(&self) -> f64 {
        0.5 * (self.d0 + self.d1) * (self.x1 - self.x0)
    }

    fn sample(&self, u: f64) -> f64 {
        // Invert the quadratic CDF of a linear density.
        let target = u * 0.5 * (self.d0 + self.d1);
        let a = 0.5 * (self.d1 - self.d0);
        let b = self.d0;
        let disc = (b * b + 4.0 * a * target).max(0.0);
        let frac = if b + disc.sqrt() > 0.0 { 2.0 * target / (b + disc.sqrt()) } else { u };
        self.x0 + frac.clamp(0.0, 1.0) * (self.x1 - self.x0)
    }
}

impl LevyMeasure {
    pub fn atoms(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Validation("atom list is empty".into()));
        }
        for &(x, w) in &atoms {
            if x == 0.0 || !x.is_finite() {
                return Err(Error::Validation(format!("atom location must be finite and nonzero, got {x}")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Validation(format!("atom weight must be positive, got {w}")));
            }
        }
        Ok(LevyMeasure::Atoms { atoms })
    }

    /// `{(-1, 1/2), (1, 1/2)}`: unit second, third and fourth moments.
    pub fn symmetric_unit_atoms() -> Self {
        LevyMeasure::Atoms { atoms: vec![(-1.0, 0.5), (1.0, 0.5)] }
    }

    pub fn power_law(delta: f64, a: f64, b: f64) -> Result<Self> {
        if !(delta > -1.0 && delta < 1.0) {
            return Err(Error::Domain(format!("delta must lie in (-1, 1), got {delta}")));
        }
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::Domain(format!("a and b must be positive, got {a} and {b}")));
        }
        Ok(LevyMeasure::TruncatedPowerLaw { delta, a, b })
    }

    pub fn tabulated(xs: Vec<f64>, densities: Vec<f64>) -> Result<Self> {
        if xs.len() != densities.len() || xs.len() < 2 {
            return Err(Error::Usage("tabulated density needs >= 2 (x, density) pairs".into()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) || xs.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("x values must be finite and strictly increasing".into()));
        }
        if densities.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(Error::Validation("densities must be finite and nonnegative".into()));
        }
        Ok(LevyMeasure::TabulatedDensity { xs, densities })
    }

    fn pieces(xs: &[f64], densities: &[f64]) -> Vec<Piece> {
        let mut out = Vec::with_capacity(xs.len());
        for (x, d) in xs.windows(2).zip(densities.windows(2)) {
            let p = Piece { x0: x[0], x1: x[1], d0: d[0], d1: d[1] };
            if p.x0 < 0.0 && p.x1 > 0.0 {
                let d_zero = p.at(0.0);
                out.push(Piece { x0: p.x0, x1: 0.0, d0: p.d0, d1: d_zero });
                out.push(Piece { x0: 0.0, x1: p.x1, d0: d_zero, d1: p.d1 });
            } else {
                out.push(p);
            }
        }
        out
    }

    fn clipped_pieces(&self, lo: f64, hi: f64) -> Vec<Piece> {
        match self {
            LevyMeasure::TabulatedDensity { xs, densities } => {
                Self::pieces(xs, densities).iter().filter_map(|p| p.clip(lo, hi)).collect()
            }
            _ => Vec::new(),
        }
    }

    /// Nodes `x_i` with `nu`-weights so that `int_band g dnu ~ sum w_i g(x_i)`.
    /// Accurate for integrands vanishing like `x^2` at the origin.
    pub fn band_rule(&self, lo: f64, hi: f64) -> Vec<(f64, f64)> {
        match self {
            LevyMeasure::Atoms { atoms } => atoms
                .iter()
                .filter(|(x, _)| x.abs() >= lo && x.abs() < hi)
                .copied()
                .collect(),
            LevyMeasure::TruncatedPowerLaw { delta, a, b } => {
                let rule = legendre_rule(BAND_NODES);
                let mut out = Vec::new();
                for (side, sign) in [(*a, -1.0), (*b, 1.0)] {
                    let (l, u) = (lo, hi.min(side));
                    if !(u > l) {
                        continue;
                    }
                    // x = l + (u - l) v^q, graded at the origin when l = 0
                    let q = if l == 0.0 { (8.0 / (1.0 - delta)).ceil().clamp(4.0, MAX_GRADING) } else { 1.0 };
                    for (t, w) in rule.nodes.iter().zip(&rule.weights) {
                        let v: f64 = 0.5 * (t + 1.0);
                        let x = l + (u - l) * v.powf(q);
                        let jac = (u - l) * q * v.powf(q - 1.0);
                        out.push((sign * x, 0.5 * w * jac * x.powf(-(2.0 + delta))));
                    }
                }
                out
            }
            LevyMeasure::TabulatedDensity { .. } => {
                let rule = legendre_rule(PIECE_NODES);
                let mut out = Vec::new();
                for p in self.clipped_pieces(lo, hi) {
                    let (half, mid) = (0.5 * (p.x1 - p.x0), 0.5 * (p.x1 + p.x0));
                    for (t, w) in rule.nodes.iter().zip(&rule.weights) {
                        let x = mid + half * t;
                        out.push((x, w * half * p.at(x)));
                    }
                }
                out
            }
        }
    }

    /// `int_{lo <= |x| < hi} |x|^p dnu`.
    pub fn band_moment(&self, p: f64, lo: f64, hi: f64) -> Result<f64> {
        match self {
            LevyMeasure::Atoms { atoms } => Ok(atoms
                .iter()
                .filter(|(x, _)| x.abs() >= lo && x.abs() < hi)
                .map(|(x, w)| w * x.abs().powf(p))
                .sum()),
            LevyMeasure::TruncatedPowerLaw { delta, a, b } => {
                let e = p - 1.0 - delta;
                let mut acc = 0.0;
                for side in [*a, *b] {
                    let (l, u) = (lo, hi.min(side));
                    if !(u > l) {
                        continue;
                    }
                    if l == 0.0 && e <= 0.0 {
                        return Err(Error::Divergent(format!(
                            "int |x|^{p} dnu diverges at the origin for delta = {delta} (needs p > 1 + delta)"
                        )));
                    }
                    acc += if e == 0.0 { (u / l).ln() } else { (u.powf(e) - l.powf(e)) / e };
                }
                Ok(acc)
            }
            LevyMeasure::TabulatedDensity { .. } => {
                let rule = legendre_rule(PIECE_NODES);
                Ok(self
                    .clipped_pieces(lo, hi)
                    .iter()
                    .map(|pc| {
                        let (half, mid) = (0.5 * (pc.x1 - pc.x0), 0.5 * (pc.x1 + pc.x0));
                        rule.nodes
                            .iter()
                            .zip(&rule.weights)
                            .map(|(t, w)| {
                                let x = mid + half * t;
                                w * half * pc.at(x) * x.abs().powf(p)
                            })
                            .sum::<f64>()
                    })
                    .sum())
            }
        }
    }

    /// `int_{lo <= |x| < hi} x dnu`.
    pub fn band_signed_mean(&self, lo: f64, hi: f64) -> Result<f64> {
        match self {
            LevyMeasure::Atoms { atoms } => Ok(atoms
                .iter()
                .filter(|(x, _)| x.abs() >= lo && x.abs() < hi)
                .map(|(x, w)| w * x)
                .sum()),
            LevyMeasure::TruncatedPowerLaw { delta, a, b } => {
                let neg = LevyMeasure::TruncatedPowerLaw { delta: *delta, a: *a, b: f64::MIN_POSITIVE };
                let pos = LevyMeasure::TruncatedPowerLaw { delta: *delta, a: f64::MIN_POSITIVE, b: *b };
                Ok(pos.band_moment(1.0, lo, hi)? - neg.band_moment(1.0, lo, hi)?)
            }
            LevyMeasure::TabulatedDensity { .. } => {
                Ok(self.band_rule(lo, hi).iter().map(|(x, w)| x * w).sum())
            }
        }
    }

    /// `nu({x' <= x} and lo <= |x'| < hi)` divided by the band mass.
    pub fn band_cdf(&self, lo: f64, hi: f64, x: f64) -> Result<f64> {
        let total = self.band_moment(0.0, lo, hi)?;
        if !(total > 0.0) {
            return Err(Error::Domain("band carries no mass".into()));
        }
        let below = match self {
            LevyMeasure::Atoms { atoms } => atoms
                .iter()
                .filter(|(y, _)| y.abs() >= lo && y.abs() < hi && *y <= x)
                .map(|(_, w)| w)
                .sum(),
            LevyMeasure::TruncatedPowerLaw { delta, a, b } => {
                let neg = LevyMeasure::TruncatedPowerLaw { delta: *delta, a: *a, b: f64::MIN_POSITIVE };
                let pos = LevyMeasure::TruncatedPowerLaw { delta: *delta, a: f64::MIN_POSITIVE, b: *b };
                if x < 0.0 {
                    neg.band_moment(0.0, lo.max(-x), hi)?
                } else {
                    neg.band_moment(0.0, lo, hi)? + pos.band_moment(0.0, lo, hi)?
                        - pos.band_moment(0.0, lo.max(x), hi)?
                }
            }
            LevyMeasure::TabulatedDensity { .. } => self
                .clipped_pieces(lo, hi)
                .iter()
                .map(|p| {
                    if x >= p.x1 {
                        p.mass()
                    } else if x <= p.x0 {
                        0.0
                    } else {
                        Piece { x0: p.x0, x1: x, d0: p.d0, d1: p.at(x) }.mass()
                    }
                })
                .sum(),
        };
        Ok((below / total).clamp(0.0, 1.0))
    }

    /// A band sampler drawing from `nu` restricted to `lo <= |x| < hi`, normalized.
    pub fn band_sampler(&self, lo: f64, hi: f64) -> Result<BandSampler> {
        let mass = self.band_moment(0.0, lo, hi)?;
        let inner = match self {
            LevyMeasure::Atoms { atoms } => {
                let chosen: Vec<(f64, f64)> =
                    atoms.iter().filter(|(x, _)| x.abs() >= lo && x.abs() < hi).copied().collect();
                if chosen.is_empty() {
                    SamplerKind::Empty
                } else {
                    let index = WeightedIndex::new(chosen.iter().map(|(_, w)| *w))
                        .map_err(|e| Error::Sampling(format!("atom weights: {e}")))?;
                    SamplerKind::Atoms { values: chosen.iter().map(|(x, _)| *x).collect(), index }
                }
            }
            LevyMeasure::TruncatedPowerLaw { delta, a, b } => {
                let k = 1.0 + delta;
                let mut sides = Vec::new();
                for (side, sign) in [(*a, -1.0), (*b, 1.0)] {
                    let (l, u) = (lo, hi.min(side));
                    if u > l {
                        if l == 0.0 {
                            return Err(Error::Divergent("infinite mass near the origin cannot be sampled".into()));
                        }
                        sides.push((sign, l, u, (l.powf(-k) - u.powf(-k)) / k));
                    }
                }
                if sides.is_empty() {
                    SamplerKind::Empty
                } else {
                    let index = WeightedIndex::new(sides.iter().map(|s| s.3))
                        .map_err(|e| Error::Sampling(format!("power-law sides: {e}")))?;
                    SamplerKind::PowerLaw { k, sides: sides.iter().map(|s| (s.0, s.1, s.2)).collect(), index }
                }
            }
            LevyMeasure::TabulatedDensity { .. } => {
                let pieces: Vec<Piece> =
                    self.clipped_pieces(lo, hi).into_iter().filter(|p| p.mass() > 0.0).collect();
                if pieces.is_empty() {
                    SamplerKind::Empty
                } else {
                    let index = WeightedIndex::new(pieces.iter().map(Piece::mass))
                        .map_err(|e| Error::Sampling(format!("density pieces: {e}")))?;
                    SamplerKind::Pieces { pieces, index }
                }
            }
        };
        Ok(BandSampler { mass, inner })
    }
}

enum SamplerKind {
    Empty,
    Atoms { values: Vec<f64>, index: WeightedIndex<f64> },
    PowerLaw { k: f64, sides: Vec<(f64, f64, f64)>, index: WeightedIndex<f64> },
    Pieces { pieces: Vec<Piece>, index: WeightedIndex<f64> },
}

/// Draws jump sizes from a normalized band of a measure.
pub struct BandSampler {
    mass: f64,
    inner: SamplerKind,
}

impl BandSampler {
    /// `nu` of the band.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn sample(&self, rng: &mut Stream) -> f64 {
        match &self.inner {
            SamplerKind::Empty => 0.0,
            SamplerKind::Atoms { values, index } => values[index.sample(rng)],
            SamplerKind::PowerLaw { k, sides, index } => {
                let (sign, l, u) = sides[index.sample(rng)];
                let v: f64 = rng.random();
                // inverse CDF of x^{-(1+k)} on [l, u]
                let lk = l.powf(-k);
                sign * (lk - v * (lk - u.powf(-k))).powf(-1.0 / k)
            }
            SamplerKind::Pieces { pieces, index } => pieces[index.sample(rng)].sample(rng.random()),
        }
    }

    /// A compound-Poisson path of this band on `[0, horizon]`, sorted by time.
    pub fn path(&self, horizon: f64, rng: &mut Stream) -> Result<(Vec<f64>, Vec<f64>)> {
        let rate = self.mass * horizon;
        if !(rate > 0.0) {
            return Ok((Vec::new(), Vec::new()));
        }
        let count = Poisson::new(rate).map_err(|e| Error::Sampling(format!("Poisson({rate}): {e}")))?;
        let n = count.sample(rng) as usize;
        let mut times: Vec<f64> = (0..n).map(|_| horizon * rng.random::<f64>()).collect();
        times.sort_by(|a, b| a.total_cmp(b));
        let sizes = (0..n).map(|_| self.sample(rng)).collect();
        Ok((times, sizes))
    }
}

/// `int_region |x|^p dnu`.
pub fn measure_moment(measure: &LevyMeasure, p: f64, region: Region) -> Result<f64> {
    if !(p >= 0.0) {
        return Err(Error::Domain(format!("moment order must be >= 0, got {p}")));
    }
    let (lo, hi) = region.band();
    measure.band_moment(p, lo, hi)
}

/// `int_region x dnu`.
pub fn signed_first_moment(measure: &LevyMeasure, region: Region) -> Result<f64> {
    let (lo, hi) = region.band();
    measure.band_signed_mean(lo, hi)
}

/// `sigma^(eps)^2 = int_{|x|<eps} x^2 dnu`.
pub fn small_jump_variance(measure: &LevyMeasure, eps: f64) -> Result<f64> {
    measure_moment(measure, 2.0, Region::Small(eps))
}

/// `int_{|x|<eps} |x|^3 dnu / sigma^(eps)^3`.
pub fn third_moment_ratio(measure: &LevyMeasure, eps: f64) -> Result<f64> {
    check_epsilon(eps)?;
    let s2 = small_jump_variance(measure, eps)?;
    if !(s2 > 0.0) {
        return Err(Error::NoSmallJumps(eps));
    }
    Ok(measure_moment(measure, 3.0, Region::Small(eps))? / s2.powf(1.5))
}

/// `sigma^(eps) / eps`; growing without bound as `eps -> 0` is sufficient for
/// the Gaussian small-jump approximation.
pub fn sigma_over_epsilon(measure: &LevyMeasure, eps: f64) -> Result<f64> {
    check_epsilon(eps)?;
    Ok(small_jump_variance(measure, eps)?.sqrt() / eps)
}

fn check_epsilon(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("epsilon must be positive, got {eps}")))
    }
}

/// Time nodes and weights of a Gauss–Legendre rule on `[0, t]`.
fn time_rule(t: f64) -> Vec<(f64, f64)> {
    let rule = legendre_rule(TIME_NODES);
    rule.nodes.iter().zip(&rule.weights).map(|(x, w)| (0.5 * t * (x + 1.0), 0.5 * t * w)).collect()
}

/// `int int_{[0,t] x {|x|<eps}} |x h(s,x)|^3 dnu ds / sigma~_t(eps)^3` with
/// `sigma~_t(eps)^2 = int int h^2 x^2 dnu ds`, by tensor-product quadrature.
pub fn weighted_small_jump_condition(
    measure: &LevyMeasure,
    h: &(dyn Fn(f64, f64) -> f64 + Sync),
    t: f64,
    eps: f64,
) -> Result<f64> {
    check_epsilon(eps)?;
    let xs = measure.band_rule(0.0, eps);
    let (mut cube, mut square) = (0.0, 0.0);
    for (s, ws) in time_rule(t) {
        for &(x, wx) in &xs {
            let v = (x * h(s, x)).abs();
            cube += ws * wx * v * v * v;
            square += ws * wx * v * v;
        }
    }
    if !(square > 0.0) {
        return Err(Error::NoSmallJumps(eps));
    }
    Ok(cube / square.powf(1.5))
}

/// Jumps of size at least `epsilon` on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpPath {
    pub times: Vec<f64>,
    pub sizes: Vec<f64>,
    pub epsilon: f64,
    pub horizon: f64,
    pub seed: u64,
}

/// Compound-Poisson jumps above `epsilon` drawn from the stream `(seed, 0, Poisson)`.
pub fn sample_big_jumps(measure: &LevyMeasure, epsilon: f64, horizon: f64, seed: u64) -> Result<JumpPath> {
    let mut rng = derive_stream(seed, 0, StreamTag::Poisson);
    sample_big_jumps_with(measure, epsilon, horizon, seed, &mut rng)
}

/// [`sample_big_jumps`] drawing from a caller-supplied stream.
pub fn sample_big_jumps_with(
    measure: &LevyMeasure,
    epsilon: f64,
    horizon: f64,
    seed: u64,
    rng: &mut Stream,
) -> Result<JumpPath> {
    check_epsilon(epsilon)?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
    }
    let sampler = measure.band_sampler(epsilon, f64::INFINITY)?;
    let (times, sizes) = sampler.path(horizon, rng)?;
    Ok(JumpPath { times, sizes, epsilon, horizon, seed })
}

/// Result of the small-jump experiment at one `epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmallJumpRow {
    pub epsilon: f64,
    pub dw: DistanceEstimate,
    /// Jumps below `epsilon / floor_divisor` were replaced by a Gaussian.
    pub floor_divisor: u32,
    pub third_moment_ratio: f64,
    pub weighted_ratio: f64,
    pub sample_variance: f64,
    pub sample_variance_se: f64,
    pub n: usize,
    pub seed: u64,
}

impl SmallJumpRow {
    pub const CSV_HEADER: [&'static str; 4] = ["epsilon", "dW", "se", "n"];
}

// One dyadic slice eps 2^{-(k+1)} <= |x| < eps 2^{-k} of the small jumps.
struct Slice {
    sampler: BandSampler,
    compensator: f64,
}

fn standardized_small_jumps(
    slices: &[Slice],
    remainder_sd: f64,
    h: &(dyn Fn(f64, f64) -> f64 + Sync),
    t: f64,
    scale: f64,
    rep: &Replicate,
) -> Result<f64> {
    let mut acc = 0.0;
    for (k, slice) in slices.iter().enumerate() {
        let mut rng = rep.stream(StreamTag::Custom(0x51ce_0000 + k as u64));
        let (times, sizes) = slice.sampler.path(t, &mut rng)?;
        acc += times.iter().zip(&sizes).map(|(s, x)| x * h(*s, *x)).sum::<f64>() - slice.compensator;
    }
    let z: f64 = StandardNormal.sample(&mut rep.stream(StreamTag::Wiener));
    Ok((acc + remainder_sd * z) / scale)
}

fn small_jump_samples(
    measure: &LevyMeasure,
    h: &(dyn Fn(f64, f64) -> f64 + Sync),
    t: f64,
    eps: f64,
    divisor: u32,
    config: &MCConfig,
) -> Result<Vec<f64>> {
    let times = time_rule(t);
    let weighted = |lo: f64, hi: f64, g: &dyn Fn(f64, f64) -> f64| -> f64 {
        let xs = measure.band_rule(lo, hi);
        times.iter().map(|&(s, ws)| xs.iter().map(|&(x, wx)| ws * wx * g(s, x)).sum::<f64>()).sum()
    };
    let total_var = weighted(0.0, eps, &|s, x| (x * h(s, x)).powi(2));
    if !(total_var > 0.0) {
        return Err(Error::NoSmallJumps(eps));
    }
    let floor = eps / divisor as f64;
    let remainder_var = weighted(0.0, floor, &|s, x| (x * h(s, x)).powi(2));
    let mut slices = Vec::new();
    let mut hi = eps;
    while hi > floor * (1.0 + 1e-12) {
        let lo = (hi / 2.0).max(floor);
        slices.push(Slice {
            sampler: measure.band_sampler(lo, hi)?,
            compensator: weighted(lo, hi, &|s, x| x * h(s, x)),
        });
        hi = lo;
    }
    let scale = total_var.sqrt();
    let sd = remainder_var.max(0.0).sqrt();
    run_replicates(config, |rep| standardized_small_jumps(&slices, sd, h, t, scale, rep))
}

/// For each `epsilon`, `n` draws of the standardized compensated small-jump
/// integral `sigma~_t(eps)^{-1} int int_{|x|<eps} x h(s,x) N~(ds,dx)` and their
/// W1 distance to `N(0,1)`.
///
/// Jumps are simulated exactly in dyadic slices down to `eps / 64`; the rest is
/// a Gaussian of matching variance. The floor is halved until `d_W` moves by
/// less than its standard error (at most down to `eps / 1024`).
pub fn small_jump_clt_experiment(
    measure: &LevyMeasure,
    h: &(dyn Fn(f64, f64) -> f64 + Sync),
    t: f64,
    epsilons: &[f64],
    config: &MCConfig,
) -> Result<Vec<SmallJumpRow>> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("t must be positive, got {t}")));
    }
    if config.n_replicates < 2 {
        return Err(Error::Usage("need at least 2 replicates".into()));
    }
    let mut rows = Vec::with_capacity(epsilons.len());
    for (j, &eps) in epsilons.iter().enumerate() {
        let ratio = third_moment_ratio(measure, eps)?;
        let weighted_ratio = weighted_small_jump_condition(measure, h, t, eps)?;
        let seed = derive_seed(config.master_seed, j as u64, StreamTag::Custom(0x5a11));
        let cfg = config.with_seed(seed);
        let mut divisor = DEFAULT_FLOOR_DIVISOR;
        let mut samples = small_jump_samples(measure, h, t, eps, divisor, &cfg)?;
        let mut dw = empirical_w1_to_normal(&samples, 0.0, 1.0)?;
        while divisor < MAX_FLOOR_DIVISOR {
            let next = small_jump_samples(measure, h, t, eps, 2 * divisor, &cfg)?;
            let next_dw = empirical_w1_to_normal(&next, 0.0, 1.0)?;
            divisor *= 2;
            let stable = (next_dw.value - dw.value).abs() <= next_dw.standard_error;
            samples = next;
            dw = next_dw;
            if stable {
                break;
            }
        }
        let (_, var) = mean_and_variance(&samples);
        rows.push(SmallJumpRow {
            epsilon: eps,
            dw,
            floor_divisor: divisor,
            third_moment_ratio: ratio,
            weighted_ratio,
            sample_variance: var,
            sample_variance_se: variance_standard_error(&samples),
            n: samples.len(),
            seed,
        });
    }
    Ok(rows)
}

/// Draws of the first-chaos functional `int int_{|x|>=eps} x h(s,x) N~(ds,dx)`
/// over `[0, t]`, together with its exact variance `int int h^2 x^2 dnu ds`.
pub fn big_jump_first_chaos(
    measure: &LevyMeasure,
    h: &(dyn Fn(f64, f64) -> f64 + Sync),
    t: f64,
    eps: f64,
    config: &MCConfig,
) -> Result<(Vec<f64>, f64)> {
    check_epsilon(eps)?;
    let sampler = measure.band_sampler(eps, f64::INFINITY)?;
    let xs = measure.band_rule(eps, f64::INFINITY);
    let times = time_rule(t);
    let integrate = |g: &dyn Fn(f64, f64) -> f64| -> f64 {
        times.iter().map(|&(s, ws)| xs.iter().map(|&(x, wx)| ws * wx * g(s, x)).sum::<f64>()).sum()
    };
    let compensator = integrate(&|s, x| x * h(s, x));
    let variance = integrate(&|s, x| (x * h(s, x)).powi(2));
    let samples = run_replicates(config, |rep| {
        let (ts, sizes) = sampler.path(t, &mut rep.stream(StreamTag::Poisson))?;
        Ok(ts.iter().zip(&sizes).map(|(s, x)| x * h(*s, *x)).sum::<f64>() - compensator)
    })?;
    Ok((samples, variance))
}
