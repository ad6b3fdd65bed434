//! Monte Carlo orchestration.
//!
//! Every replicate draws from its own stream, seeded by a SplitMix64-style
//! mix of `(master_seed, replicate_index, component_tag)`, so results never
//! depend on how replicates are scheduled. The generator behind a stream is
//! ChaCha8 (a counter-based cipher RNG); Gaussian variates come from
//! `rand_distr::StandardNormal`, which is the ziggurat method.
//!
//! Replicates run on a rayon pool of `workers` threads and are reduced in
//! index order with pairwise summation, so aggregates are bit-identical for
//! any worker count or chunk size.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::mean_and_variance;

pub type Stream = ChaCha8Rng;

/// Environment variable overriding the default worker count.
pub const WORKERS_ENV: &str = "SML_WORKERS";

/// Labels for the independent sub-streams of one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamTag {
    Path,
    Wiener,
    Poisson,
    Bootstrap,
    Custom(u64),
}

impl StreamTag {
    pub fn code(self) -> u64 {
        match self {
            StreamTag::Path => 0x5041_5448,
            StreamTag::Wiener => 0x5749_454e,
            StreamTag::Poisson => 0x504f_4953,
            StreamTag::Bootstrap => 0x424f_4f54,
            StreamTag::Custom(c) => c.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0xc0ff_ee00,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit seed for the sub-stream `(master_seed, index, tag)`.
pub fn derive_seed(master_seed: u64, index: u64, tag: StreamTag) -> u64 {
    let a = splitmix64(master_seed);
    let b = splitmix64(a ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03));
    splitmix64(b ^ tag.code().wrapping_mul(0xaef1_7502_108e_f2d9))
}

pub fn derive_stream(master_seed: u64, index: u64, tag: StreamTag) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(master_seed, index, tag))
}

/// Worker count from `SML_WORKERS`, falling back to the available parallelism.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&w| w >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MCConfig {
    pub n_replicates: usize,
    pub master_seed: u64,
    #[serde(skip)]
    pub workers: usize,
    #[serde(skip)]
    pub chunk: usize,
}

impl MCConfig {
    pub fn new(n_replicates: usize, master_seed: u64) -> Self {
        MCConfig { n_replicates, master_seed, workers: default_workers(), chunk: 64 }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_chunk(mut self, chunk: usize) -> Self {
        self.chunk = chunk;
        self
    }

    pub fn with_seed(mut self, master_seed: u64) -> Self {
        self.master_seed = master_seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_replicates == 0 {
            return Err(Error::Usage("n_replicates must be >= 1".into()));
        }
        if self.workers == 0 || self.chunk == 0 {
            return Err(Error::Usage("workers and chunk must be >= 1".into()));
        }
        Ok(())
    }
}

/// Handle given to a replicate task.
#[derive(Debug, Clone, Copy)]
pub struct Replicate {
    pub index: usize,
    pub master_seed: u64,
}

impl Replicate {
    pub fn stream(&self, tag: StreamTag) -> Stream {
        derive_stream(self.master_seed, self.index as u64, tag)
    }
}

/// Runs `task` for every replicate index and returns the outputs in index order.
pub fn run_replicates<T, F>(config: &MCConfig, task: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&Replicate) -> Result<T> + Sync,
{
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Numerical(format!("cannot start worker pool: {e}")))?;
    let indices: Vec<usize> = (0..config.n_replicates).collect();
    let seed = config.master_seed;
    let outcomes: Vec<Result<T>> = pool.install(|| {
        indices
            .par_chunks(config.chunk)
            .flat_map_iter(|chunk| {
                chunk.iter().map(|&index| task(&Replicate { index, master_seed: seed })).collect::<Vec<_>>()
            })
            .collect()
    });
    let mut values = Vec::with_capacity(outcomes.len());
    let mut failed = Vec::new();
    let mut first = None;
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(v) => values.push(v),
            Err(e) => {
                failed.push(i);
                first.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if failed.is_empty() {
        Ok(values)
    } else {
        Err(Error::PartialFailure { indices: failed, first: first.unwrap_or_default() })
    }
}

/// Means and standard errors of named per-replicate quantities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleResult {
    pub estimates: BTreeMap<String, f64>,
    pub standard_errors: BTreeMap<String, f64>,
    pub n: usize,
    pub manifest: Manifest,
}

/// Runs a task producing one value per name and aggregates mean and SE per name.
pub fn run_ensemble<F>(names: &[&str], config: &MCConfig, task: F) -> Result<EnsembleResult>
where
    F: Fn(&Replicate) -> Result<Vec<f64>> + Sync,
{
    let rows = run_replicates(config, |rep| {
        let row = task(rep)?;
        if row.len() != names.len() {
            return Err(Error::Usage(format!("task returned {} values for {} names", row.len(), names.len())));
        }
        Ok(row)
    })?;
    let mut estimates = BTreeMap::new();
    let mut standard_errors = BTreeMap::new();
    for (j, name) in names.iter().enumerate() {
        let column: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let (mean, var) = mean_and_variance(&column);
        estimates.insert(name.to_string(), mean);
        standard_errors.insert(name.to_string(), (var / column.len() as f64).sqrt());
    }
    let params = serde_json::json!({ "quantities": names });
    Ok(EnsembleResult {
        estimates,
        standard_errors,
        n: config.n_replicates,
        manifest: Manifest::new("ensemble", params, config),
    })
}

/// Reproducibility record written next to every result file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub parameters: serde_json::Value,
    pub n_replicates: usize,
    pub master_seed: u64,
    pub input_hash: String,
    pub crate_version: String,
    /// Seconds since the Unix epoch; the only field that differs between reruns.
    pub created_unix: u64,
}

impl Manifest {
    pub fn new(command: &str, parameters: serde_json::Value, config: &MCConfig) -> Self {
        let canonical = serde_json::json!({
            "command": command,
            "parameters": parameters,
            "n_replicates": config.n_replicates,
            "master_seed": config.master_seed,
        });
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Manifest {
            command: command.to_string(),
            parameters,
            n_replicates: config.n_replicates,
            master_seed: config.master_seed,
            input_hash: content_hash(canonical.to_string().as_bytes()),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix,
        }
    }
}

/// Git-style object hash (`"blob <len>\0" || bytes`) with SHA-256, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("blob {}\0", bytes.len()).as_bytes());
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Seed derived from the bit patterns of a sample; makes resampling pure in its input.
pub fn seed_from_samples(samples: &[f64]) -> u64 {
    samples.iter().fold(0x5eed_0f5a_3b1e_u64, |acc, v| splitmix64(acc ^ v.to_bits()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn equal_inputs_give_equal_streams() {
        let mut a = derive_stream(7, 3, StreamTag::Wiener);
        let mut b = derive_stream(7, 3, StreamTag::Wiener);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn tags_and_indices_separate_streams() {
        assert_ne!(derive_seed(7, 3, StreamTag::Wiener), derive_seed(7, 3, StreamTag::Poisson));
        assert_ne!(derive_seed(7, 0, StreamTag::Path), derive_seed(7, 1, StreamTag::Path));
        assert_ne!(derive_seed(7, 0, StreamTag::Path), derive_seed(8, 0, StreamTag::Path));
    }

    #[test]
    fn neighbouring_streams_are_uncorrelated() {
        let n = 1_000_000;
        let mut a = derive_stream(2024, 0, StreamTag::Path);
        let mut b = derive_stream(2024, 1, StreamTag::Path);
        let (mut sxy, mut sx, mut sy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(&mut a);
            let y: f64 = StandardNormal.sample(&mut b);
            sx += x;
            sy += y;
            sxy += x * y;
            sxx += x * x;
            syy += y * y;
        }
        let nf = n as f64;
        let cov = sxy / nf - sx * sy / nf / nf;
        let r = cov / ((sxx / nf - (sx / nf).powi(2)) * (syy / nf - (sy / nf).powi(2))).sqrt();
        assert!(r.abs() < 0.01, "r = {r}");
        // lag-1 serial correlation within one stream
        let mut c = derive_stream(2024, 0, StreamTag::Path);
        let mut prev: f64 = StandardNormal.sample(&mut c);
        let mut s = 0.0;
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(&mut c);
            s += prev * x;
            prev = x;
        }
        assert!((s / nf).abs() < 0.01);
    }

    #[test]
    fn constant_task() {
        let cfg = MCConfig::new(100, 1).with_workers(2);
        let res = run_ensemble(&["c"], &cfg, |_| Ok(vec![3.0])).unwrap();
        assert_eq!(res.estimates["c"], 3.0);
        assert_eq!(res.standard_errors["c"], 0.0);
        assert_eq!(res.n, 100);
    }

    fn normal_task(rep: &Replicate) -> Result<Vec<f64>> {
        let mut s = rep.stream(StreamTag::Path);
        let z: f64 = StandardNormal.sample(&mut s);
        Ok(vec![z, z * z])
    }

    #[test]
    fn scheduling_does_not_change_results() {
        let base = MCConfig::new(10_000, 99);
        let one = run_ensemble(&["z", "z2"], &base.with_workers(1), normal_task).unwrap();
        for (w, c) in [(2, 7), (8, 64), (8, 1000)] {
            let other = run_ensemble(&["z", "z2"], &base.with_workers(w).with_chunk(c), normal_task).unwrap();
            assert_eq!(one.estimates, other.estimates);
            assert_eq!(one.standard_errors, other.standard_errors);
        }
        assert!(one.estimates["z"].abs() < 4.0 / 100.0);
    }

    #[test]
    fn standard_error_scales_with_n() {
        let small = run_ensemble(&["z"], &MCConfig::new(2_500, 5), |r| Ok(vec![normal_task(r)?[0]])).unwrap();
        let large = run_ensemble(&["z"], &MCConfig::new(10_000, 5), |r| Ok(vec![normal_task(r)?[0]])).unwrap();
        let ratio = small.standard_errors["z"] / large.standard_errors["z"];
        assert!((ratio - 2.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn failures_are_reported_by_index() {
        let cfg = MCConfig::new(10, 1).with_workers(3).with_chunk(2);
        let err = run_replicates(&cfg, |r| {
            if r.index % 4 == 1 {
                Err(Error::Numerical("boom".into()))
            } else {
                Ok(r.index)
            }
        })
        .unwrap_err();
        match err {
            Error::PartialFailure { indices, .. } => assert_eq!(indices, vec![1, 5, 9]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hashing_is_stable() {
        // git hash-object equivalent structure, sha256 flavour
        assert_eq!(content_hash(b"abc"), content_hash(b"abc"));
        assert_ne!(content_hash(b"abc"), content_hash(b"abd"));
        assert_eq!(content_hash(b"").len(), 64);
    }
}
