//! Seeded, thread-count-independent Monte Carlo.
//!
//! Samples are split into fixed-size batches. Batch `b` draws from ChaCha
//! stream `b` of the master seed, so the random numbers a sample sees never
//! depend on how rayon schedules work. Batch results are merged in index
//! order, which makes every estimate bitwise reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const BATCH_SIZE: usize = 1024;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a path of substream labels
/// (module tag, grid index, trajectory index, ...).
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(mix64(master), |acc, &label| mix64(acc ^ mix64(label)))
}

/// Tags for the named substreams used across the crate.
pub mod streams {
    pub const FORWARD: u64 = 1;
    pub const REVERSE: u64 = 2;
    pub const ENTROPY: u64 = 3;
    pub const DIVERGENCE: u64 = 4;
    pub const LOSS: u64 = 5;
    pub const GAME: u64 = 6;
    pub const FISHER: u64 = 7;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Running mean and variance (Welford), mergeable with Chan's formula.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        (self.variance() / self.n as f64).sqrt()
    }

    pub fn estimate(&self) -> Estimate {
        Estimate {
            value: self.mean,
            stderr: self.stderr(),
        }
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, stderr: 0.0 }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Estimate {
            value: self.value * factor,
            stderr: self.stderr * factor.abs(),
        }
    }

    /// Standard error of the difference, treating the two as independent.
    pub fn combined_stderr(&self, other: &Estimate) -> f64 {
        self.stderr.hypot(other.stderr)
    }

    /// |a - b| measured in combined standard errors.
    pub fn z_distance(&self, other: &Estimate) -> f64 {
        let se = self.combined_stderr(other);
        let diff = (self.value - other.value).abs();
        if se == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / se
        }
    }
}

/// Runs `n_samples` draws of `sample` in parallel and accumulates the `N`
/// statistics it returns per draw.
pub fn parallel_moments<const N: usize, F>(
    n_samples: usize,
    seed: u64,
    sample: F,
) -> Result<[Moments; N]>
where
    F: Fn(&mut ChaCha8Rng) -> Result<[f64; N]> + Sync,
{
    let n_batches = n_samples.div_ceil(BATCH_SIZE);
    let batches: Vec<Result<[Moments; N]>> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b as u64);
            let len = BATCH_SIZE.min(n_samples - b * BATCH_SIZE);
            let mut acc = [Moments::default(); N];
            for _ in 0..len {
                let values = sample(&mut rng)?;
                for (m, v) in acc.iter_mut().zip(values) {
                    m.push(v);
                }
            }
            Ok(acc)
        })
        .collect();

    let mut total = [Moments::default(); N];
    for batch in batches {
        let batch = batch?;
        for (t, m) in total.iter_mut().zip(batch.iter()) {
            t.merge(m);
        }
    }
    Ok(total)
}
