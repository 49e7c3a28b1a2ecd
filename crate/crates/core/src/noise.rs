//! Counter-addressed Wiener increments.
//!
//! Every Gaussian draw is a pure function of `(master seed, purpose, fork,
//! stream, counter)`: the key selects a ChaCha8 keystream, the stream index
//! selects the ChaCha nonce and the step counter fixes the word position. Each
//! particle owns one stream; the common noise lives on a reserved stream that
//! no particle index can reach, so its realization does not depend on `N`.

use crate::error::{Error, Result};
use crate::vector::Vector;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Stream index of the common noise.
pub const COMMON_STREAM: u64 = u64::MAX;

/// 32-bit ChaCha words reserved per (stream, counter) slot.
const WORDS_PER_SLOT: u128 = 16;

#[derive(Clone, Copy, Debug)]
#[repr(u64)]
enum Purpose {
    Increment = 1,
    Initial = 2,
    Fork = 3,
    Replica = 4,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Idiosyncratic diffusivity σ.
    pub sigma: f64,
    /// Common diffusivity σ̄.
    pub sigma_bar: f64,
    pub master_seed: u64,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma >= 0.0 && self.sigma_bar >= 0.0 && self.sigma.is_finite() && self.sigma_bar.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "noise strengths must be finite and nonnegative, got sigma = {}, sigma_bar = {}",
                self.sigma, self.sigma_bar
            )))
        }
    }
}

/// Wiener increments of one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct Increments {
    /// One row per particle.
    pub db: Vec<Vector>,
    pub dw: Vector,
}

#[derive(Clone, Debug)]
pub struct NoiseStreams {
    master_seed: u64,
    dim: usize,
    idio_fork: u64,
    init_fork: u64,
    substeps: u64,
    particle_keys: Option<Arc<[u64]>>,
}

fn key(master_seed: u64, purpose: Purpose, fork: u64) -> [u8; 32] {
    let mut k = [0u8; 32];
    k[..8].copy_from_slice(&master_seed.to_le_bytes());
    k[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    k[16..24].copy_from_slice(&fork.to_le_bytes());
    k
}

fn keystream(key: [u8; 32], stream: u64, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng.set_word_pos(counter as u128 * WORDS_PER_SLOT);
    rng
}

/// Uniform in (0, 1].
#[inline]
fn open_unit(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in [0, 1).
#[inline]
fn closed_unit(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Four standard normals by Box–Muller from exactly four 64-bit words.
fn normal_block(key: [u8; 32], stream: u64, counter: u64) -> [f64; 4] {
    let mut rng = keystream(key, stream, counter);
    let mut out = [0.0; 4];
    for pair in out.chunks_exact_mut(2) {
        let u1 = open_unit(rng.next_u64());
        let u2 = closed_unit(rng.next_u64());
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        pair[0] = r * c;
        pair[1] = r * s;
    }
    out
}

fn uniform_block(key: [u8; 32], stream: u64, counter: u64) -> [f64; 4] {
    let mut rng = keystream(key, stream, counter);
    [(); 4].map(|_| closed_unit(rng.next_u64()))
}

fn derive(master_seed: u64, purpose: Purpose, parent: u64, component: u64) -> u64 {
    keystream(key(master_seed, purpose, parent), component, 0).next_u64()
}

/// Independent master seed for replica `r` of an experiment.
pub fn replica_seed(base_seed: u64, tag: u64, replica: u64) -> u64 {
    keystream(key(base_seed, Purpose::Replica, tag), replica, 0).next_u64()
}

impl NoiseStreams {
    pub fn new(master_seed: u64, dim: usize) -> Self {
        NoiseStreams { master_seed, dim, idio_fork: 0, init_fork: 0, substeps: 1, particle_keys: None }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Assigns stream `keys[i]` to particle `i` instead of stream `i`.
    pub fn with_particle_keys(mut self, keys: Vec<u64>) -> Self {
        self.particle_keys = Some(keys.into());
        self
    }

    /// Builds step `k` from the `m` fine draws `k·m .. k·m + m − 1`, so that a
    /// run at step `dt` sees the summed increments of a run at `dt / m`.
    pub fn with_substeps(mut self, m: u64) -> Self {
        assert!(m >= 1, "substep count must be positive");
        self.substeps = m;
        self
    }

    fn coarse(&self, key: [u8; 32], stream: u64, k: u64) -> [f64; 4] {
        if self.substeps == 1 {
            return normal_block(key, stream, k);
        }
        let mut acc = [0.0; 4];
        for j in 0..self.substeps {
            let z = normal_block(key, stream, k * self.substeps + j);
            for (a, b) in acc.iter_mut().zip(z) {
                *a += b;
            }
        }
        acc.map(|a| a / (self.substeps as f64).sqrt())
    }

    fn particle_stream(&self, i: usize) -> u64 {
        match &self.particle_keys {
            Some(k) => k[i],
            None => i as u64,
        }
    }

    fn to_vector(&self, z: &[f64; 4], scale: f64) -> Vector {
        let mut out = Vector::ZERO;
        for c in 0..self.dim {
            out[c] = z[c] * scale;
        }
        out
    }

    /// Standardized idiosyncratic draw of particle `i` at step `k`.
    pub fn idiosyncratic_normal(&self, i: usize, k: u64) -> Vector {
        let z = self.coarse(key(self.master_seed, Purpose::Increment, self.idio_fork), self.particle_stream(i), k);
        self.to_vector(&z, 1.0)
    }

    /// Standardized common draw at step `k`.
    pub fn common_normal(&self, k: u64) -> Vector {
        let z = self.coarse(key(self.master_seed, Purpose::Increment, 0), COMMON_STREAM, k);
        self.to_vector(&z, 1.0)
    }

    /// Increments `ΔB^1..ΔB^N` and `ΔW̄` of step `k`, each entry `N(0, dt)`.
    pub fn sample_increments(&self, k: u64, dt: f64, n: usize) -> Increments {
        let s = dt.sqrt();
        let db = (0..n).into_par_iter().map(|i| self.idiosyncratic_normal(i, k) * s).collect();
        Increments { db, dw: self.common_normal(k) * s }
    }

    /// Same common stream, fresh idiosyncratic streams.
    pub fn fork_idiosyncratic(&self, component: u64) -> Self {
        let mut out = self.clone();
        out.idio_fork = derive(self.master_seed, Purpose::Fork, self.idio_fork, component);
        out
    }

    /// Same noise, fresh initial-condition draws.
    pub fn fork_initial(&self, component: u64) -> Self {
        let mut out = self.clone();
        out.init_fork = derive(self.master_seed, Purpose::Fork, self.init_fork ^ 0x5eed, component);
        out
    }

    /// Standard normals for the initial condition of particle `i`.
    pub fn initial_normals(&self, i: usize, block: u64) -> [f64; 4] {
        normal_block(key(self.master_seed, Purpose::Initial, self.init_fork), self.particle_stream(i), block)
    }

    /// Uniforms in [0, 1) for the initial condition of particle `i`.
    pub fn initial_uniforms(&self, i: usize, block: u64) -> [f64; 4] {
        uniform_block(key(self.master_seed, Purpose::Initial, self.init_fork), self.particle_stream(i), block)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn increments_scale_with_sqrt_dt() {
        let s = NoiseStreams::new(3, 2);
        let a = s.sample_increments(17, 0.01, 5);
        let b = s.sample_increments(17, 0.0025, 5);
        for (x, y) in a.db.iter().zip(&b.db) {
            assert!((*x - *y * 2.0).norm() <= 1e-15);
        }
        assert!((a.dw - b.dw * 2.0).norm() <= 1e-15);
        assert_eq!(a.db[0][2], 0.0);
    }

    #[test]
    fn common_stream_is_independent_of_particle_count() {
        let s = NoiseStreams::new(99, 3);
        for k in 0..50 {
            let a = s.sample_increments(k, 1e-3, 64);
            let b = s.sample_increments(k, 1e-3, 128);
            assert_eq!(a.dw, b.dw);
            assert_eq!(a.db[..], b.db[..64]);
        }
    }

    #[test]
    fn reproducible_and_seed_sensitive() {
        let a = NoiseStreams::new(1, 2).sample_increments(4, 0.1, 8);
        let b = NoiseStreams::new(1, 2).sample_increments(4, 0.1, 8);
        let c = NoiseStreams::new(2, 2).sample_increments(4, 0.1, 8);
        assert_eq!(a, b);
        assert_ne!(a.dw, c.dw);
    }

    #[test]
    fn moments_of_a_million_draws() {
        let s = NoiseStreams::new(2024, 2);
        let dt = 0.01;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for k in 0..2500u64 {
            let inc = s.sample_increments(k, dt, 200);
            for v in &inc.db {
                for c in 0..2 {
                    sum += v[c];
                    sum_sq += v[c] * v[c];
                    count += 1;
                }
            }
        }
        assert_eq!(count, 1_000_000);
        let mean = sum / count as f64;
        let var = sum_sq / count as f64 - mean * mean;
        assert!(mean.abs() <= 4e-4, "mean {mean}");
        assert!((var / dt - 1.0).abs() <= 0.01, "var {var}");
    }

    #[test]
    fn fork_keeps_common_and_renews_idiosyncratic() {
        let parent = NoiseStreams::new(77, 2);
        let child = parent.fork_idiosyncratic(1);
        let a = parent.sample_increments(3, 1.0, 16);
        let b = child.sample_increments(3, 1.0, 16);
        assert_eq!(a.dw, b.dw);
        for (x, y) in a.db.iter().zip(&b.db) {
            assert!(x[0] != y[0] && x[1] != y[1]);
        }
        // Correlation between parent and child draws.
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for k in 0..1000u64 {
            for i in 0..50 {
                let x = parent.idiosyncratic_normal(i, k)[0];
                let y = child.idiosyncratic_normal(i, k)[0];
                sxy += x * y;
                sxx += x * x;
                syy += y * y;
            }
        }
        let rho = sxy / (sxx * syy).sqrt();
        assert!(rho.abs() <= 0.01, "rho {rho}");
    }

    #[test]
    fn kolmogorov_smirnov_normality() {
        let s = NoiseStreams::new(5, 3);
        let mut draws: Vec<f64> = (0..100_000usize)
            .map(|m| s.idiosyncratic_normal(m % 1000, (m / 1000) as u64)[m % 3])
            .collect();
        draws.sort_by(f64::total_cmp);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n = draws.len() as f64;
        let d = draws
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let f = normal.cdf(*x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value 1.628 / √n.
        assert!(d < 1.628 / n.sqrt(), "KS statistic {d}");
    }

    #[test]
    fn particle_keys_remap_streams() {
        let base = NoiseStreams::new(8, 2);
        let remapped = base.clone().with_particle_keys(vec![2, 0, 1]);
        assert_eq!(remapped.idiosyncratic_normal(0, 5), base.idiosyncratic_normal(2, 5));
        assert_eq!(remapped.initial_normals(1, 0), base.initial_normals(0, 0));
    }

    #[test]
    fn substeps_sum_fine_increments() {
        let fine = NoiseStreams::new(12, 3);
        let coarse = fine.clone().with_substeps(2);
        for k in 0..20u64 {
            let c = coarse.sample_increments(k, 0.02, 4);
            let a = fine.sample_increments(2 * k, 0.01, 4);
            let b = fine.sample_increments(2 * k + 1, 0.01, 4);
            assert!((c.dw - (a.dw + b.dw)).norm() <= 1e-15);
            for i in 0..4 {
                assert!((c.db[i] - (a.db[i] + b.db[i])).norm() <= 1e-15);
            }
        }
        assert_eq!(fine.clone().with_substeps(1).sample_increments(3, 0.1, 2), fine.sample_increments(3, 0.1, 2));
    }

    #[test]
    fn replica_seeds_are_distinct() {
        let seeds: std::collections::BTreeSet<u64> = (0..1000).map(|r| replica_seed(1, 2, r)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
