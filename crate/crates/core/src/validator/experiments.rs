//! Replicated experiments: 1/N scaling of the weak residual, time-step
//! refinement of the martingale identity, shared-noise coupling and the
//! moment bound.

use super::residual::{residual_report, weak_residuals};
use super::stats::{loglog_fit, mean_se, LineFit};
use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::measure::{max_abs_difference, BLDictionary, DEFAULT_DICTIONARY_SEED, DEFAULT_DICTIONARY_SIZE};
use crate::noise::{replica_seed, NoiseStreams};
use crate::simulator::{gronwall_bound, moment_monitor, SimConfig, Simulator};
use crate::testfns::TestFunction;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const SCALING_TAG: u64 = 1;
const DISCREPANCY_TAG: u64 = 2;
const COUPLING_TAG: u64 = 3;
const MOMENT_TAG: u64 = 4;

fn tag(kind: u64, n: usize) -> u64 {
    (kind << 48) ^ n as u64
}

fn check_n_list(n_list: &[usize], replicas: usize) -> Result<()> {
    if n_list.len() < 3 {
        return Err(Error::InvalidConfig("at least three particle counts are required".into()));
    }
    if n_list.windows(2).any(|w| w[1] <= w[0]) || n_list[0] == 0 {
        return Err(Error::InvalidConfig("particle counts must be positive and strictly increasing".into()));
    }
    if replicas < 16 {
        return Err(Error::InvalidConfig("at least 16 replicas are required".into()));
    }
    Ok(())
}

fn with_seed(base: &SimConfig, n: usize, seed: u64) -> SimConfig {
    let mut cfg = base.clone();
    cfg.n = n;
    cfg.noise.master_seed = seed;
    cfg
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub n_values: Vec<usize>,
    /// Per `N`: mean over replicas and the family of `|F_ψ|²`.
    pub mean_square: Vec<f64>,
    pub se: Vec<f64>,
    pub fit: LineFit,
    pub replicas: usize,
    pub family_size: usize,
}

/// Mean square of the weak residual over replicas and the family, per `N`,
/// with a log-log slope fit.
pub fn scaling_experiment(
    base: &SimConfig,
    n_list: &[usize],
    replicas: usize,
    family: &[TestFunction],
) -> Result<ScalingReport> {
    check_n_list(n_list, replicas)?;
    let mut base = base.clone();
    base.record_every = 1;
    base.record_idiosyncratic_noise = false;
    let mut mean_square = Vec::new();
    let mut se = Vec::new();
    for &n in n_list {
        let per_replica: Vec<f64> = (0..replicas as u64)
            .into_par_iter()
            .map(|r| {
                let cfg = with_seed(&base, n, replica_seed(base.noise.master_seed, tag(SCALING_TAG, n), r));
                let traj = Simulator::new(cfg)?.simulate()?;
                let f = weak_residuals(&traj, family)?;
                Ok(f.iter().map(|x| x * x).sum::<f64>() / f.len() as f64)
            })
            .collect::<Result<_>>()?;
        let (m, s) = mean_se(&per_replica);
        mean_square.push(m);
        se.push(s);
    }
    Ok(ScalingReport {
        fit: loglog_fit(n_list, &mean_square, &se),
        n_values: n_list.to_vec(),
        mean_square,
        se,
        replicas,
        family_size: family.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub dt_values: Vec<f64>,
    /// Per `dt`: mean over replicas and the family of `|F_def − F_mart|`.
    pub mean_discrepancy: Vec<f64>,
    pub se: Vec<f64>,
    /// `mean(dt_j) / mean(dt_{j+1})`.
    pub ratios: Vec<f64>,
    pub replicas: usize,
}

/// Gap between the weak residual and its martingale form at several time
/// steps. Replica `r` shares its initial condition and its Brownian paths
/// across step sizes: coarse increments are sums of the finest ones.
pub fn discrepancy_experiment(
    base: &SimConfig,
    dt_values: &[f64],
    replicas: usize,
    family: &[TestFunction],
) -> Result<DiscrepancyReport> {
    let finest = dt_values.iter().copied().fold(f64::INFINITY, f64::min);
    let substeps: Vec<u64> = dt_values.iter().map(|dt| (dt / finest).round() as u64).collect();
    if dt_values.iter().zip(&substeps).any(|(dt, m)| (dt / finest - *m as f64).abs() > 1e-9 * *m as f64) {
        return Err(Error::InvalidConfig("time steps must be integer multiples of the finest one".into()));
    }
    let mut base = base.clone();
    base.record_every = 1;
    base.record_idiosyncratic_noise = true;
    let mut mean_discrepancy = Vec::new();
    let mut se = Vec::new();
    for (&dt, &m) in dt_values.iter().zip(&substeps) {
        let per_replica: Vec<f64> = (0..replicas as u64)
            .into_par_iter()
            .map(|r| {
                let mut cfg = with_seed(&base, base.n, replica_seed(base.noise.master_seed, tag(DISCREPANCY_TAG, base.n), r));
                cfg.dt = dt;
                let sim = Simulator::new(cfg)?;
                let traj = sim.simulate_with(&sim.streams().with_substeps(m))?;
                let rep = residual_report(&traj, family)?;
                Ok(rep.per_psi.iter().map(|p| p.discrepancy).sum::<f64>() / family.len() as f64)
            })
            .collect::<Result<_>>()?;
        let (m, s) = mean_se(&per_replica);
        mean_discrepancy.push(m);
        se.push(s);
    }
    Ok(DiscrepancyReport {
        ratios: mean_discrepancy.windows(2).map(|w| w[0] / w[1]).collect(),
        dt_values: dt_values.to_vec(),
        mean_discrepancy,
        se,
        replicas,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingOptions {
    /// Snapshot spacing, in steps, of the time average.
    pub record_every: usize,
    /// Start both systems from the same initial particles.
    pub share_initial: bool,
    pub dictionary_size: usize,
    pub dictionary_seed: u64,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        CouplingOptions {
            record_every: 10,
            share_initial: false,
            dictionary_size: DEFAULT_DICTIONARY_SIZE,
            dictionary_seed: DEFAULT_DICTIONARY_SEED,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub n_values: Vec<usize>,
    /// Per `N`: mean over replicas of the time-averaged distance.
    pub mean_distance: Vec<f64>,
    pub se: Vec<f64>,
    pub fit: LineFit,
    pub strictly_decreasing: bool,
    pub replicas: usize,
}

/// Time-averaged dictionary distance between two systems that share the
/// common noise but have independent idiosyncratic noise and, unless
/// `share_initial` is set, independent initial particles.
pub fn paired_distance(sim: &Simulator, streams: &NoiseStreams, dict: &BLDictionary, share_initial: bool) -> Result<f64> {
    let mut other = streams.fork_idiosyncratic(1);
    if !share_initial {
        other = other.fork_initial(1);
    }
    let a = sim.simulate_with(streams)?;
    let b = sim.simulate_with(&other)?;
    let total: f64 = a
        .snapshots
        .iter()
        .zip(&b.snapshots)
        .map(|(p, q)| max_abs_difference(&dict.integrals(p.into()), &dict.integrals(q.into())))
        .sum();
    Ok(total / a.snapshots.len() as f64)
}

pub fn coupling_experiment(
    base: &SimConfig,
    n_list: &[usize],
    replicas: usize,
    opts: &CouplingOptions,
) -> Result<CouplingReport> {
    check_n_list(n_list, replicas)?;
    let domain = Domain::from_spec(&base.domain, base.dim)?;
    let dict = BLDictionary::new(
        &domain,
        base.init.velocity_scale(base.dim),
        opts.dictionary_size,
        opts.dictionary_seed,
    );
    let mut base = base.clone();
    base.record_every = opts.record_every.max(1);
    base.record_idiosyncratic_noise = false;
    let mut mean_distance = Vec::new();
    let mut se = Vec::new();
    for &n in n_list {
        let per_replica: Vec<f64> = (0..replicas as u64)
            .into_par_iter()
            .map(|r| {
                let cfg = with_seed(&base, n, replica_seed(base.noise.master_seed, tag(COUPLING_TAG, n), r));
                let sim = Simulator::new(cfg)?;
                paired_distance(&sim, &sim.streams(), &dict, opts.share_initial)
            })
            .collect::<Result<_>>()?;
        let (m, s) = mean_se(&per_replica);
        mean_distance.push(m);
        se.push(s);
    }
    Ok(CouplingReport {
        fit: loglog_fit(n_list, &mean_distance, &se),
        strictly_decreasing: mean_distance.windows(2).all(|w| w[1] < w[0]),
        n_values: n_list.to_vec(),
        mean_distance,
        se,
        replicas,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub seeds: usize,
    /// Mean over seeds of `sup_t (1/N) Σ (|X|² + |V|²)`.
    pub mean_sup: f64,
    pub max_sup: f64,
    pub bound: f64,
}

pub fn moment_experiment(base: &SimConfig, seeds: usize) -> Result<MomentReport> {
    let sups: Vec<f64> = (0..seeds as u64)
        .into_par_iter()
        .map(|r| {
            let cfg = with_seed(base, base.n, replica_seed(base.noise.master_seed, tag(MOMENT_TAG, base.n), r));
            Ok(moment_monitor(&Simulator::new(cfg)?.simulate()?).sup())
        })
        .collect::<Result<_>>()?;
    Ok(MomentReport {
        seeds,
        mean_sup: sups.iter().sum::<f64>() / seeds as f64,
        max_sup: sups.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        bound: gronwall_bound(base),
    })
}
