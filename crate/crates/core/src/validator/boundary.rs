//! Boundary identities: reflection jump sums against thin-layer flux
//! estimates, and the specular symmetry of the trace.

use super::stats::block_bootstrap_se;
use crate::error::{Error, Result};
use crate::geometry::{reflect, Domain};
use crate::simulator::Trajectory;
use crate::vector::Vector;
use serde::{Deserialize, Serialize};

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Bounded observables `φ(s, x, v)` on the boundary. The outward normal `n`
/// at `x` is passed alongside; off the boundary it is `-∇ℓ(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryObservable {
    Zero,
    /// `cos(x_0 + s)`; independent of velocity.
    SpatialCos,
    /// `|v|²`.
    SpeedSquared,
    /// `v·n`.
    NormalVelocity,
    /// `tanh(v·n)`.
    NormalTanh,
    /// `tanh(v·n) 1{s <= t_max}`.
    NormalTanhWindow { t_max: f64 },
    /// `tanh(v·n) (1 + n_axis) / 2`.
    NormalTanhWeighted { axis: usize },
    /// `exp(-|v|²/2) v·n`.
    GaussianFlux,
    /// `exp(-(v·n - c)²)`.
    ShiftedNormalBump { center: f64 },
    /// `exp(-|v|²/2) (1 + tanh(v·n))`.
    SkewedGaussian,
    /// `exp(-(v·n - c)²) 1{s <= t_max}`.
    WindowedNormalBump { center: f64, t_max: f64 },
    /// `tanh(|v - (v·n)n|) logistic(2 v·n)`.
    TangentialLogistic,
    /// `φ₀(s, x, v) + φ₀(s, x, v - 2(v·n)n)`.
    Symmetrized(Box<BoundaryObservable>),
}

impl BoundaryObservable {
    pub fn eval(&self, s: f64, x: &Vector, n: &Vector, v: &Vector) -> f64 {
        use BoundaryObservable::*;
        let vn = v.dot(n);
        match self {
            Zero => 0.0,
            SpatialCos => (x[0] + s).cos(),
            SpeedSquared => v.norm_sq(),
            NormalVelocity => vn,
            NormalTanh => vn.tanh(),
            NormalTanhWindow { t_max } => {
                if s <= *t_max {
                    vn.tanh()
                } else {
                    0.0
                }
            }
            NormalTanhWeighted { axis } => vn.tanh() * 0.5 * (1.0 + n[*axis]),
            GaussianFlux => (-0.5 * v.norm_sq()).exp() * vn,
            ShiftedNormalBump { center } => (-(vn - center).powi(2)).exp(),
            SkewedGaussian => (-0.5 * v.norm_sq()).exp() * (1.0 + vn.tanh()),
            WindowedNormalBump { center, t_max } => {
                if s <= *t_max {
                    (-(vn - center).powi(2)).exp()
                } else {
                    0.0
                }
            }
            TangentialLogistic => (*v - *n * vn).norm().tanh() * logistic(2.0 * vn),
            Symmetrized(base) => base.eval(s, x, n, v) + base.eval(s, x, n, &reflect(v, n)),
        }
    }

    pub fn symmetrized(self) -> Self {
        BoundaryObservable::Symmetrized(Box::new(self))
    }

    pub fn name(&self) -> String {
        use BoundaryObservable::*;
        match self {
            Zero => "zero".into(),
            SpatialCos => "spatial_cos".into(),
            SpeedSquared => "speed_squared".into(),
            NormalVelocity => "normal_velocity".into(),
            NormalTanh => "normal_tanh".into(),
            NormalTanhWindow { t_max } => format!("normal_tanh_window_{t_max}"),
            NormalTanhWeighted { axis } => format!("normal_tanh_weighted_{axis}"),
            GaussianFlux => "gaussian_flux".into(),
            ShiftedNormalBump { center } => format!("shifted_normal_bump_{center}"),
            SkewedGaussian => "skewed_gaussian".into(),
            WindowedNormalBump { center, t_max } => format!("windowed_normal_bump_{center}_{t_max}"),
            TangentialLogistic => "tangential_logistic".into(),
            Symmetrized(b) => format!("symmetrized_{}", b.name()),
        }
    }
}

/// The four observables of the trace identity check on a run of length `t_end`.
pub fn default_trace_observables(t_end: f64) -> Vec<BoundaryObservable> {
    vec![
        BoundaryObservable::NormalTanh,
        BoundaryObservable::NormalTanhWindow { t_max: 0.5 * t_end },
        BoundaryObservable::NormalTanhWeighted { axis: 0 },
        BoundaryObservable::GaussianFlux,
    ]
}

/// The four base observables `φ₀` of the symmetry check, before
/// symmetrization.
pub fn default_symmetry_bases(t_end: f64) -> Vec<BoundaryObservable> {
    vec![
        BoundaryObservable::ShiftedNormalBump { center: 0.5 },
        BoundaryObservable::SkewedGaussian,
        BoundaryObservable::WindowedNormalBump { center: 1.0, t_max: 0.5 * t_end },
        BoundaryObservable::TangentialLogistic,
    ]
}

/// `(1/N) Σ_events (φ(s, x, v_post) − φ(s, x, v_pre))`.
pub fn event_jump_sum(traj: &Trajectory, phi: &BoundaryObservable) -> f64 {
    let s: f64 =
        traj.events.iter().map(|e| phi.eval(e.t_hit, &e.x, &e.n, &e.v_post) - phi.eval(e.t_hit, &e.x, &e.n, &e.v_pre)).sum();
    s / traj.n() as f64
}

fn check_layer(traj: &Trajectory, domain: &Domain, deltas: &[f64]) -> Result<()> {
    if !traj.every_step_recorded() {
        return Err(Error::MissingSnapshots);
    }
    for &delta in deltas {
        if !(delta > 0.0) || delta >= domain.band {
            return Err(Error::LayerExceedsBand { delta, band: domain.band });
        }
    }
    Ok(())
}

/// Layer-flux contributions `[observable][δ][block]` with steps split into
/// `blocks` contiguous time blocks.
fn layer_flux_blocks(
    traj: &Trajectory,
    domain: &Domain,
    deltas: &[f64],
    observables: &[BoundaryObservable],
    blocks: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    check_layer(traj, domain, deltas)?;
    let widest = deltas.iter().copied().fold(0.0, f64::max);
    let steps = traj.steps();
    let mut out = vec![vec![vec![0.0; blocks]; deltas.len()]; observables.len()];
    for k in 0..steps {
        let block = k * blocks / steps.max(1);
        let snap = &traj.snapshots[k];
        for (x, v) in snap.x.iter().zip(&snap.v) {
            let l = domain.signed_distance(x);
            if !(l > 0.0 && l <= widest) {
                continue;
            }
            let grad = domain.distance_gradient(x);
            let n = -grad;
            let flux = grad.dot(v);
            for (o, phi) in observables.iter().enumerate() {
                let val = flux * phi.eval(snap.t, x, &n, v);
                for (j, &delta) in deltas.iter().enumerate() {
                    if l <= delta {
                        out[o][j][block] += val / delta;
                    }
                }
            }
        }
    }
    let scale = traj.dt() / traj.n() as f64;
    for per_obs in &mut out {
        for per_delta in per_obs.iter_mut() {
            for b in per_delta.iter_mut() {
                *b *= scale;
            }
        }
    }
    Ok(out)
}

/// Thin-layer estimate of the boundary flux of `φ`:
/// `(1/δ) ∫ (1/N) Σ_i ∇ℓ(X_i)·V_i φ(s, X_i, V_i) 1{0 < ℓ(X_i) <= δ} ds`,
/// which converges to the jump sum of `φ` as `δ → 0`.
pub fn layer_flux(traj: &Trajectory, domain: &Domain, delta: f64, phi: &BoundaryObservable) -> Result<f64> {
    Ok(layer_flux_table(traj, domain, &[delta], std::slice::from_ref(phi))?[0][0])
}

/// Layer-flux estimates `[observable][δ]`, computed in one pass.
pub fn layer_flux_table(
    traj: &Trajectory,
    domain: &Domain,
    deltas: &[f64],
    observables: &[BoundaryObservable],
) -> Result<Vec<Vec<f64>>> {
    let blocks = layer_flux_blocks(traj, domain, deltas, observables, 1)?;
    Ok(blocks.into_iter().map(|o| o.into_iter().map(|d| d[0]).collect()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub observable: String,
    pub jump_sum: f64,
    /// One estimate per layer width of the ladder.
    pub layer_flux: Vec<f64>,
    pub relative_error: Vec<f64>,
    /// `|est(δ_j) − est(δ_{j+1})|` along the ladder.
    pub ladder_differences: Vec<f64>,
    pub ladder_monotone: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub delta_ladder: Vec<f64>,
    pub events: usize,
    pub entries: Vec<TraceEntry>,
}

/// `|a − b| / |a|`, or `|b|` when `a = 0`.
pub fn relative_error(reference: f64, estimate: f64) -> f64 {
    if reference == 0.0 {
        estimate.abs()
    } else {
        (estimate - reference).abs() / reference.abs()
    }
}

pub fn trace_identity_check(
    traj: &Trajectory,
    domain: &Domain,
    observables: &[BoundaryObservable],
    ladder: &[f64],
) -> Result<BoundaryReport> {
    if ladder.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidConfig("layer widths must be strictly decreasing".into()));
    }
    let table = layer_flux_table(traj, domain, ladder, observables)?;
    let entries = observables
        .iter()
        .zip(table)
        .map(|(phi, layer)| {
            let jump = event_jump_sum(traj, phi);
            let ladder_differences: Vec<f64> = layer.windows(2).map(|w| (w[0] - w[1]).abs()).collect();
            TraceEntry {
                observable: phi.name(),
                jump_sum: jump,
                relative_error: layer.iter().map(|l| relative_error(jump, *l)).collect(),
                ladder_monotone: ladder_differences.windows(2).all(|w| w[1] < w[0]),
                ladder_differences,
                layer_flux: layer,
            }
        })
        .collect();
    Ok(BoundaryReport { delta_ladder: ladder.to_vec(), events: traj.events.len(), entries })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryEntry {
    pub observable: String,
    pub jump_sum: f64,
    pub layer_flux: f64,
    pub bootstrap_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub delta: f64,
    pub blocks: usize,
    pub resamples: usize,
    pub entries: Vec<SymmetryEntry>,
}

pub const SYMMETRY_BLOCKS: usize = 16;
pub const SYMMETRY_RESAMPLES: usize = 2000;
const BOOTSTRAP_SEED: u64 = 0x5E1F;

/// Jump sums and layer fluxes of the symmetrized observables
/// `φ₀ + φ₀∘R`, with block-bootstrap standard errors of the layer fluxes.
pub fn specular_symmetry_check(
    traj: &Trajectory,
    domain: &Domain,
    bases: &[BoundaryObservable],
    delta: f64,
) -> Result<SymmetryReport> {
    let sym: Vec<BoundaryObservable> = bases.iter().cloned().map(BoundaryObservable::symmetrized).collect();
    let blocks = layer_flux_blocks(traj, domain, &[delta], &sym, SYMMETRY_BLOCKS)?;
    let entries = sym
        .iter()
        .zip(blocks)
        .enumerate()
        .map(|(j, (phi, b))| {
            let per_block = &b[0];
            SymmetryEntry {
                observable: phi.name(),
                jump_sum: event_jump_sum(traj, phi),
                layer_flux: per_block.iter().sum(),
                bootstrap_se: block_bootstrap_se(per_block, SYMMETRY_RESAMPLES, BOOTSTRAP_SEED + j as u64),
            }
        })
        .collect();
    Ok(SymmetryReport { delta, blocks: SYMMETRY_BLOCKS, resamples: SYMMETRY_RESAMPLES, entries })
}
