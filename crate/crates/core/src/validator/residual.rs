//! The weak-form functional of the empirical measure and its martingale
//! representation.

use crate::error::{Error, Result};
use crate::kernels::drifts_for;
use crate::simulator::Trajectory;
use crate::testfns::TestFunction;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiResidual {
    pub f_def: f64,
    pub f_mart: f64,
    pub discrepancy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub dt: f64,
    pub n: usize,
    pub per_psi: Vec<PsiResidual>,
}

fn require_full_record(traj: &Trajectory) -> Result<()> {
    if traj.common_path.is_empty() {
        return Err(Error::MissingCommonPath);
    }
    if !traj.every_step_recorded() {
        return Err(Error::MissingSnapshots);
    }
    Ok(())
}

/// Rejects trajectories in which a particle reflects during a step that
/// starts or ends inside the spatial support of some test function.
pub fn check_supports_clear_of_reflections(traj: &Trajectory, family: &[TestFunction]) -> Result<()> {
    let dt = traj.dt();
    let last = traj.steps().saturating_sub(1);
    for e in &traj.events {
        let k = ((e.t_hit / dt).floor() as usize).min(last);
        for snap in &traj.snapshots[k..=(k + 1).min(traj.snapshots.len() - 1)] {
            let x = &snap.x[e.particle];
            if family.iter().any(|p| p.in_spatial_support(x)) {
                return Err(Error::StepTooCoarse { particle: e.particle, t: e.t_hit });
            }
        }
    }
    Ok(())
}

/// `F_ψ(f^N)` for every `ψ` in `family`, by its definition:
/// `⟨ψ,f_T⟩ − ⟨ψ,f_0⟩ − ∫⟨v·∇ₓψ + ∇ᵥψ·H∗f + (σ+σ̄)Δᵥψ, f⟩ − √(2σ̄) ∫⟨∇ᵥψ, f⟩·dW̄`,
/// with left-point sums in time.
pub fn weak_residuals(traj: &Trajectory, family: &[TestFunction]) -> Result<Vec<f64>> {
    require_full_record(traj)?;
    check_supports_clear_of_reflections(traj, family)?;
    let cfg = &traj.config;
    let n = traj.n() as f64;
    let dt = cfg.dt;
    let diff = cfg.noise.sigma + cfg.noise.sigma_bar;
    let m = family.len();
    let mut drift_term = vec![0.0; m];
    let mut noise_term = vec![0.0; m];
    let mut which = Vec::new();
    for k in 0..traj.steps() {
        let s = &traj.snapshots[k];
        which.clear();
        which.extend((0..s.len()).filter(|&i| family.iter().any(|p| p.in_support(&s.x[i], &s.v[i]))));
        if which.is_empty() {
            continue;
        }
        let drift = drifts_for(&cfg.kernel, &s.x, &s.v, &which);
        let dw = traj.common_increment(k);
        for (j, p) in family.iter().enumerate() {
            let (mut a, mut b) = (0.0, 0.0);
            for (&i, f) in which.iter().zip(&drift) {
                let (_, gx, gv, lap) = p.jet(&s.x[i], &s.v[i]);
                a += gx.dot(&s.v[i]) + gv.dot(f) + diff * lap;
                b += gv.dot(&dw);
            }
            drift_term[j] += a;
            noise_term[j] += b;
        }
    }
    let first = &traj.snapshots[0];
    let last = traj.final_state();
    let c = (2.0 * cfg.noise.sigma_bar).sqrt();
    Ok(family
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let end: f64 = last.x.iter().zip(&last.v).map(|(x, v)| p.eval(x, v)).sum();
            let start: f64 = first.x.iter().zip(&first.v).map(|(x, v)| p.eval(x, v)).sum();
            (end - start - dt * drift_term[j] - c * noise_term[j]) / n
        })
        .collect())
}

pub fn weak_residual(traj: &Trajectory, psi: &TestFunction) -> Result<f64> {
    Ok(weak_residuals(traj, std::slice::from_ref(psi))?[0])
}

/// `√(2σ) Σ_k (1/N) Σ_i ∇ᵥψ(X_k^i, V_k^i)·ΔB_k^i` for every `ψ` in `family`.
pub fn martingale_forms(traj: &Trajectory, family: &[TestFunction]) -> Result<Vec<f64>> {
    let db = traj.idiosyncratic_increments.as_ref().ok_or(Error::MissingIdiosyncraticPaths)?;
    require_full_record(traj)?;
    let mut acc = vec![0.0; family.len()];
    for (k, inc) in db.iter().enumerate() {
        let s = &traj.snapshots[k];
        for i in 0..s.len() {
            for (j, p) in family.iter().enumerate() {
                if p.in_support(&s.x[i], &s.v[i]) {
                    acc[j] += p.grad_v(&s.x[i], &s.v[i]).dot(&inc[i]);
                }
            }
        }
    }
    let c = (2.0 * traj.config.noise.sigma).sqrt() / traj.n() as f64;
    Ok(acc.into_iter().map(|a| c * a).collect())
}

pub fn martingale_form(traj: &Trajectory, psi: &TestFunction) -> Result<f64> {
    Ok(martingale_forms(traj, std::slice::from_ref(psi))?[0])
}

pub fn residual_report(traj: &Trajectory, family: &[TestFunction]) -> Result<ResidualReport> {
    let def = weak_residuals(traj, family)?;
    let mart = martingale_forms(traj, family)?;
    Ok(ResidualReport {
        dt: traj.dt(),
        n: traj.n(),
        per_psi: def
            .into_iter()
            .zip(mart)
            .map(|(f_def, f_mart)| PsiResidual { f_def, f_mart, discrepancy: (f_def - f_mart).abs() })
            .collect(),
    })
}
