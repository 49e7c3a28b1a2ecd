//! Empirical measures of particle snapshots and a dictionary surrogate for the
//! bounded-Lipschitz distance.

use crate::geometry::Domain;
use crate::simulator::SystemState;
use crate::testfns::{default_family, TestFunction};
use crate::vector::Vector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{self, Write};

/// `(1/N) Σ δ_{(x_i, v_i)}` borrowed from a snapshot.
#[derive(Clone, Copy, Debug)]
pub struct EmpiricalSnapshot<'a> {
    pub t: f64,
    pub x: &'a [Vector],
    pub v: &'a [Vector],
}

impl<'a> From<&'a SystemState> for EmpiricalSnapshot<'a> {
    fn from(s: &'a SystemState) -> Self {
        EmpiricalSnapshot { t: s.t, x: &s.x, v: &s.v }
    }
}

impl EmpiricalSnapshot<'_> {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// `⟨φ, μ⟩`, summed in particle order.
pub fn integrate<F: Fn(&Vector, &Vector) -> f64>(snap: EmpiricalSnapshot<'_>, phi: F) -> f64 {
    let s: f64 = snap.x.iter().zip(snap.v).map(|(x, v)| phi(x, v)).sum();
    s / snap.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BLMember {
    /// `scale · cos(ω_x·x + ω_v·v + θ)`.
    Cosine { omega_x: Vector, omega_v: Vector, theta: f64, scale: f64 },
    /// `scale · ψ(x, v)`.
    Bump { psi: TestFunction, scale: f64 },
}

impl BLMember {
    pub fn eval(&self, x: &Vector, v: &Vector) -> f64 {
        match self {
            BLMember::Cosine { omega_x, omega_v, theta, scale } => scale * (omega_x.dot(x) + omega_v.dot(v) + theta).cos(),
            BLMember::Bump { psi, scale } => scale * psi.eval(x, v),
        }
    }

    pub fn lipschitz_bound(&self) -> f64 {
        match self {
            BLMember::Cosine { omega_x, omega_v, scale, .. } => scale * (omega_x.norm_sq() + omega_v.norm_sq()).sqrt(),
            BLMember::Bump { psi, scale } => scale * psi.lipschitz_bound(),
        }
    }

    pub fn sup_bound(&self) -> f64 {
        match self {
            BLMember::Cosine { scale, .. } => *scale,
            BLMember::Bump { psi, scale } => scale * psi.amplitude.abs(),
        }
    }
}

pub const DEFAULT_DICTIONARY_SIZE: usize = 256;
pub const DEFAULT_DICTIONARY_SEED: u64 = 0xB1D1C7;
/// Standard deviation of the random cosine frequencies.
const FREQUENCY_STD: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BLDictionary {
    pub members: Vec<BLMember>,
    pub seed: u64,
}

impl BLDictionary {
    /// The default test-function family rescaled to unit Lipschitz constant,
    /// padded with random cosine features to `size` members.
    pub fn new(domain: &Domain, velocity_scale: f64, size: usize, seed: u64) -> Self {
        let mut members: Vec<BLMember> = default_family(domain, velocity_scale)
            .into_iter()
            .take(size)
            .map(|psi| {
                let scale = 1.0 / psi.lipschitz_bound().max(psi.amplitude.abs()).max(1.0);
                BLMember::Bump { psi, scale }
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, FREQUENCY_STD).expect("positive standard deviation");
        let dim = domain.dim;
        while members.len() < size {
            let mut omega_x = Vector::ZERO;
            let mut omega_v = Vector::ZERO;
            for c in 0..dim {
                omega_x[c] = normal.sample(&mut rng);
                omega_v[c] = normal.sample(&mut rng);
            }
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let norm = (omega_x.norm_sq() + omega_v.norm_sq()).sqrt();
            members.push(BLMember::Cosine { omega_x, omega_v, theta, scale: 1.0 / norm.max(1.0) });
        }
        BLDictionary { members, seed }
    }

    pub fn standard(domain: &Domain, velocity_scale: f64) -> Self {
        Self::new(domain, velocity_scale, DEFAULT_DICTIONARY_SIZE, DEFAULT_DICTIONARY_SEED)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// `⟨φ_m, μ⟩` for every member `m`.
    pub fn integrals(&self, snap: EmpiricalSnapshot<'_>) -> Vec<f64> {
        self.members.par_iter().map(|m| integrate(snap, |x, v| m.eval(x, v))).collect()
    }
}

/// `max_m |⟨φ_m, μ⟩ − ⟨φ_m, ν⟩|`, a lower bound of the bounded-Lipschitz
/// distance.
pub fn bl_distance(mu: EmpiricalSnapshot<'_>, nu: EmpiricalSnapshot<'_>, dict: &BLDictionary) -> f64 {
    max_abs_difference(&dict.integrals(mu), &dict.integrals(nu))
}

pub fn max_abs_difference(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

/// Regular grid on `[-L, L]^d × [-V, V]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub x_half_width: f64,
    pub x_bins: usize,
    pub v_half_width: f64,
    pub v_bins: usize,
}

impl GridSpec {
    /// Spatial box enclosing a domain centred at the origin.
    pub fn for_domain(domain: &Domain, v_half_width: f64, x_bins: usize, v_bins: usize) -> Self {
        GridSpec { dim: domain.dim, x_half_width: 0.5 * domain.diameter, x_bins, v_half_width, v_bins }
    }

    pub fn cell_count(&self) -> usize {
        self.x_bins.pow(self.dim as u32) * self.v_bins.pow(self.dim as u32)
    }

    fn bin(value: f64, half: f64, bins: usize) -> Option<usize> {
        if !(value.abs() <= half) {
            return None;
        }
        let k = ((value + half) / (2.0 * half) * bins as f64) as usize;
        Some(k.min(bins - 1))
    }

    /// Flat cell index, `None` outside the box.
    pub fn cell(&self, x: &Vector, v: &Vector) -> Option<usize> {
        let mut idx = 0;
        for c in 0..self.dim {
            idx = idx * self.x_bins + Self::bin(x[c], self.x_half_width, self.x_bins)?;
        }
        for c in 0..self.dim {
            idx = idx * self.v_bins + Self::bin(v[c], self.v_half_width, self.v_bins)?;
        }
        Some(idx)
    }

    /// Per-axis indices `(x_0.., v_0..)` of a flat cell index.
    pub fn unravel(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; 2 * self.dim];
        for c in (0..2 * self.dim).rev() {
            let bins = if c < self.dim { self.x_bins } else { self.v_bins };
            out[c] = idx % bins;
            idx /= bins;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub grid: GridSpec,
    /// Fraction of all particles per cell.
    pub mass: Vec<f64>,
}

pub fn phase_histogram(snap: EmpiricalSnapshot<'_>, grid: &GridSpec) -> Histogram {
    let mut counts = vec![0usize; grid.cell_count()];
    for (x, v) in snap.x.iter().zip(snap.v) {
        if let Some(c) = grid.cell(x, v) {
            counts[c] += 1;
        }
    }
    let n = snap.len() as f64;
    Histogram { grid: grid.clone(), mass: counts.into_iter().map(|c| c as f64 / n).collect() }
}

impl Histogram {
    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// CSV with one column per axis index and a trailing `mass` column.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let d = self.grid.dim;
        let header: Vec<String> =
            (0..d).map(|c| format!("ix{c}")).chain((0..d).map(|c| format!("iv{c}"))).chain(["mass".into()]).collect();
        writeln!(w, "{}", header.join(","))?;
        for (k, m) in self.mass.iter().enumerate() {
            let idx: Vec<String> = self.grid.unravel(k).iter().map(usize::to_string).collect();
            writeln!(w, "{},{}", idx.join(","), m)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn cloud(seed: u64, n: usize, shift: f64) -> (Vec<Vector>, Vec<Vector>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..n).map(|_| Vector::xy(rng.random_range(-0.5..0.5) + shift, rng.random_range(-0.5..0.5))).collect();
        let v = (0..n).map(|_| Vector::xy(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        (x, v)
    }

    fn snap<'a>(x: &'a [Vector], v: &'a [Vector]) -> EmpiricalSnapshot<'a> {
        EmpiricalSnapshot { t: 0.0, x, v }
    }

    fn dict() -> BLDictionary {
        BLDictionary::standard(&Domain::ball(2, 1.0).unwrap(), 1.0)
    }

    #[test]
    fn integrate_basics() {
        let (x, v) = cloud(1, 100, 0.0);
        assert_eq!(integrate(snap(&x, &v), |_, _| 1.0), 1.0);
        let x1 = [Vector::xy(0.2, 0.1)];
        let v1 = [Vector::xy(-0.3, 0.4)];
        let f = |x: &Vector, v: &Vector| x[0] * v[1] + 3.0;
        assert_eq!(integrate(snap(&x1, &v1), f), f(&x1[0], &v1[0]));
    }

    #[test]
    fn odd_observable_on_centred_clouds_is_small() {
        let n = 400;
        for seed in 0..20 {
            let (x, v) = cloud(seed, n, 0.0);
            let r = integrate(snap(&x, &v), |x, _| x[0]);
            assert!(r.abs() <= 4.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn dictionary_members_are_bounded_and_lipschitz() {
        let d = dict();
        assert_eq!(d.len(), DEFAULT_DICTIONARY_SIZE);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for m in &d.members {
            assert!(m.sup_bound() <= 1.0 + 1e-12);
            assert!(m.lipschitz_bound() <= 1.0 + 1e-12);
            for _ in 0..200 {
                let x = Vector::xy(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let v = Vector::xy(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                let dx = Vector::xy(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
                let dv = Vector::xy(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
                let a = m.eval(&x, &v);
                assert!(a.abs() <= 1.0 + 1e-12);
                let slope = (m.eval(&(x + dx), &(v + dv)) - a).abs() / (dx.norm_sq() + dv.norm_sq()).sqrt();
                assert!(slope <= 1.0 + 1e-9, "slope {slope}");
            }
        }
    }

    #[test]
    fn dictionary_is_deterministic() {
        assert_eq!(dict(), dict());
    }

    #[test]
    fn distance_between_nearby_atoms_is_bounded_by_their_separation() {
        let d = dict();
        let delta = 0.013;
        let xa = [Vector::xy(0.1, 0.2)];
        let xb = [Vector::xy(0.1 + delta, 0.2)];
        let v = [Vector::xy(0.5, -0.5)];
        let r = bl_distance(snap(&xa, &v), snap(&xb, &v), &d);
        assert!(r > 0.0 && r <= delta);
        assert_eq!(bl_distance(snap(&xa, &v), snap(&xa, &v), &d), 0.0);
    }

    #[test]
    fn distance_of_disjoint_clouds_matches_direct_recomputation() {
        let d = dict();
        let (xa, va) = cloud(3, 300, -0.3);
        let (xb, vb) = cloud(4, 300, 0.3);
        let fast = bl_distance(snap(&xa, &va), snap(&xb, &vb), &d);
        let mut best = 0.0f64;
        for m in &d.members {
            let mut sa = 0.0;
            for i in 0..xa.len() {
                sa += m.eval(&xa[i], &va[i]);
            }
            let mut sb = 0.0;
            for i in 0..xb.len() {
                sb += m.eval(&xb[i], &vb[i]);
            }
            best = best.max((sa / 300.0 - sb / 300.0).abs());
        }
        assert!((fast - best).abs() <= 1e-12);
        assert!(fast > 0.05);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn bl_distance_is_a_pseudometric(a in 0u64..1000, b in 0u64..1000, c in 0u64..1000) {
            let d = dict();
            let (xa, va) = cloud(a, 50, 0.0);
            let (xb, vb) = cloud(b, 50, 0.1);
            let (xc, vc) = cloud(c, 50, -0.1);
            let ab = bl_distance(snap(&xa, &va), snap(&xb, &vb), &d);
            let ba = bl_distance(snap(&xb, &vb), snap(&xa, &va), &d);
            let bc = bl_distance(snap(&xb, &vb), snap(&xc, &vc), &d);
            let ac = bl_distance(snap(&xa, &va), snap(&xc, &vc), &d);
            prop_assert_eq!(ab, ba);
            prop_assert!(ac <= ab + bc + 1e-15);
        }

        #[test]
        fn integrate_is_linear(a in 0u64..1000, s in -3.0f64..3.0) {
            let (x, v) = cloud(a, 64, 0.0);
            let f = |x: &Vector, v: &Vector| (x[0] + v[1]).sin();
            let g = |x: &Vector, _: &Vector| x.norm_sq();
            let lhs = integrate(snap(&x, &v), |x, v| f(x, v) + s * g(x, v));
            let rhs = integrate(snap(&x, &v), f) + s * integrate(snap(&x, &v), g);
            prop_assert!((lhs - rhs).abs() <= 1e-12);
            // Mixing two snapshots of equal size.
            let (y, w) = cloud(a + 1, 64, 0.2);
            let xs: Vec<Vector> = x.iter().chain(&y).copied().collect();
            let vs: Vec<Vector> = v.iter().chain(&w).copied().collect();
            let mixed = integrate(snap(&xs, &vs), f);
            let halves = 0.5 * (integrate(snap(&x, &v), f) + integrate(snap(&y, &w), f));
            prop_assert!((mixed - halves).abs() <= 1e-12);
        }
    }

    #[test]
    fn histogram_of_a_single_atom() {
        let grid = GridSpec { dim: 2, x_half_width: 1.0, x_bins: 4, v_half_width: 2.0, v_bins: 4 };
        let x = [Vector::xy(0.3, -0.9)];
        let v = [Vector::xy(1.9, 0.0)];
        let h = phase_histogram(snap(&x, &v), &grid);
        let nonzero: Vec<usize> = (0..h.mass.len()).filter(|&k| h.mass[k] > 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(h.mass[nonzero[0]], 1.0);
        assert_eq!(grid.unravel(nonzero[0]), vec![2, 0, 3, 2]);
    }

    #[test]
    fn histogram_mass_excludes_velocities_outside_the_box() {
        let grid = GridSpec { dim: 2, x_half_width: 1.0, x_bins: 3, v_half_width: 0.5, v_bins: 3 };
        let (x, v) = cloud(11, 1000, 0.0);
        let inside = v.iter().filter(|w| w[0].abs() <= 0.5 && w[1].abs() <= 0.5).count();
        let h = phase_histogram(snap(&x, &v), &grid);
        assert!((h.total_mass() - inside as f64 / 1000.0).abs() <= 1e-12);
        let mut out = Vec::new();
        h.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("ix0,ix1,iv0,iv1,mass\n"));
        assert_eq!(text.lines().count(), 1 + 81);
    }

    #[test]
    fn uniform_cloud_fills_cells_within_poisson_noise() {
        let grid = GridSpec { dim: 2, x_half_width: 0.5, x_bins: 2, v_half_width: 1.0, v_bins: 2 };
        let n = 10_000;
        let (x, v) = cloud(5, n, 0.0);
        let h = phase_histogram(snap(&x, &v), &grid);
        let expected = n as f64 / 16.0;
        let sd = expected.sqrt();
        let max = h.mass.iter().copied().fold(0.0, f64::max) * n as f64;
        let min = h.mass.iter().copied().fold(f64::INFINITY, f64::min) * n as f64;
        assert!(max / min <= (expected + 4.0 * sd) / (expected - 4.0 * sd));
    }
}
