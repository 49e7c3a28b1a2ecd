//! Bounded pairwise interaction forces and the mean-field drift sum.

use crate::error::{Error, Result};
use crate::vector::Vector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Zero,
    /// Alignment `-λ (1 + |dx|²)^{-β} clip(dv)`, with `dv` rescaled to norm at
    /// most `v_clip` so that the force stays bounded.
    CuckerSmale { lambda: f64, beta: f64, v_clip: f64 },
    /// `-∇U(dx)` for the Morse potential
    /// `U(r) = C_r l_r e^{-r/l_r} - C_a l_a e^{-r/l_a}`.
    MorseGradient { c_a: f64, c_r: f64, l_a: f64, l_r: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            KernelSpec::Zero => true,
            KernelSpec::CuckerSmale { lambda, beta, v_clip } => {
                lambda.is_finite() && lambda >= 0.0 && beta >= 0.0 && beta.is_finite() && v_clip > 0.0 && v_clip.is_finite()
            }
            KernelSpec::MorseGradient { c_a, c_r, l_a, l_r } => {
                [c_a, c_r].iter().all(|c| c.is_finite() && *c >= 0.0)
                    && [l_a, l_r].iter().all(|l| l.is_finite() && *l > 0.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("kernel parameters out of range: {self:?}")))
        }
    }

    /// Force exerted on a particle at relative position `dx` and relative
    /// velocity `dv`.
    pub fn evaluate(&self, dx: &Vector, dv: &Vector) -> Vector {
        match *self {
            KernelSpec::Zero => Vector::ZERO,
            KernelSpec::CuckerSmale { lambda, beta, v_clip } => {
                cucker_smale(lambda, beta, v_clip * v_clip, v_clip, dx, dv)
            }
            KernelSpec::MorseGradient { c_a, c_r, l_a, l_r } => morse(c_a, c_r, l_a, l_r, dx),
        }
    }

    /// Analytic upper bound on `|H|` over all inputs.
    pub fn sup_norm(&self) -> f64 {
        match *self {
            KernelSpec::Zero => 0.0,
            KernelSpec::CuckerSmale { lambda, v_clip, .. } => lambda * v_clip,
            // |U'(r)| = |C_a e^{-r/l_a} - C_r e^{-r/l_r}| is a difference of
            // terms in [0, C_a] and [0, C_r].
            KernelSpec::MorseGradient { c_a, c_r, .. } => c_a.max(c_r),
        }
    }

    /// `H(0, 0)`, zero for every shipped kernel.
    pub fn vanishes_at_origin(&self) -> bool {
        self.evaluate(&Vector::ZERO, &Vector::ZERO) == Vector::ZERO
    }
}

#[inline(always)]
fn cucker_smale(lambda: f64, beta: f64, clip_sq: f64, clip: f64, dx: &Vector, dv: &Vector) -> Vector {
    let s = 1.0 + dx.norm_sq();
    let rate = if beta == 0.5 {
        1.0 / s.sqrt()
    } else if beta == 0.0 {
        1.0
    } else {
        s.powf(-beta)
    };
    let dv_sq = dv.norm_sq();
    let scale = if dv_sq > clip_sq { clip / dv_sq.sqrt() } else { 1.0 };
    (-lambda * rate * scale) * *dv
}

#[inline(always)]
fn morse(c_a: f64, c_r: f64, l_a: f64, l_r: f64, dx: &Vector) -> Vector {
    let r = dx.norm();
    if r == 0.0 {
        return Vector::ZERO;
    }
    let du = c_a * (-r / l_a).exp() - c_r * (-r / l_r).exp();
    (-du / r) * *dx
}

fn row_sum(x: &[Vector], v: &[Vector], i: usize, h: impl Fn(&Vector, &Vector) -> Vector) -> Vector {
    let (xi, vi) = (x[i], v[i]);
    let mut acc = Vector::ZERO;
    for (xj, vj) in x.iter().zip(v) {
        acc += h(&(xi - *xj), &(vi - *vj));
    }
    acc * (1.0 / x.len() as f64)
}

/// `(1/N) Σ_j H(x_i - x_j, v_i - v_j)`, self term included.
pub fn mean_field_drift(kernel: &KernelSpec, x: &[Vector], v: &[Vector], i: usize) -> Vector {
    debug_assert_eq!(x.len(), v.len());
    match *kernel {
        KernelSpec::Zero => Vector::ZERO,
        KernelSpec::CuckerSmale { lambda, beta, v_clip } => {
            let clip_sq = v_clip * v_clip;
            row_sum(x, v, i, |dx, dv| cucker_smale(lambda, beta, clip_sq, v_clip, dx, dv))
        }
        KernelSpec::MorseGradient { c_a, c_r, l_a, l_r } => {
            row_sum(x, v, i, |dx, _| morse(c_a, c_r, l_a, l_r, dx))
        }
    }
}

/// Drift for every particle from one read-only snapshot.
pub fn all_drifts(kernel: &KernelSpec, x: &[Vector], v: &[Vector]) -> Vec<Vector> {
    if matches!(kernel, KernelSpec::Zero) {
        return vec![Vector::ZERO; x.len()];
    }
    (0..x.len()).into_par_iter().map(|i| mean_field_drift(kernel, x, v, i)).collect()
}

/// Drift for a subset of particles, in the order given.
pub fn drifts_for(kernel: &KernelSpec, x: &[Vector], v: &[Vector], which: &[usize]) -> Vec<Vector> {
    if matches!(kernel, KernelSpec::Zero) {
        return vec![Vector::ZERO; which.len()];
    }
    which.par_iter().map(|&i| mean_field_drift(kernel, x, v, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const CS: KernelSpec = KernelSpec::CuckerSmale { lambda: 1.0, beta: 0.5, v_clip: 10.0 };
    const MORSE: KernelSpec = KernelSpec::MorseGradient { c_a: 1.0, c_r: 2.0, l_a: 2.0, l_r: 0.5 };

    fn morse_potential(r: f64) -> f64 {
        2.0 * 0.5 * (-r / 0.5).exp() - 1.0 * 2.0 * (-r / 2.0).exp()
    }

    fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vector {
        Vector::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        )
    }

    #[test]
    fn zero_kernel() {
        assert_eq!(KernelSpec::Zero.evaluate(&Vector::xy(1.0, 2.0), &Vector::xy(3.0, 4.0)), Vector::ZERO);
        assert_eq!(KernelSpec::Zero.sup_norm(), 0.0);
    }

    #[test]
    fn cucker_smale_examples() {
        let f = CS.evaluate(&Vector::ZERO, &Vector::xy(0.1, 0.0));
        assert_abs_diff_eq!((f - Vector::xy(-0.1, 0.0)).norm(), 0.0, epsilon = 1e-15);
        let k = KernelSpec::CuckerSmale { lambda: 2.0, beta: 1.0, v_clip: 5.0 };
        assert_eq!(k.sup_norm(), 10.0);
        // Clipped: |dv| = 50 rescales to 5.
        let f = k.evaluate(&Vector::ZERO, &Vector::xy(0.0, 50.0));
        assert_abs_diff_eq!(f.norm(), 10.0, epsilon = 1e-12);
        // General β.
        let k = KernelSpec::CuckerSmale { lambda: 1.0, beta: 1.5, v_clip: 5.0 };
        let f = k.evaluate(&Vector::xy(1.0, 0.0), &Vector::xy(1.0, 0.0));
        assert_abs_diff_eq!(f[0], -(2.0f64).powf(-1.5), epsilon = 1e-15);
    }

    #[test]
    fn morse_matches_finite_difference_of_potential() {
        let f = MORSE.evaluate(&Vector::xy(1.0, 0.0), &Vector::ZERO);
        let h = 1e-5;
        let du = (morse_potential(1.0 + h) - morse_potential(1.0 - h)) / (2.0 * h);
        assert_abs_diff_eq!(du, -2.0 * (-2.0f64).exp() + (-0.5f64).exp(), epsilon = 1e-6);
        assert!(f[0] < 0.0 && f[1] == 0.0);
        assert_abs_diff_eq!(f[0].abs(), du.abs(), epsilon = 1e-6);
        assert_eq!(MORSE.evaluate(&Vector::ZERO, &Vector::ZERO), Vector::ZERO);
    }

    #[test]
    fn morse_sup_norm_dominates_grid_maximum() {
        let m = 2_000_000;
        let grid_max = (0..=m)
            .map(|k| {
                let r = 20.0 * k as f64 / m as f64;
                let h = 1e-6;
                ((morse_potential(r + h) - morse_potential((r - h).max(0.0))) / (r + h - (r - h).max(0.0))).abs()
            })
            .fold(0.0, f64::max);
        assert!(MORSE.sup_norm() >= grid_max - 1e-6, "{} < {grid_max}", MORSE.sup_norm());
    }

    #[test]
    fn bounded_and_antisymmetric_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in [CS, MORSE, KernelSpec::CuckerSmale { lambda: 0.7, beta: 2.0, v_clip: 0.5 }] {
            let sup = k.sup_norm();
            for _ in 0..100_000 {
                let dx = random_vec(&mut rng, 3.0);
                let dv = random_vec(&mut rng, 20.0);
                let f = k.evaluate(&dx, &dv);
                assert!(f.norm() <= sup * (1.0 + 1e-12), "{k:?}");
                match k {
                    KernelSpec::CuckerSmale { .. } => {
                        assert_abs_diff_eq!((k.evaluate(&dx, &-dv) + f).norm(), 0.0, epsilon = 1e-12)
                    }
                    _ => assert_abs_diff_eq!((k.evaluate(&-dx, &dv) + f).norm(), 0.0, epsilon = 1e-12),
                }
            }
        }
    }

    #[test]
    fn drift_small_cases() {
        let x = [Vector::xy(0.3, 0.1)];
        let v = [Vector::xy(1.0, -2.0)];
        assert_eq!(mean_field_drift(&CS, &x, &v, 0), Vector::ZERO);
        let x2 = [Vector::xy(0.0, 0.0), Vector::xy(0.5, 0.0)];
        let v2 = [Vector::xy(1.0, 0.0), Vector::xy(0.0, 1.0)];
        assert_eq!(mean_field_drift(&KernelSpec::Zero, &x2, &v2, 1), Vector::ZERO);

        // Three hand-placed particles against a direct summation.
        let x3 = [Vector::xy(0.0, 0.0), Vector::xy(0.5, 0.0), Vector::xy(0.0, -0.4)];
        let v3 = [Vector::xy(1.0, 0.0), Vector::xy(0.0, 1.0), Vector::xy(-0.5, 0.5)];
        let a = |r2: f64| 1.0 / (1.0 + r2).sqrt();
        let expect0 = {
            let t1 = (v3[0] - v3[1]) * (-a(0.25));
            let t2 = (v3[0] - v3[2]) * (-a(0.16));
            (t1 + t2) * (1.0 / 3.0)
        };
        let got = mean_field_drift(&CS, &x3, &v3, 0);
        assert_abs_diff_eq!((got - expect0).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn drift_matches_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [1usize, 7, 64] {
            let x: Vec<Vector> = (0..n).map(|_| random_vec(&mut rng, 1.0)).collect();
            let v: Vec<Vector> = (0..n).map(|_| random_vec(&mut rng, 2.0)).collect();
            for k in [CS, MORSE] {
                let fast = all_drifts(&k, &x, &v);
                for i in 0..n {
                    let mut acc = [0.0f64; 3];
                    for j in 0..n {
                        let f = k.evaluate(&(x[i] - x[j]), &(v[i] - v[j]));
                        for c in 0..3 {
                            acc[c] += f[c];
                        }
                    }
                    let naive = Vector(acc) * (1.0 / n as f64);
                    assert!((fast[i] - naive).norm() <= 1e-12);
                    assert!(fast[i].norm() <= k.sup_norm() * (1.0 + 1e-12));
                }
            }
        }
    }
}
