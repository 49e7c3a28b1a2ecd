//! Compactly supported smooth test functions `ψ(x, v)` on `D × ℝᵈ`.
//!
//! Each function is a product of two radial bumps
//! `b(u) = exp(1 - 1/(1 - u))` for `u < 1`, zero otherwise, so that every
//! derivative used by the weak form has a closed form.

use crate::geometry::{Domain, Shape};
use crate::vector::Vector;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub x_center: Vector,
    pub v_center: Vector,
    pub r_x: f64,
    pub r_v: f64,
    pub amplitude: f64,
    pub dim: usize,
}

/// `(b(u), b'(u), b''(u))`.
#[inline]
fn bump(u: f64) -> (f64, f64, f64) {
    if u >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let w = 1.0 / (1.0 - u);
    let b = (1.0 - w).exp();
    let b1 = -b * w * w;
    let b2 = b * (w * w * w * w - 2.0 * w * w * w);
    (b, b1, b2)
}

impl TestFunction {
    pub fn new(x_center: Vector, v_center: Vector, r_x: f64, r_v: f64, dim: usize) -> Self {
        TestFunction { x_center, v_center, r_x, r_v, amplitude: 1.0, dim }
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    #[inline]
    fn args(&self, x: &Vector, v: &Vector) -> (Vector, f64, Vector, f64) {
        let dx = *x - self.x_center;
        let dv = *v - self.v_center;
        (dx, dx.norm_sq() / (self.r_x * self.r_x), dv, dv.norm_sq() / (self.r_v * self.r_v))
    }

    /// Whether `x` lies in the open spatial support.
    pub fn in_spatial_support(&self, x: &Vector) -> bool {
        (*x - self.x_center).norm_sq() < self.r_x * self.r_x
    }

    pub fn in_support(&self, x: &Vector, v: &Vector) -> bool {
        let (_, p, _, q) = self.args(x, v);
        p < 1.0 && q < 1.0
    }

    pub fn eval(&self, x: &Vector, v: &Vector) -> f64 {
        let (_, p, _, q) = self.args(x, v);
        if p >= 1.0 || q >= 1.0 {
            return 0.0;
        }
        self.amplitude * bump(p).0 * bump(q).0
    }

    pub fn grad_x(&self, x: &Vector, v: &Vector) -> Vector {
        let (dx, p, _, q) = self.args(x, v);
        if p >= 1.0 || q >= 1.0 {
            return Vector::ZERO;
        }
        dx * (self.amplitude * bump(p).1 * bump(q).0 * 2.0 / (self.r_x * self.r_x))
    }

    pub fn grad_v(&self, x: &Vector, v: &Vector) -> Vector {
        let (_, p, dv, q) = self.args(x, v);
        if p >= 1.0 || q >= 1.0 {
            return Vector::ZERO;
        }
        dv * (self.amplitude * bump(p).0 * bump(q).1 * 2.0 / (self.r_v * self.r_v))
    }

    pub fn laplacian_v(&self, x: &Vector, v: &Vector) -> f64 {
        let (_, p, dv, q) = self.args(x, v);
        if p >= 1.0 || q >= 1.0 {
            return 0.0;
        }
        let (_, b1, b2) = bump(q);
        let r2 = self.r_v * self.r_v;
        self.amplitude
            * bump(p).0
            * (b2 * 4.0 * dv.norm_sq() / (r2 * r2) + b1 * 2.0 * self.dim as f64 / r2)
    }

    /// All four quantities at once: `(ψ, ∇ₓψ, ∇ᵥψ, Δᵥψ)`.
    pub fn jet(&self, x: &Vector, v: &Vector) -> (f64, Vector, Vector, f64) {
        let (dx, p, dv, q) = self.args(x, v);
        if p >= 1.0 || q >= 1.0 {
            return (0.0, Vector::ZERO, Vector::ZERO, 0.0);
        }
        let (bx, bx1, _) = bump(p);
        let (bv, bv1, bv2) = bump(q);
        let a = self.amplitude;
        let rx2 = self.r_x * self.r_x;
        let rv2 = self.r_v * self.r_v;
        (
            a * bx * bv,
            dx * (a * bx1 * bv * 2.0 / rx2),
            dv * (a * bx * bv1 * 2.0 / rv2),
            a * bx * (bv2 * 4.0 * dv.norm_sq() / (rv2 * rv2) + bv1 * 2.0 * self.dim as f64 / rv2),
        )
    }

    /// Lower bound of `ℓ` over the spatial support, using that `ℓ` is
    /// 1-Lipschitz.
    pub fn support_margin(&self, domain: &Domain) -> f64 {
        domain.signed_distance(&self.x_center) - self.r_x
    }

    /// Upper bound on the joint Lipschitz constant in `(x, v)`.
    pub fn lipschitz_bound(&self) -> f64 {
        self.amplitude.abs() * max_radial_slope() * (1.0 / (self.r_x * self.r_x) + 1.0 / (self.r_v * self.r_v)).sqrt()
    }
}

/// `max_{u<1} 2√u |b'(u)|`, the Lipschitz constant of `y ↦ b(|y|²)`, with a
/// small safety factor over a fine grid.
pub fn max_radial_slope() -> f64 {
    let m = 20_000;
    let grid = (1..m)
        .map(|k| {
            let u = k as f64 / m as f64;
            2.0 * u.sqrt() * bump(u).1.abs()
        })
        .fold(0.0, f64::max);
    grid * 1.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilyParams {
    /// Spatial radius as a fraction of the inradius.
    pub r_x_fraction: f64,
    /// Velocity radius as a multiple of the velocity scale.
    pub r_v_factor: f64,
    /// Velocity-center offset as a multiple of the velocity scale.
    pub v_offset_factor: f64,
    /// Radius of the center lattice as a fraction of the inradius (balls).
    pub ring_fraction: f64,
    pub amplitude: f64,
}

impl Default for FamilyParams {
    fn default() -> Self {
        FamilyParams { r_x_fraction: 0.3, r_v_factor: 2.0, v_offset_factor: 0.5, ring_fraction: 0.4, amplitude: 1.0 }
    }
}

pub const DEFAULT_FAMILY_SIZE: usize = 8;

/// Directions for `count` lattice points on the unit circle or sphere.
fn directions(dim: usize, count: usize) -> Vec<Vector> {
    (0..count)
        .map(|k| {
            if dim == 2 {
                let th = std::f64::consts::TAU * k as f64 / count as f64;
                Vector::xy(th.cos(), th.sin())
            } else {
                // Fibonacci sphere.
                let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
                let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                let r = (1.0 - z * z).sqrt();
                let th = golden * k as f64;
                Vector::new(r * th.cos(), r * th.sin(), z)
            }
        })
        .collect()
}

/// The default family of eight test functions.
pub fn default_family(domain: &Domain, velocity_scale: f64) -> Vec<TestFunction> {
    family(domain, velocity_scale, &FamilyParams::default())
}

/// Eight test functions with centers on a fixed interior lattice: for balls
/// the center plus seven points on an inner ring, for annuli eight points on
/// the mid-radius sphere. Custom domains use the ball lattice about the
/// origin.
pub fn family(domain: &Domain, velocity_scale: f64, params: &FamilyParams) -> Vec<TestFunction> {
    let dim = domain.dim;
    let inr = domain.inradius;
    let r_x = params.r_x_fraction * inr;
    let r_v = params.r_v_factor * velocity_scale;
    let off = params.v_offset_factor * velocity_scale;
    let centers: Vec<(Vector, Vector)> = match domain.shape {
        Shape::Annulus { r_in, r_out } => {
            let mid = 0.5 * (r_in + r_out);
            directions(dim, DEFAULT_FAMILY_SIZE).into_iter().map(|u| (u * mid, u * off)).collect()
        }
        Shape::Ball { .. } | Shape::Custom(_) => std::iter::once((Vector::ZERO, Vector::ZERO))
            .chain(
                directions(dim, DEFAULT_FAMILY_SIZE - 1)
                    .into_iter()
                    .map(|u| (u * (params.ring_fraction * inr), u * off)),
            )
            .collect(),
    };
    centers
        .into_iter()
        .map(|(c, w)| TestFunction::new(c, w, r_x, r_v, dim).with_amplitude(params.amplitude))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn psi() -> TestFunction {
        TestFunction::new(Vector::xy(0.1, -0.2), Vector::xy(0.5, 0.3), 0.3, 2.0, 2)
    }

    #[test]
    fn value_at_center_is_amplitude() {
        let p = psi().with_amplitude(2.5);
        assert_abs_diff_eq!(p.eval(&p.x_center, &p.v_center), 2.5, epsilon = 1e-15);
    }

    #[test]
    fn vanishes_with_gradient_at_support_edge() {
        let p = psi();
        let x = p.x_center + Vector::xy(0.3, 0.0);
        assert_eq!(p.eval(&x, &p.v_center), 0.0);
        assert_eq!(p.grad_x(&x, &p.v_center), Vector::ZERO);
        // Just inside and outside the edge: no jump in the gradient.
        let inside = p.x_center + Vector::xy(0.3 * (1.0 - 1e-6), 0.0);
        let outside = p.x_center + Vector::xy(0.3 * (1.0 + 1e-6), 0.0);
        assert!((p.grad_x(&inside, &p.v_center) - p.grad_x(&outside, &p.v_center)).norm() <= 1e-6);
        let vin = p.v_center + Vector::xy(0.0, 2.0 * (1.0 - 1e-6));
        assert!(p.grad_v(&p.x_center, &vin).norm() <= 1e-6);
        assert!(p.laplacian_v(&p.x_center, &vin).abs() <= 1e-6);
    }

    fn close(fd: f64, an: f64) -> bool {
        (fd - an).abs() <= 1e-5 * an.abs().max(1e-4)
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dim in [2usize, 3] {
            let mut p = psi();
            p.dim = dim;
            if dim == 3 {
                p.x_center[2] = 0.05;
                p.v_center[2] = -0.4;
            }
            let mut checked = 0;
            while checked < 1000 {
                let mut x = p.x_center;
                let mut v = p.v_center;
                for c in 0..dim {
                    x[c] += rng.random_range(-0.3..0.3);
                    v[c] += rng.random_range(-2.0..2.0);
                }
                let (_, pu, _, qu) = p.args(&x, &v);
                if pu >= 0.9 || qu >= 0.9 {
                    continue;
                }
                checked += 1;
                let (val, gx, gv, lap) = p.jet(&x, &v);
                assert_eq!(val, p.eval(&x, &v));
                assert_eq!(gx, p.grad_x(&x, &v));
                assert_eq!(gv, p.grad_v(&x, &v));
                assert_eq!(lap, p.laplacian_v(&x, &v));
                let mut div = 0.0;
                for c in 0..dim {
                    let e = Vector::axis(c) * h;
                    let fx = (p.eval(&(x + e), &v) - p.eval(&(x - e), &v)) / (2.0 * h);
                    let fv = (p.eval(&x, &(v + e)) - p.eval(&x, &(v - e))) / (2.0 * h);
                    assert!(close(fx, gx[c]), "grad_x {fx} vs {}", gx[c]);
                    assert!(close(fv, gv[c]), "grad_v {fv} vs {}", gv[c]);
                    div += (p.grad_v(&x, &(v + e))[c] - p.grad_v(&x, &(v - e))[c]) / (2.0 * h);
                }
                assert!(close(div, lap), "laplacian {div} vs {lap}");
            }
        }
    }

    #[test]
    fn default_family_on_the_unit_ball() {
        let d = Domain::ball(2, 1.0).unwrap();
        let fam = default_family(&d, 1.0);
        assert_eq!(fam.len(), 8);
        for (i, a) in fam.iter().enumerate() {
            assert!(a.support_margin(&d) >= 0.1 - 1e-12);
            for b in &fam[i + 1..] {
                assert!((a.x_center - b.x_center).norm() > 1e-3);
            }
        }
        // Hit-or-miss estimate of the covered fraction of the disc of radius 0.6.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (mut hits, mut total) = (0, 0);
        while total < 100_000 {
            let x = Vector::xy(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6));
            if x.norm() >= 0.6 {
                continue;
            }
            total += 1;
            if fam.iter().any(|p| p.in_spatial_support(&x)) {
                hits += 1;
            }
        }
        assert!(hits as f64 / total as f64 >= 0.5);
    }

    #[test]
    fn default_family_margins_in_other_domains() {
        for d in [
            Domain::ball(3, 2.0).unwrap(),
            Domain::annulus(2, 0.5, 1.0).unwrap(),
            Domain::annulus(3, 0.5, 1.5).unwrap(),
        ] {
            let fam = default_family(&d, 1.0);
            assert_eq!(fam.len(), 8);
            for p in &fam {
                assert!(p.support_margin(&d) >= 0.1 * d.inradius - 1e-12, "{d:?}");
            }
        }
    }

    #[test]
    fn lipschitz_bound_dominates_sampled_slopes() {
        let p = psi();
        let lip = p.lipschitz_bound();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20_000 {
            let x = p.x_center + Vector::xy(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
            let v = p.v_center + Vector::xy(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let g = (p.grad_x(&x, &v).norm_sq() + p.grad_v(&x, &v).norm_sq()).sqrt();
            assert!(g <= lip);
        }
    }
}
