//! Level-set domains, specular reflection and straight-line hitting times.
//!
//! A domain `D` is described by a signed distance `ℓ` with `ℓ > 0` inside,
//! `ℓ = 0` on the boundary and `ℓ < 0` outside. Near the boundary `∇ℓ` is the
//! inward unit normal, so the outward normal is `n = -∇ℓ`.

use crate::error::{Error, Result};
use crate::vector::Vector;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// Relative threshold on `|v·n| / |v|` below which a hit is tangential.
pub const GRAZING_RATIO: f64 = 1e-12;

/// Speeds below this never reach the boundary.
pub const MIN_FLIGHT_SPEED: f64 = 1e-14;

const MAX_MARCH_STEPS: usize = 1_000_000;
const MAX_BISECTIONS: usize = 200;

/// User-supplied signed distance for domains without a closed form.
pub trait LevelSet: Send + Sync + fmt::Debug {
    fn distance(&self, x: &Vector) -> f64;

    /// Gradient of [`LevelSet::distance`]; unit length near the boundary.
    fn gradient(&self, x: &Vector) -> Vector;
}

/// Serializable description of the built-in domains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Ball { radius: f64 },
    Annulus { r_in: f64, r_out: f64 },
}

#[derive(Clone, Debug)]
pub enum Shape {
    Ball { radius: f64 },
    /// Spherical shell `r_in < |x| < r_out`. The signed distance is exact near
    /// each wall and has a kink at the mid radius.
    Annulus { r_in: f64, r_out: f64 },
    Custom(Arc<dyn LevelSet>),
}

#[derive(Clone, Debug)]
pub struct Domain {
    pub shape: Shape,
    pub dim: usize,
    pub diameter: f64,
    /// Largest `ℓ` attained in the domain.
    pub inradius: f64,
    pub containment_tolerance: f64,
    /// Normals are only contractual where `|ℓ(x)| <= band`.
    pub band: f64,
}

/// First contact of a straight flight with the boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceHit {
    pub tau: f64,
    pub x_hit: Vector,
    /// Unit outward normal at `x_hit`.
    pub n: Vector,
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 2 || dim == 3 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("dimension must be 2 or 3, got {dim}")))
    }
}

impl Domain {
    pub fn ball(dim: usize, radius: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidConfig(format!("ball radius must be positive, got {radius}")));
        }
        Ok(Self::assemble(Shape::Ball { radius }, dim, 2.0 * radius, radius))
    }

    pub fn annulus(dim: usize, r_in: f64, r_out: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(r_in > 0.0 && r_out > r_in && r_out.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "annulus needs 0 < r_in < r_out, got ({r_in}, {r_out})"
            )));
        }
        let inradius = 0.5 * (r_out - r_in);
        Ok(Self::assemble(Shape::Annulus { r_in, r_out }, dim, 2.0 * r_out, inradius))
    }

    /// A domain backed by an arbitrary level set. Regularity of the boundary
    /// is not checked; `band` declares where the gradient is trusted.
    pub fn custom(
        dim: usize,
        level_set: Arc<dyn LevelSet>,
        diameter: f64,
        inradius: f64,
        band: f64,
    ) -> Result<Self> {
        check_dim(dim)?;
        if !(diameter > 0.0 && inradius > 0.0 && band > 0.0) {
            return Err(Error::InvalidConfig(
                "custom domain needs positive diameter, inradius and band".into(),
            ));
        }
        let mut d = Self::assemble(Shape::Custom(level_set), dim, diameter, inradius);
        d.band = band;
        Ok(d)
    }

    pub fn from_spec(spec: &DomainSpec, dim: usize) -> Result<Self> {
        match *spec {
            DomainSpec::Ball { radius } => Self::ball(dim, radius),
            DomainSpec::Annulus { r_in, r_out } => Self::annulus(dim, r_in, r_out),
        }
    }

    fn assemble(shape: Shape, dim: usize, diameter: f64, inradius: f64) -> Self {
        Domain {
            shape,
            dim,
            diameter,
            inradius,
            containment_tolerance: 1e-9 * diameter,
            band: 0.5 * inradius,
        }
    }

    pub fn with_band(mut self, band: f64) -> Self {
        self.band = band;
        self
    }

    pub fn with_containment_tolerance(mut self, tol: f64) -> Self {
        self.containment_tolerance = tol;
        self
    }

    /// Signed distance `ℓ(x)`.
    pub fn signed_distance(&self, x: &Vector) -> f64 {
        match &self.shape {
            Shape::Ball { radius } => radius - x.norm(),
            Shape::Annulus { r_in, r_out } => {
                let r = x.norm();
                (r - r_in).min(r_out - r)
            }
            Shape::Custom(ls) => ls.distance(x),
        }
    }

    /// `∇ℓ(x)` without the band check. Zero where the gradient is undefined
    /// (the centre of a ball).
    pub fn distance_gradient(&self, x: &Vector) -> Vector {
        match &self.shape {
            Shape::Ball { .. } => x.normalized().map_or(Vector::ZERO, |u| -u),
            Shape::Annulus { r_in, r_out } => {
                let r = x.norm();
                match x.normalized() {
                    None => Vector::ZERO,
                    Some(u) if r - r_in < r_out - r => u,
                    Some(u) => -u,
                }
            }
            Shape::Custom(ls) => ls.gradient(x),
        }
    }

    pub fn contains(&self, x: &Vector) -> bool {
        self.signed_distance(x) >= -self.containment_tolerance
    }

    /// Unit outward normal `-∇ℓ(x)`, valid only inside the band.
    pub fn outward_normal(&self, x: &Vector) -> Result<Vector> {
        let l = self.signed_distance(x);
        if l.abs() > self.band {
            return Err(Error::QueryOutsideBand { distance: l, band: self.band });
        }
        (-self.distance_gradient(x))
            .normalized()
            .ok_or(Error::QueryOutsideBand { distance: l, band: self.band })
    }

    /// Moves a point that roundoff left outside back onto the boundary.
    pub fn project_inside(&self, x: Vector) -> Vector {
        let l = self.signed_distance(&x);
        if l >= 0.0 {
            return x;
        }
        x - l * self.distance_gradient(&x)
    }

    /// Smallest `τ ∈ [0, dt]` at which `x + τv` meets the boundary with an
    /// outgoing velocity. `τ = 0` only when `x` already sits on the boundary
    /// moving outward. Tangential contacts are not hits.
    pub fn first_hit(&self, x: &Vector, v: &Vector, dt: f64) -> Result<Option<SurfaceHit>> {
        let speed = v.norm();
        if speed < MIN_FLIGHT_SPEED || dt <= 0.0 {
            return Ok(None);
        }
        let tau = match self.shape {
            Shape::Ball { radius } => exit_root(x, v, radius).filter(|t| *t <= dt),
            Shape::Annulus { r_in, r_out } => {
                let outer = exit_root(x, v, r_out);
                let inner = entry_root(x, v, r_in);
                match (inner, outer) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                }
                .filter(|t| *t <= dt)
            }
            Shape::Custom(_) => return self.march_hit(x, v, dt, speed),
        };
        let Some(tau) = tau else { return Ok(None) };
        let x_hit = *x + tau * *v;
        let n = self.closed_form_normal(&x_hit);
        if v.dot(&n) <= GRAZING_RATIO * speed {
            // Tangential contact with a convex wall: the flight stays in D̄.
            if let Shape::Annulus { r_out, .. } = self.shape {
                // A graze on the inner wall may still be followed by an exit.
                return Ok(exit_root(x, v, r_out)
                    .filter(|t| *t <= dt && *t > tau)
                    .map(|t| {
                        let x_hit = *x + t * *v;
                        SurfaceHit { tau: t, x_hit, n: self.closed_form_normal(&x_hit) }
                    })
                    .filter(|h| v.dot(&h.n) > GRAZING_RATIO * speed));
            }
            return Ok(None);
        }
        Ok(Some(SurfaceHit { tau, x_hit, n }))
    }

    fn closed_form_normal(&self, x: &Vector) -> Vector {
        match self.shape {
            Shape::Ball { .. } => x.normalized().unwrap_or(Vector::axis(0)),
            Shape::Annulus { r_in, r_out } => {
                let r = x.norm();
                let u = x.normalized().unwrap_or(Vector::axis(0));
                if r - r_in < r_out - r {
                    -u
                } else {
                    u
                }
            }
            Shape::Custom(_) => -self.distance_gradient(x).normalized().unwrap_or(Vector::ZERO),
        }
    }

    /// Sphere tracing with a floor step, then bisection on the first sign
    /// change of `ℓ` along the segment.
    fn march_hit(&self, x: &Vector, v: &Vector, dt: f64, speed: f64) -> Result<Option<SurfaceHit>> {
        let tol = self.containment_tolerance;
        let at = |t: f64| *x + t * *v;
        let l0 = self.signed_distance(x);
        if l0 <= tol && self.distance_gradient(x).dot(v) < 0.0 {
            let n = self.outward_normal(x)?;
            return Ok(Some(SurfaceHit { tau: 0.0, x_hit: *x, n }));
        }
        let floor = dt * 1e-4;
        let mut t0 = 0.0;
        let mut l_prev = l0;
        for _ in 0..MAX_MARCH_STEPS {
            if t0 >= dt {
                return Ok(None);
            }
            let step = (((l_prev - tol).max(0.0)) / speed).max(floor);
            let t1 = (t0 + step).min(dt);
            let l1 = self.signed_distance(&at(t1));
            if l1 < 0.0 {
                let (lo, hi) = (t0, t1);
                let tau = self.bisect(&at, lo, hi)?;
                let x_hit = at(tau);
                let n = self.outward_normal(&x_hit)?;
                if v.dot(&n) > GRAZING_RATIO * speed {
                    return Ok(Some(SurfaceHit { tau, x_hit, n }));
                }
            }
            t0 = t1;
            l_prev = l1;
        }
        Err(Error::RootNotBracketed)
    }

    fn bisect(&self, at: &impl Fn(f64) -> Vector, mut lo: f64, mut hi: f64) -> Result<f64> {
        let tol = self.containment_tolerance;
        for _ in 0..MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            let l = self.signed_distance(&at(mid));
            if l.abs() <= tol {
                return Ok(mid);
            }
            if l > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Err(Error::RootNotBracketed)
    }
}

/// Larger root of `|x + τv|² = r²`, i.e. where a flight from inside the
/// sphere leaves it. Clamped at zero for points already outside and moving
/// out.
fn exit_root(x: &Vector, v: &Vector, r: f64) -> Option<f64> {
    let a = v.norm_sq();
    let b = x.dot(v);
    let c = x.norm_sq() - r * r;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let root = if b <= 0.0 { (sq - b) / a } else { -c / (b + sq) };
    Some(root.max(0.0))
}

/// Smaller nonnegative root of `|x + τv|² = r²` for a flight that starts
/// outside the sphere and moves into it.
fn entry_root(x: &Vector, v: &Vector, r: f64) -> Option<f64> {
    let a = v.norm_sq();
    let b = x.dot(v);
    let c = x.norm_sq() - r * r;
    if b >= 0.0 {
        return None;
    }
    if c <= 0.0 {
        return Some(0.0);
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    Some(c / (disc.sqrt() - b))
}

/// Specular reflection `v - 2(v·n)n`.
#[inline]
pub fn reflect(v: &Vector, n: &Vector) -> Vector {
    *v - (2.0 * v.dot(n)) * *n
}
