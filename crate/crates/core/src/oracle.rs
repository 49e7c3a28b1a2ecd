//! Closed-form billiard flow in a ball, used as an independent reference
//! for the simulator.

use crate::vector::Vector;

/// Position and velocity at time `t` of a free particle started at `x0`
/// with velocity `v0` inside the ball of radius `radius` centred at the
/// origin, with specular reflection.
///
/// After the first hit every chord has the same length `2R cos α`, where `α`
/// is the angle of incidence, and successive hit points are rotations of
/// each other by `π − 2α` in the plane spanned by the first hit point and
/// the reflected velocity.
pub fn ball_billiard(radius: f64, x0: Vector, v0: Vector, t: f64) -> (Vector, Vector) {
    let speed = v0.norm();
    if speed == 0.0 {
        return (x0, v0);
    }
    // First hit: larger root of |x0 + τ v0|² = R².
    let a = speed * speed;
    let b = x0.dot(&v0);
    let c = x0.norm_sq() - radius * radius;
    let tau = (-b + (b * b - a * c).sqrt()) / a;
    if t < tau {
        return (x0 + v0 * t, v0);
    }
    let p1 = x0 + v0 * tau;
    let n1 = p1 * (1.0 / radius);
    let vn = v0.dot(&n1);
    let w1 = v0 - n1 * (2.0 * vn);
    let cos_alpha = vn / speed;
    let period = 2.0 * radius * cos_alpha / speed;
    let angle = std::f64::consts::PI - 2.0 * cos_alpha.clamp(-1.0, 1.0).acos();
    // Orthonormal frame (e1, e2) of the plane of motion.
    let e1 = n1;
    let tangential = w1 - e1 * w1.dot(&e1);
    let e2 = tangential.normalized().unwrap_or_else(|| any_orthogonal(&e1));
    let rotate = |u: Vector, th: f64| {
        let (s, co) = th.sin_cos();
        let (p, q) = (u.dot(&e1), u.dot(&e2));
        let rest = u - e1 * p - e2 * q;
        rest + e1 * (co * p - s * q) + e2 * (s * p + co * q)
    };
    let elapsed = t - tau;
    let hits = if period > 0.0 { (elapsed / period).floor() } else { 0.0 };
    let remaining = elapsed - hits * period;
    let th = hits * angle;
    let p = rotate(p1, th);
    let w = rotate(w1, th);
    (p + w * remaining, w)
}

fn any_orthogonal(e: &Vector) -> Vector {
    let k = if e[0].abs() < 0.9 { 0 } else { 1 };
    let a = Vector::axis(k);
    (a - *e * a.dot(e)).normalized().expect("axis not parallel to e")
}

/// Number of wall hits in `(0, t]` for the same flow.
pub fn ball_billiard_hits(radius: f64, x0: Vector, v0: Vector, t: f64) -> usize {
    let speed = v0.norm();
    if speed == 0.0 {
        return 0;
    }
    let a = speed * speed;
    let b = x0.dot(&v0);
    let c = x0.norm_sq() - radius * radius;
    let tau = (-b + (b * b - a * c).sqrt()) / a;
    if t < tau {
        return 0;
    }
    let n1 = (x0 + v0 * tau) * (1.0 / radius);
    let period = 2.0 * radius * v0.dot(&n1) / a;
    1 + ((t - tau) / period).floor() as usize
}
