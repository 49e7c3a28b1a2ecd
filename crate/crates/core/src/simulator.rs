//! Time stepping of the reflected N-particle system.
//!
//! One step of length `dt` is a splitting:
//!
//! 1. drift `F_i = (1/N) Σ_j H(X_i - X_j, V_i - V_j)` from the pre-step snapshot,
//! 2. `V_i ← V_i + F_i dt + √(2σ) ΔB_i + √(2σ̄) ΔW̄`,
//! 3. billiard flight of duration `dt` with exact specular reflections.

use crate::error::{Error, Result};
use crate::geometry::{reflect, Domain, DomainSpec, Shape};
use crate::kernels::{all_drifts, KernelSpec};
use crate::noise::{Increments, NoiseConfig, NoiseStreams};
use crate::vector::Vector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

fn default_max_reflections() -> usize {
    64
}

fn one() -> usize {
    1
}

fn default_margin() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "d")]
    pub dim: usize,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub dt: f64,
    pub domain: DomainSpec,
    pub kernel: KernelSpec,
    pub noise: NoiseConfig,
    pub init: InitialLaw,
    #[serde(default = "default_max_reflections")]
    pub max_reflections_per_step: usize,
    #[serde(default = "one")]
    pub record_every: usize,
    #[serde(default)]
    pub record_idiosyncratic_noise: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialLaw {
    pub spatial: SpatialLaw,
    pub velocity: VelocityLaw,
    /// Required lower bound of `ℓ` on the spatial support.
    #[serde(default = "default_margin")]
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpatialLaw {
    UniformBall {
        #[serde(default)]
        center: Vec<f64>,
        radius: f64,
    },
    /// Particle `i` starts at `points[i % points.len()]`.
    FixedPoints { points: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocityLaw {
    Gaussian {
        #[serde(default)]
        mean: Vec<f64>,
        std: f64,
    },
    /// Particle `i` starts with `vectors[i % vectors.len()]`.
    Fixed { vectors: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub t: f64,
    pub x: Vec<Vector>,
    pub v: Vec<Vector>,
}

impl SystemState {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// `(1/N) Σ (|X_i|² + |V_i|²)`.
    pub fn second_moment(&self) -> f64 {
        let s: f64 = self.x.iter().zip(&self.v).map(|(x, v)| x.norm_sq() + v.norm_sq()).sum();
        s / self.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectionEvent {
    pub t_hit: f64,
    pub particle: usize,
    pub x: Vector,
    /// Unit outward normal at `x`.
    pub n: Vector,
    pub v_pre: Vector,
    pub v_post: Vector,
}

/// A reflection inside one flight, timed from the start of the flight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounce {
    pub offset: f64,
    pub x: Vector,
    pub n: Vector,
    pub v_pre: Vector,
    pub v_post: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Flight {
    pub x: Vector,
    pub v: Vector,
    pub bounces: Vec<Bounce>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub config: SimConfig,
    pub snapshots: Vec<SystemState>,
    pub events: Vec<ReflectionEvent>,
    /// Cumulative `W̄` at every step time `k·dt`, starting from zero.
    pub common_path: Vec<Vector>,
    /// `ΔB` of every step, indexed `[step][particle]`.
    pub idiosyncratic_increments: Option<Vec<Vec<Vector>>>,
}

impl Trajectory {
    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn steps(&self) -> usize {
        self.common_path.len() - 1
    }

    pub fn final_state(&self) -> &SystemState {
        self.snapshots.last().expect("trajectory always holds the initial snapshot")
    }

    /// `ΔW̄` of step `k`.
    pub fn common_increment(&self, k: usize) -> Vector {
        self.common_path[k + 1] - self.common_path[k]
    }

    pub fn every_step_recorded(&self) -> bool {
        self.config.record_every == 1 && self.snapshots.len() == self.common_path.len()
    }
}

impl SimConfig {
    /// Number of steps, requiring `T` to be a whole number of steps.
    pub fn step_count(&self) -> Result<usize> {
        let k = (self.t_end / self.dt).round();
        if (k * self.dt - self.t_end).abs() > 1e-9 * self.t_end.max(self.dt) {
            return Err(Error::InvalidConfig(format!(
                "horizon T = {} is not a multiple of dt = {}",
                self.t_end, self.dt
            )));
        }
        Ok(k as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n == 0 {
            return bad("N must be at least 1".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad(format!("T must be nonnegative, got {}", self.t_end));
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1".into());
        }
        if self.max_reflections_per_step == 0 {
            return bad("max_reflections_per_step must be at least 1".into());
        }
        self.kernel.validate()?;
        self.noise.validate()?;
        self.step_count()?;
        let domain = Domain::from_spec(&self.domain, self.dim)?;
        self.init.validate(&domain)?;
        Ok(())
    }

    /// Non-fatal advice about the step size.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Ok(domain) = Domain::from_spec(&self.domain, self.dim) {
            let speed = self.init.expected_speed(self.dim);
            let travel = self.dt * (self.kernel.sup_norm() + speed);
            if travel > 0.05 * domain.diameter {
                out.push(format!(
                    "dt·(|H|∞ + speed) = {travel:.3e} is large relative to the domain diameter {}",
                    domain.diameter
                ));
            }
        }
        out
    }
}

fn to_vector(v: &[f64], dim: usize, what: &str) -> Result<Vector> {
    if v.len() != dim {
        return Err(Error::InvalidConfig(format!("{what} has {} components, expected {dim}", v.len())));
    }
    Ok(Vector::from_slice(v))
}

fn optional_vector(v: &[f64], dim: usize, what: &str) -> Result<Vector> {
    if v.is_empty() {
        Ok(Vector::ZERO)
    } else {
        to_vector(v, dim, what)
    }
}

impl SimConfig {
    /// Ball of radius 1 in the plane, Cucker–Smale alignment and both noises
    /// at strength 0.25; 256 particles started uniformly in the disc of
    /// radius 0.5 with standard Gaussian velocities, run to `T = 1` at
    /// `dt = 1e-3`.
    pub fn standard() -> Self {
        SimConfig {
            n: 256,
            dim: 2,
            t_end: 1.0,
            dt: 1e-3,
            domain: DomainSpec::Ball { radius: 1.0 },
            kernel: KernelSpec::CuckerSmale { lambda: 1.0, beta: 0.5, v_clip: 10.0 },
            noise: NoiseConfig { sigma: 0.25, sigma_bar: 0.25, master_seed: 0 },
            init: InitialLaw {
                spatial: SpatialLaw::UniformBall { center: Vec::new(), radius: 0.5 },
                velocity: VelocityLaw::Gaussian { mean: Vec::new(), std: 1.0 },
                margin: default_margin(),
            },
            max_reflections_per_step: default_max_reflections(),
            record_every: 1,
            record_idiosyncratic_noise: false,
        }
    }
}

impl InitialLaw {
    pub fn validate(&self, domain: &Domain) -> Result<()> {
        let dim = domain.dim;
        if !(self.margin > 0.0) {
            return Err(Error::InvalidConfig("initial support margin must be positive".into()));
        }
        if self.margin >= domain.inradius {
            return Err(Error::UnsatisfiableSupport { margin: self.margin, inradius: domain.inradius });
        }
        match &self.spatial {
            SpatialLaw::UniformBall { center, radius } => {
                let c = optional_vector(center, dim, "initial center")?;
                if !(*radius >= 0.0) {
                    return Err(Error::InvalidConfig("initial radius must be nonnegative".into()));
                }
                if let Some(worst) = ball_support_margin(domain, &c, *radius) {
                    if worst < self.margin {
                        return Err(Error::InvalidConfig(format!(
                            "initial ball reaches within {worst:.3e} of the boundary, margin is {}",
                            self.margin
                        )));
                    }
                }
            }
            SpatialLaw::FixedPoints { points } => {
                if points.is_empty() {
                    return Err(Error::InvalidConfig("fixed_points needs at least one point".into()));
                }
                for p in points {
                    let p = to_vector(p, dim, "initial point")?;
                    if domain.signed_distance(&p) < self.margin {
                        return Err(Error::InvalidConfig(format!(
                            "initial point {:?} violates the support margin",
                            p.components(dim)
                        )));
                    }
                }
            }
        }
        match &self.velocity {
            VelocityLaw::Gaussian { mean, std } => {
                optional_vector(mean, dim, "velocity mean")?;
                if !(*std >= 0.0 && std.is_finite()) {
                    return Err(Error::InvalidConfig("velocity std must be nonnegative".into()));
                }
            }
            VelocityLaw::Fixed { vectors } => {
                if vectors.is_empty() {
                    return Err(Error::InvalidConfig("fixed velocities need at least one vector".into()));
                }
                for v in vectors {
                    to_vector(v, dim, "initial velocity")?;
                }
            }
        }
        Ok(())
    }

    /// `E|X_0|² + E|V_0|²` for a population of `n` particles.
    pub fn second_moment(&self, dim: usize, n: usize) -> f64 {
        let d = dim as f64;
        let spatial = match &self.spatial {
            SpatialLaw::UniformBall { center, radius } => {
                Vector::from_slice(center).norm_sq() + radius * radius * d / (d + 2.0)
            }
            SpatialLaw::FixedPoints { points } => cyclic_mean_sq(points, n),
        };
        let velocity = match &self.velocity {
            VelocityLaw::Gaussian { mean, std } => Vector::from_slice(mean).norm_sq() + d * std * std,
            VelocityLaw::Fixed { vectors } => cyclic_mean_sq(vectors, n),
        };
        spatial + velocity
    }

    /// Typical per-component velocity, used to size velocity test functions.
    pub fn velocity_scale(&self, dim: usize) -> f64 {
        let s = self.expected_speed(dim) / (dim as f64).sqrt();
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }

    fn expected_speed(&self, dim: usize) -> f64 {
        match &self.velocity {
            VelocityLaw::Gaussian { mean, std } => {
                (Vector::from_slice(mean).norm_sq() + dim as f64 * std * std).sqrt()
            }
            VelocityLaw::Fixed { vectors } => {
                vectors.iter().map(|v| Vector::from_slice(v).norm()).fold(0.0, f64::max)
            }
        }
    }
}

fn cyclic_mean_sq(points: &[Vec<f64>], n: usize) -> f64 {
    (0..n).map(|i| Vector::from_slice(&points[i % points.len()]).norm_sq()).sum::<f64>() / n as f64
}

/// Minimum of `ℓ` over a ball of initial positions, when available in
/// closed form.
fn ball_support_margin(domain: &Domain, c: &Vector, radius: f64) -> Option<f64> {
    let r = c.norm();
    match domain.shape {
        Shape::Ball { radius: big } => Some(big - r - radius),
        Shape::Annulus { r_in, r_out } => Some((r - radius - r_in).min(r_out - r - radius)),
        Shape::Custom(_) => None,
    }
}

/// Draws `n` i.i.d. initial particles.
pub fn sample_initial(init: &InitialLaw, n: usize, domain: &Domain, streams: &NoiseStreams) -> Result<SystemState> {
    init.validate(domain)?;
    let dim = domain.dim;
    let draw = |i: usize| -> Result<(Vector, Vector)> {
        let x = match &init.spatial {
            SpatialLaw::UniformBall { center, radius } => {
                let c = Vector::from_slice(center);
                let z = streams.initial_normals(i, 0);
                let u = streams.initial_uniforms(i, 1)[0];
                let dir = Vector::from_slice(&z[..dim]).normalized().unwrap_or(Vector::axis(0));
                c + dir * (radius * u.powf(1.0 / dim as f64))
            }
            SpatialLaw::FixedPoints { points } => Vector::from_slice(&points[i % points.len()]),
        };
        if domain.signed_distance(&x) < init.margin {
            return Err(Error::InvalidConfig(format!(
                "initial particle {i} at {:?} violates the support margin",
                x.components(dim)
            )));
        }
        let v = match &init.velocity {
            VelocityLaw::Gaussian { mean, std } => {
                let z = streams.initial_normals(i, 2);
                Vector::from_slice(mean) + Vector::from_slice(&z[..dim]) * *std
            }
            VelocityLaw::Fixed { vectors } => Vector::from_slice(&vectors[i % vectors.len()]),
        };
        Ok((x, v))
    };
    let pairs: Vec<(Vector, Vector)> = (0..n).into_par_iter().map(draw).collect::<Result<_>>()?;
    let (x, v) = pairs.into_iter().unzip();
    Ok(SystemState { t: 0.0, x, v })
}

/// Billiard flight of duration `dt` at constant speed between reflections.
pub fn advance_with_reflections(
    x: Vector,
    v: Vector,
    dt: f64,
    domain: &Domain,
    max_reflections: usize,
) -> Result<Flight> {
    let mut x = x;
    let mut v = v;
    let mut elapsed = 0.0;
    let mut bounces = Vec::new();
    loop {
        let remaining = dt - elapsed;
        match domain.first_hit(&x, &v, remaining)? {
            None => {
                x = domain.project_inside(x + remaining * v);
                break;
            }
            Some(hit) => {
                if bounces.len() == max_reflections {
                    return Err(Error::MaxReflectionsExceeded { particle: 0, limit: max_reflections, t: elapsed });
                }
                let v_post = reflect(&v, &hit.n);
                elapsed += hit.tau;
                bounces.push(Bounce { offset: elapsed, x: hit.x_hit, n: hit.n, v_pre: v, v_post });
                x = domain.project_inside(hit.x_hit);
                v = v_post;
            }
        }
    }
    Ok(Flight { x, v, bounces })
}

/// A validated configuration together with its runtime domain.
#[derive(Clone, Debug)]
pub struct Simulator {
    pub config: SimConfig,
    pub domain: Domain,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let domain = Domain::from_spec(&config.domain, config.dim)?;
        Ok(Simulator { config, domain })
    }

    /// Runs on a caller-supplied domain, e.g. a custom level set.
    pub fn with_domain(config: SimConfig, domain: Domain) -> Result<Self> {
        config.validate()?;
        if domain.dim != config.dim {
            return Err(Error::InvalidConfig("domain dimension differs from d".into()));
        }
        config.init.validate(&domain)?;
        Ok(Simulator { config, domain })
    }

    pub fn streams(&self) -> NoiseStreams {
        NoiseStreams::new(self.config.noise.master_seed, self.config.dim)
    }

    /// Advances `state` by one step using the given increments.
    pub fn step(&self, state: &SystemState, inc: &Increments) -> Result<(SystemState, Vec<ReflectionEvent>)> {
        let cfg = &self.config;
        let dt = cfg.dt;
        let drift = all_drifts(&cfg.kernel, &state.x, &state.v);
        let a = (2.0 * cfg.noise.sigma).sqrt();
        let b = (2.0 * cfg.noise.sigma_bar).sqrt();
        let common = inc.dw * b;
        let flights: Vec<Flight> = (0..state.len())
            .into_par_iter()
            .map(|i| {
                let v = state.v[i] + drift[i] * dt + inc.db[i] * a + common;
                advance_with_reflections(state.x[i], v, dt, &self.domain, cfg.max_reflections_per_step).map_err(
                    |e| match e {
                        Error::MaxReflectionsExceeded { limit, t, .. } => {
                            Error::MaxReflectionsExceeded { particle: i, limit, t: state.t + t }
                        }
                        other => other,
                    },
                )
            })
            .collect::<Result<_>>()?;
        let mut events = Vec::new();
        let mut x = Vec::with_capacity(flights.len());
        let mut v = Vec::with_capacity(flights.len());
        for (i, f) in flights.into_iter().enumerate() {
            events.extend(f.bounces.iter().map(|b| ReflectionEvent {
                t_hit: state.t + b.offset,
                particle: i,
                x: b.x,
                n: b.n,
                v_pre: b.v_pre,
                v_post: b.v_post,
            }));
            x.push(f.x);
            v.push(f.v);
        }
        events.sort_by(|p, q| p.t_hit.total_cmp(&q.t_hit).then(p.particle.cmp(&q.particle)));
        Ok((SystemState { t: state.t + dt, x, v }, events))
    }

    pub fn simulate(&self) -> Result<Trajectory> {
        self.simulate_with(&self.streams())
    }

    /// Runs with explicit noise streams (forked or re-keyed).
    pub fn simulate_with(&self, streams: &NoiseStreams) -> Result<Trajectory> {
        let initial = sample_initial(&self.config.init, self.config.n, &self.domain, streams)?;
        self.simulate_from(initial, streams)
    }

    pub fn simulate_from(&self, initial: SystemState, streams: &NoiseStreams) -> Result<Trajectory> {
        let cfg = &self.config;
        let steps = cfg.step_count()?;
        let mut snapshots = vec![initial.clone()];
        let mut events = Vec::new();
        let mut common_path = Vec::with_capacity(steps + 1);
        common_path.push(Vector::ZERO);
        let mut idio = cfg.record_idiosyncratic_noise.then(|| Vec::with_capacity(steps));
        let mut state = initial;
        for k in 0..steps {
            let inc = streams.sample_increments(k as u64, cfg.dt, cfg.n);
            let (mut next, ev) = self.step(&state, &inc)?;
            next.t = (k + 1) as f64 * cfg.dt;
            events.extend(ev);
            common_path.push(*common_path.last().unwrap() + inc.dw);
            if let Some(rec) = idio.as_mut() {
                rec.push(inc.db);
            }
            if (k + 1) % cfg.record_every == 0 || k + 1 == steps {
                snapshots.push(next.clone());
            }
            state = next;
        }
        Ok(Trajectory {
            config: cfg.clone(),
            snapshots,
            events,
            common_path,
            idiosyncratic_increments: idio,
        })
    }
}

/// Convenience wrapper: validate, build and run.
pub fn simulate(config: &SimConfig) -> Result<Trajectory> {
    Simulator::new(config.clone())?.simulate()
}

/// Gronwall bound on `E sup_t (|X_t|² + |V_t|²)`:
/// `e^{(2+16σ+16σ̄)T} (E[|X_0|²+|V_0|²] + (‖H‖∞² + 2d(σ+σ̄)) T)`.
pub fn gronwall_bound(config: &SimConfig) -> f64 {
    let s = config.noise.sigma;
    let sb = config.noise.sigma_bar;
    let t = config.t_end;
    let h = config.kernel.sup_norm();
    let m0 = config.init.second_moment(config.dim, config.n);
    ((2.0 + 16.0 * s + 16.0 * sb) * t).exp() * (m0 + (h * h + 2.0 * config.dim as f64 * (s + sb)) * t)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentSeries {
    pub t: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub running_sup: Vec<f64>,
}

impl MomentSeries {
    pub fn sup(&self) -> f64 {
        self.running_sup.last().copied().unwrap_or(0.0)
    }
}

pub fn moment_monitor(traj: &Trajectory) -> MomentSeries {
    let t = traj.snapshots.iter().map(|s| s.t).collect();
    let second_moment: Vec<f64> = traj.snapshots.iter().map(SystemState::second_moment).collect();
    let running_sup = second_moment
        .iter()
        .scan(f64::NEG_INFINITY, |m, x| {
            *m = m.max(*x);
            Some(*m)
        })
        .collect();
    MomentSeries { t, second_moment, running_sup }
}

/// Worst cases of the reflection and containment invariants of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantSummary {
    pub events: usize,
    /// `max ||v_post| − |v_pre|| / (1 + |v_pre|)`.
    pub speed_defect: f64,
    /// `min v_pre·n`; incoming velocities point outwards.
    pub min_incoming_normal: f64,
    /// `max v_post·n`; outgoing velocities point inwards.
    pub max_outgoing_normal: f64,
    /// `min ℓ(X)` over recorded snapshots.
    pub min_signed_distance: f64,
    pub events_sorted: bool,
}

pub fn invariant_summary(traj: &Trajectory, domain: &Domain) -> InvariantSummary {
    let mut out = InvariantSummary {
        events: traj.events.len(),
        speed_defect: 0.0,
        min_incoming_normal: f64::INFINITY,
        max_outgoing_normal: f64::NEG_INFINITY,
        min_signed_distance: f64::INFINITY,
        events_sorted: traj.events.windows(2).all(|w| w[0].t_hit <= w[1].t_hit),
    };
    for e in &traj.events {
        let pre = e.v_pre.norm();
        out.speed_defect = out.speed_defect.max((e.v_post.norm() - pre).abs() / (1.0 + pre));
        out.min_incoming_normal = out.min_incoming_normal.min(e.v_pre.dot(&e.n));
        out.max_outgoing_normal = out.max_outgoing_normal.max(e.v_post.dot(&e.n));
    }
    for s in &traj.snapshots {
        for x in &s.x {
            out.min_signed_distance = out.min_signed_distance.min(domain.signed_distance(x));
        }
    }
    out
}

/// Mean of `|V_{t+δ} - V_t|` over particles and snapshot pairs `δ` apart.
pub fn increment_diagnostic(traj: &Trajectory, delta: f64) -> Result<f64> {
    let spacing = traj.config.dt * traj.config.record_every as f64;
    if delta < traj.config.dt * (1.0 - 1e-9) {
        return Err(Error::InvalidConfig(format!("lag {delta} is below dt = {}", traj.config.dt)));
    }
    let lag = ((delta / spacing).round() as usize).max(1);
    let snaps = &traj.snapshots;
    if snaps.len() <= lag {
        return Err(Error::InvalidConfig(format!("lag {delta} exceeds the recorded horizon")));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (a, b) in snaps.iter().zip(&snaps[lag..]) {
        for (va, vb) in a.v.iter().zip(&b.v) {
            total += (*vb - *va).norm();
            count += 1;
        }
    }
    Ok(total / count as f64)
}
