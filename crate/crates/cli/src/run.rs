//! Experiment dispatch and run-directory artifacts.

use crate::config::{Emit, Experiment, RunConfig};
use crate::CliError;
use kinswarm::io::{
    write_common_path_csv, write_events_jsonl, write_points_csv, write_snapshots_csv, Check, Report, SCHEMA_VERSION,
};
use kinswarm::oracle::{ball_billiard, ball_billiard_hits};
use kinswarm::simulator::{gronwall_bound, invariant_summary, moment_monitor, MomentSeries};
use kinswarm::testfns::family;
use kinswarm::validator::{
    coupling_experiment, default_symmetry_bases, default_trace_observables, discrepancy_experiment,
    residual_report, scaling_experiment, specular_symmetry_check, trace_identity_check,
};
use kinswarm::{Domain, DomainSpec, SimConfig, Simulator, Trajectory};
use serde_json::{json, Value};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

pub const DEFAULT_OUTPUT_DIR: &str = "runs";
/// Snapshot times written to `snapshots.csv` when no spacing is configured.
pub const MAX_WRITTEN_SNAPSHOTS: usize = 101;

pub const SPEED_TOLERANCE: f64 = 1e-12;
pub const NORMAL_TOLERANCE: f64 = 1e-12;
pub const CONTAINMENT_TOLERANCE: f64 = 1e-9;
pub const SLOPE_RANGE: (f64, f64) = (-1.3, -0.7);
pub const RATIO_RANGE: (f64, f64) = (1.4, 2.8);
pub const TRACE_TOLERANCE: f64 = 0.15;
pub const SYMMETRY_JUMP_TOLERANCE: f64 = 1e-12;
pub const SYMMETRY_MAX_SE: f64 = 3.0;
pub const COUPLING_MAX_SLOPE: f64 = -0.3;
pub const ORACLE_TOLERANCE: f64 = 1e-9;
pub const RATE_TOLERANCE: f64 = 0.2;

/// Per-`N` summary written to `points.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct Points {
    pub n: Vec<usize>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

/// Everything an experiment produces, before anything is written.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub report: Report,
    /// The run whose snapshots, events and common path are written out.
    pub trajectory: Trajectory,
    pub points: Option<Points>,
}

struct Builder {
    checks: Vec<Check>,
    results: serde_json::Map<String, Value>,
}

impl Builder {
    fn new() -> Self {
        Builder { checks: Vec::new(), results: serde_json::Map::new() }
    }

    fn result(&mut self, key: &str, value: impl serde::Serialize) {
        self.results.insert(key.into(), serde_json::to_value(value).expect("results serialize"));
    }
}

fn domain_of(sim: &SimConfig) -> Result<Domain, CliError> {
    Ok(Domain::from_spec(&sim.domain, sim.dim)?)
}

fn invariant_checks(b: &mut Builder, traj: &Trajectory, domain: &Domain) {
    let inv = invariant_summary(traj, domain);
    b.checks.push(Check::at_most("speed_defect", inv.speed_defect, SPEED_TOLERANCE));
    if inv.events > 0 {
        b.checks.push(Check::at_least("min_incoming_normal_velocity", inv.min_incoming_normal, -NORMAL_TOLERANCE));
        b.checks.push(Check::at_most("max_outgoing_normal_velocity", inv.max_outgoing_normal, NORMAL_TOLERANCE));
    }
    b.checks.push(Check::at_least("min_signed_distance", inv.min_signed_distance, -CONTAINMENT_TOLERANCE));
    b.checks.push(Check::holds("events_time_ordered", inv.events_sorted));
    b.result("invariants", inv);
}

fn simulate_experiment(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let domain = domain_of(&cfg.sim)?;
    let traj = Simulator::new(cfg.sim.clone())?.simulate()?;
    let mut b = Builder::new();
    invariant_checks(&mut b, &traj, &domain);
    let sup = moment_monitor(&traj).sup();
    let bound = gronwall_bound(&cfg.sim);
    b.checks.push(Check::at_most("moment_sup", sup, bound));
    b.result("moment", json!({ "sup": sup, "bound": bound }));
    Ok(Outcome { report: finish(cfg, b), trajectory: traj, points: None })
}

fn converge_experiment(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let domain = domain_of(&cfg.sim)?;
    let fam = family(&domain, cfg.sim.init.velocity_scale(cfg.sim.dim), &cfg.psi);
    let mut base = cfg.sim.clone();
    base.record_every = 1;
    base.record_idiosyncratic_noise = true;
    let traj = Simulator::new(base)?.simulate()?;
    let mut b = Builder::new();
    b.result("residuals", residual_report(&traj, &fam)?);

    let scaling = scaling_experiment(&cfg.sim, &cfg.n_list(), cfg.replicas(), &fam)?;
    b.checks.push(Check::within("scaling_slope", scaling.fit.slope, Some(SLOPE_RANGE.0), Some(SLOPE_RANGE.1)));
    let points = Points { n: scaling.n_values.clone(), mean: scaling.mean_square.clone(), se: scaling.se.clone() };
    b.result("scaling", &scaling);

    if let Some(d) = &cfg.discrepancy {
        let rep = discrepancy_experiment(&cfg.sim, &[cfg.sim.dt, 0.5 * cfg.sim.dt], d.replicas, &fam)?;
        b.checks.push(Check::within("discrepancy_ratio", rep.ratios[0], Some(RATIO_RANGE.0), Some(RATIO_RANGE.1)));
        b.result("discrepancy", &rep);
    }
    Ok(Outcome { report: finish(cfg, b), trajectory: strip_increments(traj), points: Some(points) })
}

fn strip_increments(mut traj: Trajectory) -> Trajectory {
    traj.idiosyncratic_increments = None;
    traj
}

/// `|layer| / se`, infinite for a nonzero estimate with zero spread.
fn standardized(value: f64, se: f64) -> f64 {
    if value == 0.0 {
        0.0
    } else if se > 0.0 {
        value.abs() / se
    } else {
        f64::INFINITY
    }
}

fn boundary_experiment(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let domain = domain_of(&cfg.sim)?;
    let mut sim = cfg.sim.clone();
    sim.record_every = 1;
    let traj = Simulator::new(sim)?.simulate()?;
    let mut b = Builder::new();
    let ladder = cfg.delta_ladder();
    let trace = trace_identity_check(&traj, &domain, &default_trace_observables(cfg.sim.t_end), &ladder)?;
    for e in &trace.entries {
        let narrowest = *e.relative_error.last().expect("ladder is nonempty");
        b.checks.push(Check::at_most(format!("trace_relative_error_{}", e.observable), narrowest, TRACE_TOLERANCE));
        b.checks.push(Check::holds(format!("trace_ladder_monotone_{}", e.observable), e.ladder_monotone));
    }
    b.result("trace", &trace);

    let sym = specular_symmetry_check(&traj, &domain, &default_symmetry_bases(cfg.sim.t_end), cfg.symmetry_delta())?;
    for e in &sym.entries {
        b.checks.push(Check::at_most(format!("symmetry_jump_{}", e.observable), e.jump_sum.abs(), SYMMETRY_JUMP_TOLERANCE));
        b.checks.push(Check::at_most(
            format!("symmetry_layer_se_{}", e.observable),
            standardized(e.layer_flux, e.bootstrap_se),
            SYMMETRY_MAX_SE,
        ));
    }
    b.result("symmetry", &sym);
    Ok(Outcome { report: finish(cfg, b), trajectory: traj, points: None })
}

fn couple_experiment(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let rep = coupling_experiment(&cfg.sim, &cfg.n_list(), cfg.replicas(), &cfg.coupling)?;
    let mut b = Builder::new();
    b.checks.push(Check::holds("coupling_strictly_decreasing", rep.strictly_decreasing));
    b.checks.push(Check::at_most("coupling_slope", rep.fit.slope, COUPLING_MAX_SLOPE));
    let points = Points { n: rep.n_values.clone(), mean: rep.mean_distance.clone(), se: rep.se.clone() };
    b.result("coupling", &rep);
    let traj = Simulator::new(cfg.sim.clone())?.simulate()?;
    Ok(Outcome { report: finish(cfg, b), trajectory: traj, points: Some(points) })
}

/// Noiseless runs are compared against the closed-form billiard; noisy runs
/// compare reflection rates at `dt` and `dt/2` on shared Brownian paths.
fn oracle_experiment(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let domain = domain_of(&cfg.sim)?;
    let traj = Simulator::new(cfg.sim.clone())?.simulate()?;
    let mut b = Builder::new();
    invariant_checks(&mut b, &traj, &domain);
    let quiet = cfg.sim.noise.sigma == 0.0 && cfg.sim.noise.sigma_bar == 0.0;
    if quiet {
        let DomainSpec::Ball { radius } = cfg.sim.domain else {
            return Err(CliError::Invalid("the noiseless oracle needs a ball domain".into()));
        };
        let init = &traj.snapshots[0];
        let mut position_error = 0.0f64;
        for s in &traj.snapshots {
            for i in 0..s.len() {
                let (x, _) = ball_billiard(radius, init.x[i], init.v[i], s.t);
                position_error = position_error.max((s.x[i] - x).norm());
            }
        }
        let last = traj.final_state();
        let mut velocity_error = 0.0f64;
        let mut mismatches = 0usize;
        for i in 0..last.len() {
            let (_, v) = ball_billiard(radius, init.x[i], init.v[i], last.t);
            velocity_error = velocity_error.max((last.v[i] - v).norm());
            let hits = traj.events.iter().filter(|e| e.particle == i).count();
            if hits != ball_billiard_hits(radius, init.x[i], init.v[i], last.t) {
                mismatches += 1;
            }
        }
        b.checks.push(Check::at_most("max_position_error", position_error, ORACLE_TOLERANCE));
        b.checks.push(Check::at_most("final_velocity_error", velocity_error, ORACLE_TOLERANCE));
        b.checks.push(Check::at_most("hit_count_mismatches", mismatches as f64, 0.0));
        b.result(
            "billiard",
            json!({
                "max_position_error": position_error,
                "final_velocity_error": velocity_error,
                "events": traj.events.len(),
                "hit_count_mismatches": mismatches,
            }),
        );
    } else {
        let coarse_sim = Simulator::new(cfg.sim.clone())?;
        let coarse = coarse_sim.simulate_with(&coarse_sim.streams().with_substeps(2))?;
        let mut fine_cfg = cfg.sim.clone();
        fine_cfg.dt *= 0.5;
        fine_cfg.record_every *= 2;
        let fine = Simulator::new(fine_cfg)?.simulate()?;
        let rate = |t: &Trajectory| t.events.len() as f64 / (t.n() as f64 * t.config.t_end.max(f64::MIN_POSITIVE));
        let (r_coarse, r_fine) = (rate(&coarse), rate(&fine));
        let change = if r_fine > 0.0 { (r_coarse - r_fine).abs() / r_fine } else { r_coarse };
        b.checks.push(Check::holds("reflection_rates_finite", r_coarse.is_finite() && r_fine.is_finite()));
        b.checks.push(Check::at_most("reflection_rate_relative_change", change, RATE_TOLERANCE));
        let per_particle_max = (0..fine.n())
            .map(|i| fine.events.iter().filter(|e| e.particle == i).count())
            .max()
            .unwrap_or(0);
        b.result(
            "reflection_rates",
            json!({
                "dt": cfg.sim.dt,
                "rate_dt": r_coarse,
                "rate_half_dt": r_fine,
                "relative_change": change,
                "max_events_per_particle_half_dt": per_particle_max,
            }),
        );
    }
    Ok(Outcome { report: finish(cfg, b), trajectory: traj, points: None })
}

fn finish(cfg: &RunConfig, b: Builder) -> Report {
    Report {
        schema_version: SCHEMA_VERSION,
        experiment: cfg.experiment.name().into(),
        master_seed: cfg.sim.noise.master_seed,
        checks: b.checks,
        warnings: cfg.sim.warnings(),
        results: Value::Object(b.results),
    }
}

/// Runs the configured experiment without touching the filesystem.
pub fn execute(cfg: &RunConfig) -> Result<Outcome, CliError> {
    cfg.validate()?;
    match cfg.experiment {
        Experiment::Simulate => simulate_experiment(cfg),
        Experiment::Converge => converge_experiment(cfg),
        Experiment::Boundary => boundary_experiment(cfg),
        Experiment::Couple => couple_experiment(cfg),
        Experiment::Oracle => oracle_experiment(cfg),
    }
}

/// Creates a fresh `<out>/<experiment>-<unix seconds>-s<seed>` directory,
/// adding a numeric suffix rather than reusing an existing one.
pub fn create_run_dir(out: &Path, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    fs::create_dir_all(out)?;
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let stem = format!("{}-{}-s{}", cfg.experiment.name(), secs, cfg.sim.noise.master_seed);
    for k in 0u32.. {
        let dir = if k == 0 { out.join(&stem) } else { out.join(format!("{stem}-{k}")) };
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("the suffix search is unbounded")
}

fn write_file(path: PathBuf, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn to_pretty<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Recorded snapshot indices written out: every `stride`-th plus the last.
pub fn written_snapshots(recorded: usize, stride: Option<usize>) -> Vec<usize> {
    if recorded == 0 {
        return Vec::new();
    }
    let stride = stride.unwrap_or_else(|| (recorded - 1).div_ceil(MAX_WRITTEN_SNAPSHOTS - 1).max(1));
    let mut idx: Vec<usize> = (0..recorded).step_by(stride).collect();
    if idx.last() != Some(&(recorded - 1)) {
        idx.push(recorded - 1);
    }
    idx
}

fn moment_json(series: &MomentSeries) -> Value {
    json!({ "t": series.t, "second_moment": series.second_moment, "running_sup": series.running_sup })
}

/// Writes every artifact of `outcome` into `dir`.
pub fn write_artifacts(dir: &Path, cfg: &RunConfig, outcome: &Outcome) -> Result<(), CliError> {
    let traj = &outcome.trajectory;
    let dim = cfg.sim.dim;
    fs::write(dir.join("config_echo.json"), to_pretty(cfg))?;
    if cfg.emits(Emit::Csv) {
        let idx = written_snapshots(traj.snapshots.len(), cfg.snapshot_every);
        write_file(dir.join("snapshots.csv"), |w| write_snapshots_csv(w, dim, idx.iter().map(|&k| &traj.snapshots[k])))?;
        write_file(dir.join("common_path.csv"), |w| write_common_path_csv(w, traj))?;
        if let Some(p) = &outcome.points {
            write_file(dir.join("points.csv"), |w| write_points_csv(w, &p.n, &p.mean, &p.se))?;
        }
    }
    if cfg.emits(Emit::Jsonl) {
        write_file(dir.join("events.jsonl"), |w| write_events_jsonl(w, dim, &traj.events))?;
    }
    if cfg.emits(Emit::Json) {
        fs::write(dir.join("moments.json"), to_pretty(&moment_json(&moment_monitor(traj))))?;
    }
    fs::write(dir.join("report.json"), to_pretty(&outcome.report))?;
    Ok(())
}

/// Validates, runs and writes a fresh run directory under `out` (or the
/// configured output directory).
pub fn run(cfg: &RunConfig, out: Option<&Path>) -> Result<(PathBuf, Report), CliError> {
    let outcome = execute(cfg)?;
    let out = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    let dir = create_run_dir(&out, cfg)?;
    write_artifacts(&dir, cfg, &outcome)?;
    Ok((dir, outcome.report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_selection_keeps_first_and_last() {
        assert_eq!(written_snapshots(1, None), vec![0]);
        assert_eq!(written_snapshots(5, None), vec![0, 1, 2, 3, 4]);
        let idx = written_snapshots(1001, None);
        assert_eq!(idx.len(), 101);
        assert_eq!(idx[1], 10);
        assert_eq!(written_snapshots(10, Some(4)), vec![0, 4, 8, 9]);
        assert!(written_snapshots(0, None).is_empty());
    }

    #[test]
    fn standardized_handles_zero_spread() {
        assert_eq!(standardized(0.0, 0.0), 0.0);
        assert_eq!(standardized(1.0, 0.0), f64::INFINITY);
        assert_eq!(standardized(-0.5, 0.25), 2.0);
    }

    #[test]
    fn run_directories_are_never_reused() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg: RunConfig = serde_json::from_value(json!({
            "experiment": "simulate",
            "sim": SimConfig::standard(),
        }))
        .unwrap();
        let a = create_run_dir(tmp.path(), &cfg).unwrap();
        let b = create_run_dir(tmp.path(), &cfg).unwrap();
        assert_ne!(a, b);
        assert!(a.is_dir() && b.is_dir());
    }
}
