//! Run artifacts: trajectory tables, event logs and the JSON report.

use crate::simulator::{ReflectionEvent, SystemState, Trajectory};
use serde::{Deserialize, Serialize};
use std::io::{self, Write};

pub const SCHEMA_VERSION: u32 = 1;

fn axis_header(prefix: &str, dim: usize) -> String {
    (0..dim).map(|c| format!("{prefix}{c}")).collect::<Vec<_>>().join(",")
}

/// `t,particle,x0..,v0..`, one row per particle per written snapshot.
pub fn write_snapshots_csv<'a, W: Write>(
    mut w: W,
    dim: usize,
    snapshots: impl IntoIterator<Item = &'a SystemState>,
) -> io::Result<()> {
    writeln!(w, "t,particle,{},{}", axis_header("x", dim), axis_header("v", dim))?;
    for s in snapshots {
        for (i, (x, v)) in s.x.iter().zip(&s.v).enumerate() {
            write!(w, "{},{}", s.t, i)?;
            for c in 0..dim {
                write!(w, ",{}", x[c])?;
            }
            for c in 0..dim {
                write!(w, ",{}", v[c])?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// One JSON object per reflection event.
pub fn write_events_jsonl<W: Write>(mut w: W, dim: usize, events: &[ReflectionEvent]) -> io::Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        t_hit: f64,
        particle: usize,
        x: &'a [f64],
        n: &'a [f64],
        v_pre: &'a [f64],
        v_post: &'a [f64],
    }
    for e in events {
        let row = Row {
            t_hit: e.t_hit,
            particle: e.particle,
            x: e.x.components(dim),
            n: e.n.components(dim),
            v_pre: e.v_pre.components(dim),
            v_post: e.v_post.components(dim),
        };
        serde_json::to_writer(&mut w, &row)?;
        writeln!(w)?;
    }
    Ok(())
}

/// `t,w0..`: the cumulative common noise at every step time.
pub fn write_common_path_csv<W: Write>(mut w: W, traj: &Trajectory) -> io::Result<()> {
    let dim = traj.config.dim;
    writeln!(w, "t,{}", axis_header("w", dim))?;
    for (k, p) in traj.common_path.iter().enumerate() {
        write!(w, "{}", k as f64 * traj.dt())?;
        for c in 0..dim {
            write!(w, ",{}", p[c])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// `N,mean,se`.
pub fn write_points_csv<W: Write>(mut w: W, n: &[usize], mean: &[f64], se: &[f64]) -> io::Result<()> {
    writeln!(w, "N,mean,se")?;
    for ((k, m), s) in n.iter().zip(mean).zip(se) {
        writeln!(w, "{k},{m},{s}")?;
    }
    Ok(())
}

/// A pass/fail verdict against a closed interval; open ends are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub pass: bool,
}

impl Check {
    pub fn within(name: impl Into<String>, value: f64, lower: Option<f64>, upper: Option<f64>) -> Self {
        let pass = value.is_finite() && lower.is_none_or(|l| value >= l) && upper.is_none_or(|u| value <= u);
        Check { name: name.into(), value, lower, upper, pass }
    }

    pub fn at_most(name: impl Into<String>, value: f64, upper: f64) -> Self {
        Self::within(name, value, None, Some(upper))
    }

    pub fn at_least(name: impl Into<String>, value: f64, lower: f64) -> Self {
        Self::within(name, value, Some(lower), None)
    }

    /// A boolean condition, recorded as value 1 or 0 against lower bound 1.
    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self::at_least(name, if ok { 1.0 } else { 0.0 }, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub experiment: String,
    pub master_seed: u64,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub results: serde_json::Value,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}
