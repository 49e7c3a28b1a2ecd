//! Run configuration: one JSON document plus dotted-path overrides.

use crate::CliError;
use kinswarm::testfns::FamilyParams;
use kinswarm::validator::CouplingOptions;
use kinswarm::{Domain, KernelSpec, SimConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::PathBuf;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Simulate,
    Converge,
    Boundary,
    Couple,
    Oracle,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Converge => "converge",
            Experiment::Boundary => "boundary",
            Experiment::Couple => "couple",
            Experiment::Oracle => "oracle",
        }
    }
}

/// Artifact formats; `report.json` and `config_echo.json` are always written.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emit {
    Csv,
    Jsonl,
    Json,
}

fn all_formats() -> Vec<Emit> {
    vec![Emit::Csv, Emit::Jsonl, Emit::Json]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscrepancyConfig {
    pub replicas: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub sim: SimConfig,
    /// Particle counts of the converge and couple experiments.
    #[serde(default, rename = "N_list", alias = "n_list", skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_ladder: Option<Vec<f64>>,
    /// Layer width of the symmetry check; defaults to the narrowest rung.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symmetry_delta: Option<f64>,
    #[serde(default)]
    pub psi: FamilyParams,
    /// Halved-step comparison of the weak residual and its martingale form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discrepancy: Option<DiscrepancyConfig>,
    #[serde(default)]
    pub coupling: CouplingOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "all_formats")]
    pub emit: Vec<Emit>,
    /// Spacing of the snapshots written to `snapshots.csv`; by default at
    /// most 101 snapshot times are written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<usize>,
}

pub const DEFAULT_CONVERGE_N: [usize; 4] = [64, 128, 256, 512];
pub const DEFAULT_COUPLE_N: [usize; 3] = [64, 256, 1024];
pub const DEFAULT_LADDER: [f64; 3] = [0.08, 0.04, 0.02];

impl RunConfig {
    pub fn n_list(&self) -> Vec<usize> {
        match (&self.n_list, self.experiment) {
            (Some(v), _) => v.clone(),
            (None, Experiment::Couple) => DEFAULT_COUPLE_N.to_vec(),
            (None, _) => DEFAULT_CONVERGE_N.to_vec(),
        }
    }

    pub fn replicas(&self) -> usize {
        match (self.replicas, self.experiment) {
            (Some(m), _) => m,
            (None, Experiment::Couple) => 16,
            (None, _) => 64,
        }
    }

    pub fn delta_ladder(&self) -> Vec<f64> {
        self.delta_ladder.clone().unwrap_or_else(|| DEFAULT_LADDER.to_vec())
    }

    pub fn symmetry_delta(&self) -> f64 {
        self.symmetry_delta.unwrap_or_else(|| self.delta_ladder().last().copied().unwrap_or(DEFAULT_LADDER[2]))
    }

    pub fn emits(&self, e: Emit) -> bool {
        self.emit.contains(&e)
    }

    /// Checks everything that can be checked before any simulation runs.
    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |m: String| Err(CliError::Invalid(m));
        self.sim.validate()?;
        let domain = Domain::from_spec(&self.sim.domain, self.sim.dim)?;
        match self.experiment {
            Experiment::Converge | Experiment::Couple => {
                let n = self.n_list();
                if n.len() < 3 || n.windows(2).any(|w| w[1] <= w[0]) || n[0] == 0 {
                    return invalid("N_list needs at least three strictly increasing positive values".into());
                }
                if self.replicas() < 16 {
                    return invalid("replicas must be at least 16".into());
                }
            }
            Experiment::Boundary => {
                let ladder = self.delta_ladder();
                if ladder.is_empty() || ladder.windows(2).any(|w| !(w[1] < w[0])) {
                    return invalid("delta_ladder must be nonempty and strictly decreasing".into());
                }
                for d in ladder.iter().chain([self.symmetry_delta()].iter()) {
                    if !(*d > 0.0 && *d < domain.band) {
                        return invalid(format!("layer width {d} must lie in (0, {})", domain.band));
                    }
                }
            }
            Experiment::Oracle => {
                if self.sim.kernel != KernelSpec::Zero {
                    return invalid("the oracle experiment requires the zero kernel".into());
                }
                let quiet = self.sim.noise.sigma == 0.0 && self.sim.noise.sigma_bar == 0.0;
                if quiet && !matches!(self.sim.domain, kinswarm::DomainSpec::Ball { .. }) {
                    return invalid("the noiseless oracle needs a ball domain".into());
                }
            }
            Experiment::Simulate => {}
        }
        if let Some(d) = &self.discrepancy {
            if d.replicas < 2 {
                return invalid("discrepancy.replicas must be at least 2".into());
            }
        }
        if self.snapshot_every == Some(0) {
            return invalid("snapshot_every must be positive".into());
        }
        Ok(())
    }
}

/// Splits `--a.b=value` and `--a.b value` arguments out of `args`.
pub fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), CliError> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (key, value) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        if !key.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match value {
            Some(v) => v,
            None => it.next().ok_or_else(|| CliError::Invalid(format!("override --{key} has no value")))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

/// Sets `path` (dot separated) in `doc` to `raw`, parsed as JSON when
/// possible and kept as a string otherwise.
pub fn apply_override(doc: &mut Value, path: &str, raw: &str) -> Result<(), CliError> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (j, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Invalid(format!("malformed override path {path}")));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Invalid(format!("override {path}: {part} is not inside an object")))?;
        if j + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("paths have at least one component")
}

/// Parses a configuration document after applying overrides.
pub fn load(text: &str, overrides: &[(String, String)]) -> Result<RunConfig, CliError> {
    let mut doc: Value = serde_json::from_str(text).map_err(|e| CliError::Invalid(format!("config: {e}")))?;
    for (k, v) in overrides {
        apply_override(&mut doc, k, v)?;
    }
    serde_json::from_value(doc).map_err(|e| CliError::Invalid(format!("config: {e}")))
}
