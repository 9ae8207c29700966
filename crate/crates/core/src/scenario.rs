//! Line-oriented scenario schema and the scenario runner.
//!
//! Grammar (documented in the repository README):
//!
//! ```text
//! scenario   := { line }
//! line       := blank | comment | section | entry
//! comment    := '#' ...
//! section    := '[' ident ']'
//! entry      := key '=' value        (within the current section;
//!                                     top-level before any section)
//! value      := scalar | list       (list = comma-separated scalars)
//! ```
//!
//! All numbers are decimal f64/integers; booleans are `true`/`false`.
//! Unknown sections or keys, missing required keys and malformed values
//! are reported with `path:line` anchors. A seed is required whenever the
//! scenario uses randomness (perturbation recipes, probes, sweeps).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::ScenarioError;
use crate::flow::{self, FlowConfig, FlowGeometry, FlowTrace};
use crate::metric::MetricField;
use crate::models::{self, ModelMetric};
use crate::moser::{MetricSource, MoserProblem};
use crate::patch::PatchDomain;
use crate::probes;
use crate::report::{self, FieldDump, OutputPaths};
use crate::verify::{self, EstimateCheck, GeometricEvolutionOptions, Ledger, PropagationOptions};

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct RawEntry {
    value: String,
    line: usize,
    consumed: std::cell::Cell<bool>,
}

#[derive(Debug)]
struct RawScenario {
    path: String,
    entries: BTreeMap<(String, String), RawEntry>,
    sections: Vec<String>,
}

impl RawScenario {
    fn parse(path: &str, text: &str) -> Result<Self, ScenarioError> {
        let mut entries = BTreeMap::new();
        let mut sections = Vec::new();
        let mut current = String::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find('#') {
                Some(p) => &raw_line[..p],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') || line.len() < 3 {
                    return Err(ScenarioError::Parse {
                        path: path.into(),
                        line: line_no,
                        message: format!("malformed section header `{line}`"),
                    });
                }
                current = line[1..line.len() - 1].trim().to_string();
                sections.push(current.clone());
                continue;
            }
            let Some(eq) = line.find('=') else {
                return Err(ScenarioError::Parse {
                    path: path.into(),
                    line: line_no,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = line[..eq].trim().to_string();
            let value = line[eq + 1..].trim().to_string();
            if key.is_empty() || value.is_empty() {
                return Err(ScenarioError::Parse {
                    path: path.into(),
                    line: line_no,
                    message: "empty key or value".into(),
                });
            }
            let prev = entries.insert(
                (current.clone(), key.clone()),
                RawEntry {
                    value,
                    line: line_no,
                    consumed: std::cell::Cell::new(false),
                },
            );
            if prev.is_some() {
                return Err(ScenarioError::Parse {
                    path: path.into(),
                    line: line_no,
                    message: format!("duplicate key `{key}` in section `[{current}]`"),
                });
            }
        }
        Ok(RawScenario {
            path: path.into(),
            entries,
            sections,
        })
    }

    fn has_section(&self, name: &str) -> bool {
        self.sections.iter().any(|s| s == name)
    }

    fn get(&self, section: &str, key: &str) -> Option<&RawEntry> {
        let e = self.entries.get(&(section.into(), key.into()));
        if let Some(e) = e {
            e.consumed.set(true);
        }
        e
    }

    fn err(&self, entry: &RawEntry, message: String) -> ScenarioError {
        ScenarioError::Parse {
            path: self.path.clone(),
            line: entry.line,
            message,
        }
    }

    fn missing(&self, section: &str, key: &str) -> ScenarioError {
        ScenarioError::Validation(format!(
            "{}: missing required key `{key}` in section `[{section}]`",
            self.path
        ))
    }

    fn f64(&self, section: &str, key: &str) -> Result<f64, ScenarioError> {
        let e = self.get(section, key).ok_or_else(|| self.missing(section, key))?;
        e.value
            .parse()
            .map_err(|_| self.err(e, format!("`{key}` must be a number, got `{}`", e.value)))
    }

    fn f64_opt(&self, section: &str, key: &str, default: f64) -> Result<f64, ScenarioError> {
        match self.get(section, key) {
            None => Ok(default),
            Some(e) => e
                .value
                .parse()
                .map_err(|_| self.err(e, format!("`{key}` must be a number, got `{}`", e.value))),
        }
    }

    fn usize_opt(&self, section: &str, key: &str, default: usize) -> Result<usize, ScenarioError> {
        match self.get(section, key) {
            None => Ok(default),
            Some(e) => e
                .value
                .parse()
                .map_err(|_| self.err(e, format!("`{key}` must be an integer, got `{}`", e.value))),
        }
    }

    fn usize_req(&self, section: &str, key: &str) -> Result<usize, ScenarioError> {
        let e = self.get(section, key).ok_or_else(|| self.missing(section, key))?;
        e.value
            .parse()
            .map_err(|_| self.err(e, format!("`{key}` must be an integer, got `{}`", e.value)))
    }

    fn bool_opt(&self, section: &str, key: &str, default: bool) -> Result<bool, ScenarioError> {
        match self.get(section, key) {
            None => Ok(default),
            Some(e) => match e.value.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                other => Err(self.err(e, format!("`{key}` must be true/false, got `{other}`"))),
            },
        }
    }

    fn string(&self, section: &str, key: &str) -> Result<String, ScenarioError> {
        Ok(self
            .get(section, key)
            .ok_or_else(|| self.missing(section, key))?
            .value
            .clone())
    }

    fn string_opt(&self, section: &str, key: &str) -> Option<String> {
        self.get(section, key).map(|e| e.value.clone())
    }

    fn list_f64(&self, section: &str, key: &str) -> Result<Vec<f64>, ScenarioError> {
        let e = self.get(section, key).ok_or_else(|| self.missing(section, key))?;
        e.value
            .split(',')
            .map(|v| {
                v.trim()
                    .parse()
                    .map_err(|_| self.err(e, format!("`{key}` must be a list of numbers")))
            })
            .collect()
    }

    fn list_f64_opt(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>, ScenarioError> {
        if self.get(section, key).is_none() {
            return Ok(None);
        }
        self.list_f64(section, key).map(Some)
    }

    fn unknown_key_check(&self) -> Result<(), ScenarioError> {
        for ((section, key), entry) in &self.entries {
            if !entry.consumed.get() {
                return Err(ScenarioError::Parse {
                    path: self.path.clone(),
                    line: entry.line,
                    message: format!("unknown key `{key}` in section `[{section}]`"),
                });
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Typed scenario
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum GeometrySpec {
    Model(ModelMetric),
    /// Flat torus sampled on a grid (exercises the method-of-lines path).
    FlatTorusGrid { periods: Vec<f64>, nodes: usize },
    PerturbedTorus {
        dim: usize,
        nodes: usize,
        period: f64,
        amplitude: f64,
        frequency: u32,
    },
    MetricFile(PathBuf),
}

impl GeometrySpec {
    pub fn build(&self, seed: u64) -> Result<FlowGeometry, ScenarioError> {
        Ok(match self {
            GeometrySpec::Model(m) => FlowGeometry::Model(m.clone()),
            GeometrySpec::FlatTorusGrid { periods, nodes } => {
                let grid = Arc::new(
                    crate::grid::ChartGrid::new(&vec![*nodes; periods.len()], periods)
                        .map_err(ScenarioError::Geometry)?,
                );
                FlowGeometry::Grid(MetricField::euclidean(grid))
            }
            GeometrySpec::PerturbedTorus {
                dim,
                nodes,
                period,
                amplitude,
                frequency,
            } => FlowGeometry::Grid(models::perturbed_torus(
                *dim, *nodes, *period, *amplitude, *frequency, seed,
            )?),
            GeometrySpec::MetricFile(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
                    path: path.display().to_string(),
                    source: e,
                })?;
                let file: report::GridMetricFile = serde_json::from_str(&text).map_err(|e| {
                    ScenarioError::Validation(format!("bad metric file {}: {e}", path.display()))
                })?;
                FlowGeometry::Grid(file.into_metric()?)
            }
        })
    }

    fn uses_randomness(&self) -> bool {
        matches!(self, GeometrySpec::PerturbedTorus { .. })
    }
}

#[derive(Debug, Clone)]
pub struct FlowSection {
    pub target_time: f64,
    pub snapshot_dt: f64,
    pub dt_init: f64,
    pub max_dt: f64,
    pub cfl: f64,
    pub blowup_threshold: Option<f64>,
    pub gauge_fixed: bool,
}

#[derive(Debug, Clone)]
pub struct ProbeSection {
    pub times: Vec<f64>,
    pub diameter_samples: usize,
    pub pair_count: usize,
    pub curve_count: usize,
    pub conj_samples: usize,
    pub conj_cap: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PropagationSection {
    pub dim: usize,
    pub nodes: usize,
    pub period: f64,
    pub frequency: u32,
    pub calibration_amplitude: f64,
    pub holdout_amplitude: f64,
    pub target_time: f64,
    pub snapshot_dt: f64,
    pub r0: f64,
    pub base_points: usize,
    pub headroom: f64,
}

#[derive(Debug, Clone)]
pub struct MoserSection {
    pub nodes: usize,
    pub extent: f64,
    pub patch_radius: f64,
    pub horizon: f64,
    pub q_values: Vec<f64>,
    pub p0: f64,
    pub b_values: Vec<f64>,
    pub steps: usize,
    pub sweep_count: usize,
}

#[derive(Debug, Clone)]
pub struct CoveringSection {
    pub pairs: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub geometry: GeometrySpec,
    pub flow: Option<FlowSection>,
    pub probes: ProbeSection,
    pub checks: Vec<String>,
    pub tolerance: f64,
    pub exactness_tolerance: f64,
    pub stationarity_cap: f64,
    pub propagation: Option<PropagationSection>,
    pub moser: Option<MoserSection>,
    pub covering: Option<CoveringSection>,
    pub dump_fields: FieldDump,
    pub digest: String,
}

const KNOWN_CHECKS: &[&str] = &[
    "main",
    "geometric",
    "exactness",
    "stationarity",
    "conjugate",
    "propagation",
    "moser",
    "covering",
];

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse(&path.display().to_string(), &text)
    }

    pub fn parse(path: &str, text: &str) -> Result<Scenario, ScenarioError> {
        let raw = RawScenario::parse(path, text)?;
        let digest = {
            let mut h = Sha256::new();
            h.update(text.as_bytes());
            format!("{:x}", h.finalize())
        };

        let name = raw.string("", "name")?;
        let seed_entry = raw.string_opt("", "seed");
        let seed: u64 = match &seed_entry {
            Some(s) => s.parse().map_err(|_| {
                ScenarioError::Validation(format!("{path}: seed must be a u64, got `{s}`"))
            })?,
            None => 0,
        };

        let family = raw.string("geometry", "family")?;
        let geometry = match family.as_str() {
            "round_sphere" => GeometrySpec::Model(ModelMetric::RoundSphere {
                dim: raw.usize_req("geometry", "dim")?,
                radius: raw.f64("geometry", "radius")?,
            }),
            "flat_torus" => {
                let periods = raw.list_f64("geometry", "periods")?;
                match raw.get("geometry", "nodes") {
                    Some(e) => {
                        let nodes: usize = e.value.parse().map_err(|_| {
                            raw.err(e, "`nodes` must be an integer".into())
                        })?;
                        GeometrySpec::FlatTorusGrid { periods, nodes }
                    }
                    None => GeometrySpec::Model(ModelMetric::FlatTorus { periods }),
                }
            }
            "product_sphere_circle" => GeometrySpec::Model(ModelMetric::ProductSphereCircle {
                radius: raw.f64("geometry", "radius")?,
                circle_length: raw.f64("geometry", "circle_length")?,
            }),
            "milnor_su2" => {
                let l = raw.list_f64("geometry", "lambda")?;
                if l.len() != 3 {
                    return Err(ScenarioError::Validation(format!(
                        "{path}: milnor_su2 needs exactly three lambda values"
                    )));
                }
                GeometrySpec::Model(ModelMetric::MilnorSu2 {
                    lambda: [l[0], l[1], l[2]],
                })
            }
            "heisenberg_nil" => {
                let p = raw.list_f64("geometry", "periods")?;
                if p.len() != 3 {
                    return Err(ScenarioError::Validation(format!(
                        "{path}: heisenberg_nil needs three periods"
                    )));
                }
                GeometrySpec::Model(ModelMetric::HeisenbergNil {
                    epsilon: raw.f64("geometry", "epsilon")?,
                    periods: [p[0], p[1], p[2]],
                })
            }
            "perturbed_torus" => GeometrySpec::PerturbedTorus {
                dim: raw.usize_opt("geometry", "dim", 3)?,
                nodes: raw.usize_req("geometry", "nodes")?,
                period: raw.f64_opt("geometry", "period", 2.0 * std::f64::consts::PI)?,
                amplitude: raw.f64("geometry", "amplitude")?,
                frequency: raw.usize_req("geometry", "frequency")? as u32,
            },
            "grid_file" => {
                let file = PathBuf::from(raw.string("geometry", "metric_file")?);
                if !file.exists() {
                    return Err(ScenarioError::Validation(format!(
                        "{path}: referenced metric file {} does not exist",
                        file.display()
                    )));
                }
                GeometrySpec::MetricFile(file)
            }
            other => {
                return Err(ScenarioError::Validation(format!(
                    "{path}: unknown geometry family `{other}`"
                )))
            }
        };
        if let GeometrySpec::Model(m) = &geometry {
            m.validate().map_err(ScenarioError::Geometry)?;
        }

        let flow = if raw.has_section("flow") {
            let target_time = raw.f64("flow", "target_time")?;
            let snapshot_dt = raw.f64("flow", "snapshot_dt")?;
            if !(target_time > 0.0) {
                return Err(ScenarioError::Validation(format!(
                    "{path}: flow target_time must be positive, got {target_time}"
                )));
            }
            if !(snapshot_dt > 0.0) || snapshot_dt > target_time + 1e-15 {
                return Err(ScenarioError::Validation(format!(
                    "{path}: snapshot_dt must lie in (0, target_time]"
                )));
            }
            Some(FlowSection {
                target_time,
                snapshot_dt,
                dt_init: raw.f64_opt("flow", "dt_init", 1e-3)?,
                max_dt: raw.f64_opt("flow", "max_dt", 1e-2)?,
                cfl: raw.f64_opt("flow", "cfl", 0.1)?,
                blowup_threshold: raw
                    .get("flow", "blowup_threshold")
                    .map(|e| e.value.parse::<f64>())
                    .transpose()
                    .map_err(|_| {
                        ScenarioError::Validation(format!("{path}: bad blowup_threshold"))
                    })?,
                gauge_fixed: raw.bool_opt("flow", "gauge_fixed", false)?,
            })
        } else {
            None
        };

        let probes = ProbeSection {
            times: raw.list_f64_opt("probes", "times")?.unwrap_or_default(),
            diameter_samples: raw.usize_opt("probes", "diameter_samples", 3)?,
            pair_count: raw.usize_opt("probes", "pair_count", 2)?,
            curve_count: raw.usize_opt("probes", "curve_count", 16)?,
            conj_samples: raw.usize_opt("probes", "conj_samples", 6)?,
            conj_cap: raw.list_f64_opt("probes", "conj_cap")?.map(|v| v[0]),
        };

        let checks: Vec<String> = match raw.string_opt("verify", "checks") {
            Some(v) => v.split(',').map(|s| s.trim().to_string()).collect(),
            None => Vec::new(),
        };
        for c in &checks {
            if !KNOWN_CHECKS.contains(&c.as_str()) {
                return Err(ScenarioError::Validation(format!(
                    "{path}: unknown check `{c}` (known: {KNOWN_CHECKS:?})"
                )));
            }
        }
        let tolerance = raw.f64_opt("verify", "tolerance", 1e-6)?;
        let exactness_tolerance = raw.f64_opt("verify", "exactness_tolerance", 1e-8)?;
        let stationarity_cap = raw.f64_opt("verify", "stationarity_cap", 1e-10)?;

        let propagation = if raw.has_section("propagation") {
            Some(PropagationSection {
                dim: raw.usize_opt("propagation", "dim", 3)?,
                nodes: raw.usize_req("propagation", "nodes")?,
                period: raw.f64_opt("propagation", "period", 2.0 * std::f64::consts::PI)?,
                frequency: raw.usize_opt("propagation", "frequency", 2)? as u32,
                calibration_amplitude: raw.f64("propagation", "calibration_amplitude")?,
                holdout_amplitude: raw.f64("propagation", "holdout_amplitude")?,
                target_time: raw.f64("propagation", "target_time")?,
                snapshot_dt: raw.f64("propagation", "snapshot_dt")?,
                r0: raw.f64_opt("propagation", "r0", 1.0)?,
                base_points: raw.usize_opt("propagation", "base_points", 3)?,
                headroom: raw.f64_opt("propagation", "headroom", 1.5)?,
            })
        } else {
            None
        };

        let moser = if raw.has_section("moser") {
            Some(MoserSection {
                nodes: raw.usize_opt("moser", "nodes", 20)?,
                extent: raw.f64_opt("moser", "extent", 2.5)?,
                patch_radius: raw.f64_opt("moser", "patch_radius", 1.0)?,
                horizon: raw.f64_opt("moser", "horizon", 0.1)?,
                q_values: raw.list_f64("moser", "q")?,
                p0: raw.f64_opt("moser", "p0", 5.0)?,
                b_values: raw.list_f64("moser", "b_const")?,
                steps: raw.usize_opt("moser", "steps", 80)?,
                sweep_count: raw.usize_opt("moser", "sweep_count", 1000)?,
            })
        } else {
            None
        };

        let covering = if raw.has_section("covering") {
            let spec = raw.string("covering", "r_eps")?;
            let mut pairs = Vec::new();
            for part in spec.split(',') {
                let mut it = part.trim().split(':');
                let (Some(r), Some(e)) = (it.next(), it.next()) else {
                    return Err(ScenarioError::Validation(format!(
                        "{path}: covering r_eps entries must look like r:eps"
                    )));
                };
                let r: f64 = r.trim().parse().map_err(|_| {
                    ScenarioError::Validation(format!("{path}: bad covering radius `{r}`"))
                })?;
                let e: f64 = e.trim().parse().map_err(|_| {
                    ScenarioError::Validation(format!("{path}: bad covering epsilon `{e}`"))
                })?;
                pairs.push((r, e));
            }
            Some(CoveringSection { pairs })
        } else {
            None
        };

        let dump_fields = match raw.string_opt("output", "dump_fields").as_deref() {
            None | Some("ends") => FieldDump::Ends,
            Some("none") => FieldDump::None,
            Some("all") => FieldDump::All,
            Some(other) => {
                return Err(ScenarioError::Validation(format!(
                    "{path}: dump_fields must be none|ends|all, got `{other}`"
                )))
            }
        };

        raw.unknown_key_check()?;

        let scenario = Scenario {
            name,
            seed,
            geometry,
            flow,
            probes,
            checks,
            tolerance,
            exactness_tolerance,
            stationarity_cap,
            propagation,
            moser,
            covering,
            dump_fields,
            digest,
        };
        scenario.validate(path, seed_entry.is_some())?;
        Ok(scenario)
    }

    fn validate(&self, path: &str, seed_given: bool) -> Result<(), ScenarioError> {
        // probe times must be snapshot times inside the horizon
        if let Some(flow) = &self.flow {
            for &t in &self.probes.times {
                let k = (t / flow.snapshot_dt).round();
                if (t - k * flow.snapshot_dt).abs() > 1e-9 * flow.snapshot_dt
                    || t > flow.target_time + 1e-12
                {
                    return Err(ScenarioError::Validation(format!(
                        "{path}: probe time {t} is not a snapshot time (snapshot_dt = {}, T = {})",
                        flow.snapshot_dt, flow.target_time
                    )));
                }
            }
        } else if !self.probes.times.is_empty() {
            return Err(ScenarioError::Validation(format!(
                "{path}: probe times given but no [flow] section"
            )));
        }
        let randomness = self.geometry.uses_randomness()
            || !self.probes.times.is_empty()
            || self.checks.iter().any(|c| c == "geometric" || c == "conjugate")
            || self.propagation.is_some()
            || self.moser.is_some();
        if randomness && !seed_given {
            return Err(ScenarioError::Validation(format!(
                "{path}: this scenario uses randomness; a top-level `seed` is required"
            )));
        }
        if self.checks.iter().any(|c| c == "covering") {
            if self.covering.is_none() {
                return Err(ScenarioError::Validation(format!(
                    "{path}: check `covering` requires a [covering] section"
                )));
            }
            if !matches!(
                self.geometry,
                GeometrySpec::Model(ModelMetric::FlatTorus { .. })
                    | GeometrySpec::FlatTorusGrid { .. }
            ) {
                return Err(ScenarioError::Validation(format!(
                    "{path}: covering checks are stated for the flat torus (Ric >= 0)"
                )));
            }
        }
        if self.checks.iter().any(|c| c == "moser") && self.moser.is_none() {
            return Err(ScenarioError::Validation(format!(
                "{path}: check `moser` requires a [moser] section"
            )));
        }
        if self.checks.iter().any(|c| c == "propagation") && self.propagation.is_none() {
            return Err(ScenarioError::Validation(format!(
                "{path}: check `propagation` requires a [propagation] section"
            )));
        }
        let needs_flow = self
            .checks
            .iter()
            .any(|c| matches!(c.as_str(), "main" | "geometric" | "exactness" | "stationarity"));
        if needs_flow && self.flow.is_none() {
            return Err(ScenarioError::Validation(format!(
                "{path}: selected checks need a [flow] section"
            )));
        }
        Ok(())
    }

    pub fn flow_config(&self, seed: u64) -> Result<Option<FlowConfig>, ScenarioError> {
        let Some(f) = &self.flow else { return Ok(None) };
        let geometry = self.geometry.build(seed)?;
        let mut cfg = FlowConfig::new(geometry, f.target_time, f.snapshot_dt);
        cfg.dt_init = f.dt_init;
        cfg.max_dt = f.max_dt;
        cfg.cfl = f.cfl;
        cfg.blowup_threshold = f.blowup_threshold;
        cfg.gauge_fixed = f.gauge_fixed;
        Ok(Some(cfg))
    }
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

/// CLI-level overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub checkpoint_every: Option<f64>,
}

pub struct ScenarioRun {
    pub ledger: Ledger,
    pub trace: Option<FlowTrace>,
}

/// Executes a scenario end to end: flow, probes, selected verifiers.
/// Artifacts are written only after everything has run (a validation error
/// leaves no partial outputs).
pub fn run_scenario(
    path: &Path,
    overrides: &Overrides,
    out: Option<&OutputPaths>,
) -> Result<ScenarioRun, ScenarioError> {
    let scenario = Scenario::load(path)?;
    let seed = overrides.seed.unwrap_or(scenario.seed);
    let mut checks: Vec<EstimateCheck> = Vec::new();

    let trace = match scenario.flow_config(seed)? {
        Some(mut cfg) => {
            if let Some(dt) = overrides.checkpoint_every {
                cfg.snapshot_dt = dt;
            }
            Some(flow::run(&cfg)?)
        }
        None => None,
    };

    for check in &scenario.checks {
        match check.as_str() {
            "main" => {
                let trace = trace.as_ref().expect("validated");
                checks.extend(verify::verify_theorem_main(trace, scenario.tolerance));
            }
            "geometric" => {
                let trace = trace.as_ref().expect("validated");
                let opts = GeometricEvolutionOptions {
                    probe_times: scenario.probes.times.clone(),
                    diameter_samples: scenario.probes.diameter_samples,
                    pair_count: scenario.probes.pair_count,
                    curve_count: scenario.probes.curve_count,
                    seed,
                    tolerance: scenario.tolerance,
                };
                checks.extend(verify::verify_geometric_evolution(trace, &opts)?);
            }
            "exactness" => {
                let trace = trace.as_ref().expect("validated");
                checks.extend(verify::exact_reduction_check(
                    trace,
                    scenario.exactness_tolerance,
                ));
            }
            "stationarity" => {
                let trace = trace.as_ref().expect("validated");
                checks.extend(verify::stationarity_check(trace, scenario.stationarity_cap));
            }
            "conjugate" => {
                checks.extend(conjugate_checks(&scenario, seed)?);
            }
            "propagation" => {
                let section = scenario.propagation.as_ref().expect("validated");
                checks.extend(propagation_checks(section, seed, scenario.tolerance)?);
            }
            "moser" => {
                let section = scenario.moser.as_ref().expect("validated");
                checks.extend(moser_section_checks(section, seed)?);
            }
            "covering" => {
                let section = scenario.covering.as_ref().expect("validated");
                checks.extend(covering_section_checks(&scenario, section)?);
            }
            _ => unreachable!("validated"),
        }
    }

    let ledger = Ledger::assemble(scenario.name.clone(), scenario.digest.clone(), seed, checks);

    if let Some(paths) = out {
        if let Some(trace) = &trace {
            report::write_atomic(&paths.trace_csv(), &report::trace_csv(trace))?;
            report::write_atomic(
                &paths.trace_json(),
                &report::trace_json(trace, scenario.dump_fields),
            )?;
        }
        report::write_atomic(&paths.ledger(), &report::ledger_json(&ledger))?;
        report::write_atomic(&paths.report(), &report::render_report(&ledger))?;
    }
    Ok(ScenarioRun { ledger, trace })
}

/// Single-metric geometry report (the `probe` subcommand).
pub fn probe_scenario(
    path: &Path,
    overrides: &Overrides,
    out: Option<&OutputPaths>,
) -> Result<probes::GeometryReport, ScenarioError> {
    let scenario = Scenario::load(path)?;
    let seed = overrides.seed.unwrap_or(scenario.seed);
    let g = probe_metric(&scenario, seed)?;
    let cap = scenario.probes.conj_cap.unwrap_or(0.0);
    let cap = if cap > 0.0 {
        cap
    } else {
        10.0 * probes::diameter(&g, scenario.probes.diameter_samples, seed)?.relaxed
    };
    let rep = probes::report(
        &g,
        scenario.probes.diameter_samples,
        scenario.probes.conj_samples.max(2 * g.dim()),
        cap,
        seed,
    )?;
    if let Some(paths) = out {
        report::write_atomic(
            &paths.geometry_report(),
            &serde_json::to_string_pretty(&rep).unwrap(),
        )?;
    }
    Ok(rep)
}

fn probe_metric(scenario: &Scenario, seed: u64) -> Result<MetricField, ScenarioError> {
    match scenario.geometry.build(seed)? {
        FlowGeometry::Grid(g) => Ok(g),
        FlowGeometry::Model(m) => {
            let res = match m.dim() {
                2 => 96,
                _ => 32,
            };
            Ok(m.probe_chart(res).map_err(ScenarioError::Geometry)?.metric)
        }
    }
}

fn conjugate_checks(scenario: &Scenario, seed: u64) -> Result<Vec<EstimateCheck>, ScenarioError> {
    let mut checks = Vec::new();
    match &scenario.geometry {
        GeometrySpec::Model(m @ ModelMetric::RoundSphere { radius, .. }) => {
            let cap = scenario.probes.conj_cap.unwrap_or(4.0 * radius);
            let est = probes::jacobi_conjugate_radius(
                &probes::JacobiGeometry::Model(m),
                scenario.probes.conj_samples.max(2 * m.dim()),
                cap,
                seed,
            )?;
            let want = std::f64::consts::PI * radius;
            checks.push(EstimateCheck::inequality(
                "conjugate.sphere",
                "geometry.conjugate-radius",
                (est.radius - want).abs(),
                1e-4,
                0.0,
                vec![("estimate".into(), est.radius.to_string())],
            ));
        }
        GeometrySpec::Model(m @ ModelMetric::FlatTorus { .. }) => {
            let cap = scenario
                .probes
                .conj_cap
                .unwrap_or(10.0 * m.exact_diameter().unwrap());
            let est = probes::jacobi_conjugate_radius(
                &probes::JacobiGeometry::Model(m),
                scenario.probes.conj_samples.max(2 * m.dim()),
                cap,
                seed,
            )?;
            checks.push(EstimateCheck::inequality(
                "conjugate.flat-no-conjugate-point",
                "geometry.conjugate-radius",
                if est.no_conjugate_point { 0.0 } else { 1.0 },
                0.0,
                0.0,
                vec![("cap".into(), cap.to_string())],
            ));
        }
        _ => {
            checks.push(EstimateCheck::not_applicable(
                "conjugate",
                "geometry.conjugate-radius",
                "conjugate checks are defined for spheres and flat tori",
            ));
        }
    }
    Ok(checks)
}

fn propagation_checks(
    section: &PropagationSection,
    seed: u64,
    tolerance: f64,
) -> Result<Vec<EstimateCheck>, ScenarioError> {
    let run_amp = |amplitude: f64| -> Result<FlowTrace, ScenarioError> {
        let g = models::perturbed_torus(
            section.dim,
            section.nodes,
            section.period,
            amplitude,
            section.frequency,
            seed,
        )?;
        let mut cfg = FlowConfig::new(
            FlowGeometry::Grid(g),
            section.target_time,
            section.snapshot_dt,
        );
        cfg.dt_init = 1e-4;
        cfg.max_dt = 5e-3;
        Ok(flow::run(&cfg)?)
    };
    let opts = PropagationOptions {
        r0: section.r0,
        p0: None,
        base_points: section.base_points,
        headroom: section.headroom,
        seed,
        tolerance,
    };
    let calib = run_amp(section.calibration_amplitude)?;
    let holdout = run_amp(section.holdout_amplitude)?;
    let calib_series = verify::measure_propagation(&calib, &opts)?;
    let holdout_series = verify::measure_propagation(&holdout, &opts)?;
    let fit = verify::fit_propagation(&calib_series);
    Ok(verify::verify_propagation(
        &fit,
        &holdout_series,
        section.headroom,
        tolerance,
    ))
}

fn moser_section_checks(
    section: &MoserSection,
    seed: u64,
) -> Result<Vec<EstimateCheck>, ScenarioError> {
    let grid = Arc::new(
        crate::grid::ChartGrid::new(
            &[section.nodes; 3],
            &[section.extent; 3],
        )
        .map_err(ScenarioError::Geometry)?,
    );
    let g = MetricField::euclidean(grid.clone());
    let center = grid.encode(&[section.nodes / 2; 3]);
    let patch = PatchDomain::chart_ball(grid.clone(), center, section.patch_radius)
        .map_err(ScenarioError::Flow)?;
    let aux = crate::curvature::metric_aux(&g).map_err(ScenarioError::Geometry)?;
    let sobolev = probes::sobolev_constant_on_patch(&g, &aux, &patch, seed)?;

    let mut cx = [0.0; crate::linalg::MAX_DIM];
    grid.position(center, &mut cx);
    let mut initial = vec![0.0; grid.node_count()];
    let mut x = [0.0; crate::linalg::MAX_DIM];
    let mut d = [0.0; crate::linalg::MAX_DIM];
    let width = 0.25 * section.patch_radius;
    for node in 0..grid.node_count() {
        grid.position(node, &mut x);
        grid.wrap_delta(&cx[..3], &x[..3], &mut d);
        let r2: f64 = d[..3].iter().map(|v| v * v).sum();
        initial[node] = (-r2 / (2.0 * width * width)).exp();
    }

    let mut problems = Vec::new();
    for &q in &section.q_values {
        for &b in &section.b_values {
            let problem = MoserProblem::new(
                MetricSource::Static(g.clone()),
                patch.clone(),
                section.horizon,
                q,
                section.p0,
                vec![b; grid.node_count()],
                initial.clone(),
                0.0,
                sobolev,
                section.steps,
            )?;
            problems.push((format!("q={q},b={b}"), problem));
        }
    }
    Ok(verify::moser_checks(problems, seed, section.sweep_count)?)
}

fn covering_section_checks(
    scenario: &Scenario,
    section: &CoveringSection,
) -> Result<Vec<EstimateCheck>, ScenarioError> {
    let (periods, nodes) = match &scenario.geometry {
        GeometrySpec::Model(ModelMetric::FlatTorus { periods }) => (periods.clone(), 24usize),
        GeometrySpec::FlatTorusGrid { periods, nodes } => (periods.clone(), *nodes),
        _ => unreachable!("validated"),
    };
    let grid = Arc::new(
        crate::grid::ChartGrid::new(&vec![nodes; periods.len()], &periods)
            .map_err(ScenarioError::Geometry)?,
    );
    let g = MetricField::euclidean(grid);
    let mut checks = Vec::new();
    for &(r, eps) in &section.pairs {
        checks.extend(verify::covering_check(&g, 0, r, eps, 0.0)?);
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPHERE: &str = "\
name = sphere-smoke
seed = 7

[geometry]
family = round_sphere
dim = 2
radius = 1.4142135623730951

[flow]
target_time = 0.1
snapshot_dt = 0.01
dt_init = 1e-4
max_dt = 1e-3

[probes]
times = 0.05, 0.1

[verify]
checks = main, geometric, exactness
";

    #[test]
    fn parses_and_validates_a_scenario() {
        let s = Scenario::parse("test.scn", SPHERE).unwrap();
        assert_eq!(s.name, "sphere-smoke");
        assert_eq!(s.seed, 7);
        assert_eq!(s.checks, vec!["main", "geometric", "exactness"]);
        assert!(matches!(
            s.geometry,
            GeometrySpec::Model(ModelMetric::RoundSphere { dim: 2, .. })
        ));
    }

    #[test]
    fn negative_target_time_is_a_validation_error() {
        let text = SPHERE.replace("target_time = 0.1", "target_time = -0.1");
        match Scenario::parse("test.scn", &text) {
            Err(ScenarioError::Validation(msg)) => assert!(msg.contains("target_time")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "name = x\nbroken line without equals\n";
        match Scenario::parse("p.scn", text) {
            Err(ScenarioError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let text = "name = x\n\n[geometry]\nfamily = flat_torus\nperiods = 1,1\nbogus_key = 3\n";
        match Scenario::parse("p.scn", text) {
            Err(ScenarioError::Parse { line, message, .. }) => {
                assert_eq!(line, 6);
                assert!(message.contains("bogus_key"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn probe_times_off_the_snapshot_grid_are_rejected() {
        let text = SPHERE.replace("times = 0.05, 0.1", "times = 0.013");
        match Scenario::parse("p.scn", &text) {
            Err(ScenarioError::Validation(msg)) => assert!(msg.contains("probe time")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn randomness_without_seed_is_rejected() {
        let text = SPHERE.replace("seed = 7\n", "");
        match Scenario::parse("p.scn", &text) {
            Err(ScenarioError::Validation(msg)) => assert!(msg.contains("seed")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn digest_is_stable_and_content_sensitive() {
        let a = Scenario::parse("p.scn", SPHERE).unwrap();
        let b = Scenario::parse("p.scn", SPHERE).unwrap();
        assert_eq!(a.digest, b.digest);
        let c = Scenario::parse("p.scn", &SPHERE.replace("seed = 7", "seed = 8")).unwrap();
        assert_ne!(a.digest, c.digest);
    }
}
