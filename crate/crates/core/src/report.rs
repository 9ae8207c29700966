//! Trace, ledger and report persistence.
//!
//! File schemas (all written atomically via write-temp-rename):
//!
//! * `trace.csv` — one row per snapshot with columns
//!   `t, sup_rm, sup_ric, c0_distance, volume, termination`
//!   (`termination` is empty except on the last row, where it is one of
//!   `reached_target`, `blowup`, `positivity_loss`).
//! * `trace.json` — full structured dump: termination, running maxima, and
//!   per-snapshot diagnostics; metric components are embedded at the
//!   configured checkpoints (model traces always embed their parameters).
//! * `ledger.json` — serialized [`crate::verify::Ledger`].
//! * `report.txt` — human-readable one-line-per-check rendering.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::ScenarioError;
use crate::flow::{FlowGeometry, FlowTrace, Termination};
use crate::grid::ChartGrid;
use crate::metric::MetricField;
use crate::models::ModelMetric;
use crate::verify::Ledger;

fn io_err(path: &Path, source: std::io::Error) -> ScenarioError {
    ScenarioError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Atomic write: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, content: &str) -> Result<(), ScenarioError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(path, e))?;
    }
    let tmp = path.with_extension("tmp-write");
    fs::write(&tmp, content).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
    Ok(())
}

fn termination_tag(t: &Termination) -> &'static str {
    match t {
        Termination::ReachedTarget => "reached_target",
        Termination::Blowup { .. } => "blowup",
        Termination::PositivityLoss { .. } => "positivity_loss",
    }
}

/// Renders the snapshot table as CSV.
pub fn trace_csv(trace: &FlowTrace) -> String {
    let mut out = String::from("t,sup_rm,sup_ric,c0_distance,volume,termination\n");
    let last = trace.states.len() - 1;
    for (k, s) in trace.states.iter().enumerate() {
        let tag = if k == last {
            termination_tag(&trace.termination)
        } else {
            ""
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.t, s.diag.sup_rm, s.diag.sup_ric, s.diag.c0_distance, s.diag.volume, tag
        ));
    }
    out
}

/// Which snapshots embed their full metric fields in `trace.json`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldDump {
    None,
    Ends,
    All,
}

/// Serializable form of a grid metric (also the on-disk format accepted by
/// the scenario key `metric_file`).
#[derive(Serialize, Deserialize)]
pub struct GridMetricFile {
    pub extents: Vec<usize>,
    pub periods: Vec<f64>,
    pub offsets: Vec<f64>,
    /// Row-major `n x n` blocks, node-major.
    pub components: Vec<f64>,
}

impl GridMetricFile {
    pub fn from_metric(g: &MetricField) -> Self {
        let grid = g.grid();
        GridMetricFile {
            extents: grid.extents().to_vec(),
            periods: grid.periods().to_vec(),
            offsets: vec![0.0; grid.dim()],
            components: g.field().data().to_vec(),
        }
    }

    pub fn into_metric(self) -> Result<MetricField, ScenarioError> {
        let grid = std::sync::Arc::new(
            ChartGrid::with_offsets(&self.extents, &self.periods, &self.offsets)
                .map_err(ScenarioError::Geometry)?,
        );
        let dim = grid.dim();
        if self.components.len() != grid.node_count() * dim * dim {
            return Err(ScenarioError::Validation(format!(
                "metric file has {} components, expected {}",
                self.components.len(),
                grid.node_count() * dim * dim
            )));
        }
        let mut field = crate::field::NodeField::zeros(grid, dim * dim);
        field.data_mut().copy_from_slice(&self.components);
        MetricField::from_field(field).map_err(ScenarioError::Geometry)
    }
}

fn geometry_json(g: &FlowGeometry, with_fields: bool) -> serde_json::Value {
    match g {
        FlowGeometry::Model(m) => model_json(m),
        FlowGeometry::Grid(gm) => {
            if with_fields {
                serde_json::to_value(GridMetricFile::from_metric(gm)).unwrap()
            } else {
                json!({
                    "kind": "grid",
                    "extents": gm.grid().extents(),
                    "periods": gm.grid().periods(),
                })
            }
        }
    }
}

fn model_json(m: &ModelMetric) -> serde_json::Value {
    match m {
        ModelMetric::RoundSphere { dim, radius } => {
            json!({"family": "round_sphere", "dim": dim, "radius": radius})
        }
        ModelMetric::FlatTorus { periods } => json!({"family": "flat_torus", "periods": periods}),
        ModelMetric::ProductSphereCircle {
            radius,
            circle_length,
        } => json!({"family": "product_sphere_circle", "radius": radius,
                    "circle_length": circle_length}),
        ModelMetric::MilnorSu2 { lambda } => json!({"family": "milnor_su2", "lambda": lambda}),
        ModelMetric::HeisenbergNil { epsilon, periods } => {
            json!({"family": "heisenberg_nil", "epsilon": epsilon, "periods": periods})
        }
    }
}

/// Full structured dump of a trace.
pub fn trace_json(trace: &FlowTrace, dump: FieldDump) -> String {
    let last = trace.states.len() - 1;
    let snapshots: Vec<serde_json::Value> = trace
        .states
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let with_fields = match dump {
                FieldDump::None => false,
                FieldDump::Ends => k == 0 || k == last,
                FieldDump::All => true,
            } || matches!(s.geometry, FlowGeometry::Model(_));
            json!({
                "t": s.t,
                "diagnostics": s.diag,
                "geometry": geometry_json(&s.geometry, with_fields),
            })
        })
        .collect();
    serde_json::to_string_pretty(&json!({
        "termination": trace.termination,
        "initial_sup_ric": trace.initial_sup_ric,
        "max_sup_ric": trace.max_sup_ric,
        "max_l": trace.max_l,
        "snapshots": snapshots,
    }))
    .unwrap()
}

/// Serializes a ledger (stable field order, no timestamps — reruns with the
/// same scenario and seed must be byte-identical).
pub fn ledger_json(ledger: &Ledger) -> String {
    serde_json::to_string_pretty(ledger).unwrap()
}

pub fn read_ledger(path: &Path) -> Result<Ledger, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| ScenarioError::Validation(format!("bad ledger {}: {e}", path.display())))
}

/// Human-readable summary, one line per check.
pub fn render_report(ledger: &Ledger) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "scenario {} (digest {})\nversion {} seed {}\n\n",
        ledger.scenario, ledger.scenario_digest, ledger.version, ledger.seed
    ));
    for c in &ledger.checks {
        if !c.applicable {
            let reason = c
                .context
                .iter()
                .find(|(k, _)| k == "reason")
                .map(|(_, v)| v.as_str())
                .unwrap_or("");
            out.push_str(&format!("n/a   {:<42} {} [{}]\n", c.id, reason, c.anchor));
            continue;
        }
        let status = if c.pass { "pass " } else { "FAIL " };
        out.push_str(&format!(
            "{status} {:<42} lhs {:>13.6e}  rhs {:>13.6e}  margin {:>13.6e} [{}]\n",
            c.id, c.lhs, c.rhs, c.margin, c.anchor
        ));
    }
    out.push_str(&format!(
        "\n{} checks: {} passed, {} failed, {} not applicable; worst scaled margin {:.3e}\n",
        ledger.summary.total,
        ledger.summary.passed,
        ledger.summary.failed,
        ledger.summary.not_applicable,
        ledger.summary.worst_margin
    ));
    out
}

/// Output paths for one scenario run.
pub struct OutputPaths {
    pub dir: PathBuf,
}

impl OutputPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        OutputPaths { dir: dir.into() }
    }

    pub fn trace_csv(&self) -> PathBuf {
        self.dir.join("trace.csv")
    }

    pub fn trace_json(&self) -> PathBuf {
        self.dir.join("trace.json")
    }

    pub fn ledger(&self) -> PathBuf {
        self.dir.join("ledger.json")
    }

    pub fn report(&self) -> PathBuf {
        self.dir.join("report.txt")
    }

    pub fn geometry_report(&self) -> PathBuf {
        self.dir.join("geometry.json")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{run, FlowConfig};
    use std::sync::Arc;

    #[test]
    fn csv_has_one_row_per_snapshot_and_termination_on_last() {
        let mut cfg = FlowConfig::new(
            FlowGeometry::Model(ModelMetric::RoundSphere {
                dim: 2,
                radius: 1.0,
            }),
            0.1,
            0.05,
        );
        cfg.dt_init = 1e-3;
        let trace = run(&cfg).unwrap();
        let csv = trace_csv(&trace);
        let lines: Vec<&str> = csv.trim().lines().collect();
        assert_eq!(lines.len(), trace.states.len() + 1);
        assert!(lines[0].starts_with("t,sup_rm"));
        assert!(lines.last().unwrap().ends_with("reached_target"));
        assert!(lines[1].ends_with(','));
    }

    #[test]
    fn metric_file_round_trip() {
        let grid = Arc::new(ChartGrid::new(&[6, 6], &[1.0, 2.0]).unwrap());
        let g = MetricField::from_fn(grid, |x, m| {
            m[0] = 1.0 + 0.1 * (2.0 * std::f64::consts::PI * x[0]).sin();
            m[1] = 0.02;
            m[2] = 0.02;
            m[3] = 0.9;
        })
        .unwrap();
        let file = GridMetricFile::from_metric(&g);
        let text = serde_json::to_string(&file).unwrap();
        let parsed: GridMetricFile = serde_json::from_str(&text).unwrap();
        let g2 = parsed.into_metric().unwrap();
        assert_eq!(g.field().data(), g2.field().data());
    }

    #[test]
    fn atomic_write_creates_parents_and_replaces() {
        let dir = std::env::temp_dir().join(format!("riccilab-io-{}", std::process::id()));
        let path = dir.join("a/b/out.txt");
        write_atomic(&path, "one").unwrap();
        write_atomic(&path, "two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        fs::remove_dir_all(&dir).unwrap();
    }
}
