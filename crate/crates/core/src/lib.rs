//! Numerical laboratory for Ricci flow on chart-sampled Riemannian metrics.
//!
//! The crate integrates the flow `dg/dt = -2 Ric(g)` on periodic chart grids
//! and on symmetry-reduced model geometries, measures the geometric
//! quantities the smoothing estimates are stated in (curvature norms,
//! conjugate radius, diameter, volume, excess, Sobolev constants), and
//! assembles a machine-checkable ledger of inequality checks.
//!
//! Module map:
//!
//! * [`grid`] / [`field`] / [`metric`] — periodic chart grids and the tensor
//!   fields sampled on them.
//! * [`curvature`] — Christoffel symbols, Riemann/Ricci/scalar curvature,
//!   tensor norms and the Laplace–Beltrami operator, all by centered
//!   second-order finite differences.
//! * [`models`] — closed-form model geometries (spheres, tori, products,
//!   Berger-type SU(2) metrics, nilmanifold shears) used as oracles.
//! * [`flow`] — time integration of the flow with step control, blowup
//!   detection and per-snapshot diagnostics.
//! * [`patch`] — bounded subdomains with Dirichlet boundary (lifted balls).
//! * [`probes`] — geodesics, Jacobi conjugate radius, distance/diameter,
//!   volume, excess, Sobolev constants, epsilon-net coverings.
//! * [`moser`] — parabolic sup bounds for heat-type inequalities on patches.
//! * [`verify`] — the estimate ledger and the inequality checkers.
//! * [`scenario`] — the line-oriented scenario schema and its runner.

pub mod curvature;
pub mod error;
pub mod field;
pub mod flow;
pub mod grid;
pub mod linalg;
pub mod metric;
pub mod models;
pub mod moser;
pub mod patch;
pub mod probes;
pub mod report;
pub mod scenario;
pub mod util;
pub mod verify;

pub use error::{FlowError, GeometryError, MoserError, ProbeError, ScenarioError};
pub use grid::ChartGrid;
pub use metric::MetricField;
