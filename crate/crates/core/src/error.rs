//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by chart/tensor-calculus operations.
#[derive(Debug, Error)]
pub enum GeometryError {
    /// Metric matrix at a node is not positive definite (or not finite).
    #[error("degenerate metric at node {node}: smallest eigenvalue {eigenvalue:.3e} below threshold {threshold:.1e}")]
    DegenerateMetric {
        node: usize,
        eigenvalue: f64,
        threshold: f64,
    },
    #[error("metric component field is not symmetric at node {node}")]
    AsymmetricMetric { node: usize },
    #[error("chart mismatch: {0}")]
    ChartMismatch(String),
    #[error("invalid chart: {0}")]
    InvalidChart(String),
    #[error("L^p norm requires p >= 1, got {0}")]
    InvalidExponent(f64),
    #[error("unsupported dimension {got}: {context}")]
    UnsupportedDimension { got: usize, context: String },
    #[error("unsupported family for this operation: {0}")]
    UnsupportedFamily(String),
}

/// Errors raised by flow integration.
#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid flow configuration: {0}")]
    InvalidConfig(String),
    #[error("step size {dt:.3e} exceeds stability bound {bound:.3e}")]
    RejectedStep { dt: f64, bound: f64 },
    #[error("metric lost positivity at node {node} (t = {t:.6})")]
    PositivityLoss { node: usize, t: f64 },
    #[error("chart too small: ball of radius {radius} exceeds half the minimal period {half_period}")]
    ChartTooSmall { radius: f64, half_period: f64 },
    #[error("snapshots are not uniformly spaced (resample before computing residuals): {0}")]
    NonUniformCadence(String),
    #[error("trace too short: need at least {need} snapshots, have {have}")]
    TraceTooShort { need: usize, have: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Errors raised by geometric probes.
#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("geodesic left the resolvable chart after arc length {arc_length:.6}")]
    ChartExit { arc_length: f64 },
    #[error("need at least {need} sample directions, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("unsupported geometry for this probe: {0}")]
    UnsupportedGeometry(String),
    #[error("epsilon-net requires 0 < epsilon < r, got epsilon = {epsilon}, r = {r}")]
    BadNetParameters { epsilon: f64, r: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Errors raised by the parabolic sup-bound module.
#[derive(Debug, Error)]
pub enum MoserError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("exponent q must exceed the dimension n: q = {q}, n = {n}")]
    ExponentTooSmall { q: f64, n: usize },
    #[error("dimension must be >= 3 (the sharp Sobolev exponent degenerates at n = 2), got {0}")]
    UnsupportedDimension(usize),
    #[error("probe point too close to the boundary: dist = {dist:.6}, need >= {need:.6}")]
    TooCloseToBoundary { dist: f64, need: f64 },
    #[error("time stepping diverged at step {step}: {reason}")]
    SteppingFailure { step: usize, reason: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Errors raised while parsing, validating or running scenarios.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Moser(#[from] MoserError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
