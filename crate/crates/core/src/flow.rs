//! Time integration of the flow `dg/dt = -2 Ric(g)`.
//!
//! Model families integrate their symmetry-reduced parameter ODEs; grid
//! metrics integrate the full component system by the method of lines.
//! Both use classical 4-stage Runge-Kutta with the right side recomputed at
//! every stage. Step control follows a parabolic CFL bound
//! `dt <= cfl * h^2 / max(1, sup|Rm|)` on grids and `dt <= c / max(1,
//! sup|Rm|)` on reduced ODEs; a run terminates when it reaches the target
//! time, when `sup|Rm|` crosses the blowup threshold (the numerical proxy
//! for the bounded-curvature continuation criterion), or when the metric
//! loses positivity.

use serde::Serialize;

use crate::curvature::{self, MetricAux};
use crate::error::{FlowError, GeometryError};
use crate::field::{NodeField, ScalarField};
use crate::metric::MetricField;
use crate::models::{CurvatureSummary, ModelMetric};
use crate::patch::PatchDomain;

/// Initial data for a flow: a model family (ODE reduction) or a sampled
/// metric (method of lines).
#[derive(Debug, Clone)]
pub enum FlowGeometry {
    Model(ModelMetric),
    Grid(MetricField),
}

impl FlowGeometry {
    pub fn model(&self) -> Option<&ModelMetric> {
        match self {
            FlowGeometry::Model(m) => Some(m),
            _ => None,
        }
    }

    pub fn grid_metric(&self) -> Option<&MetricField> {
        match self {
            FlowGeometry::Grid(g) => Some(g),
            _ => None,
        }
    }
}

/// Flow configuration.
#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub geometry: FlowGeometry,
    /// Target time `T > 0`.
    pub target_time: f64,
    /// Initial (and maximal, unless `max_dt` is smaller) step size.
    pub dt_init: f64,
    pub max_dt: f64,
    /// CFL constant `kappa` in `dt <= kappa h^2 / max(1, sup|Rm|)`.
    pub cfl: f64,
    /// ODE-reduction step coefficient in `dt <= c / max(1, sup|Rm|)`.
    pub ode_dt_coeff: f64,
    /// Blowup cap on `sup|Rm|`; default `1e6 * (initial sup|Rm| + 1)`.
    pub blowup_threshold: Option<f64>,
    /// Steps between `sup|Rm|` recomputes on grid flows.
    pub curvature_cadence: usize,
    /// Snapshot spacing in time.
    pub snapshot_dt: f64,
    /// Optional gauge-fixed mode (background-connection correction term)
    /// for grid stability experiments. Excluded from all verification runs.
    pub gauge_fixed: bool,
}

impl FlowConfig {
    pub fn new(geometry: FlowGeometry, target_time: f64, snapshot_dt: f64) -> Self {
        FlowConfig {
            geometry,
            target_time,
            dt_init: 1e-3,
            max_dt: 1e-2,
            cfl: 0.1,
            ode_dt_coeff: 0.05,
            blowup_threshold: None,
            curvature_cadence: 8,
            snapshot_dt,
            gauge_fixed: false,
        }
    }

    fn validate(&self, initial_sup_rm: f64) -> Result<(), FlowError> {
        if !(self.target_time > 0.0) {
            return Err(FlowError::InvalidConfig(format!(
                "target time must be positive, got {}",
                self.target_time
            )));
        }
        if !(self.dt_init > 0.0) || !(self.max_dt >= self.dt_init) {
            return Err(FlowError::InvalidConfig(
                "need 0 < dt_init <= max_dt".into(),
            ));
        }
        if !(self.snapshot_dt > 0.0) {
            return Err(FlowError::InvalidConfig(
                "snapshot spacing must be positive".into(),
            ));
        }
        if self.curvature_cadence == 0 {
            return Err(FlowError::InvalidConfig(
                "curvature cadence must be at least 1".into(),
            ));
        }
        if let Some(cap) = self.blowup_threshold {
            if !(cap > initial_sup_rm) {
                return Err(FlowError::InvalidConfig(format!(
                    "blowup threshold {cap} must exceed the initial sup|Rm| {initial_sup_rm}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-snapshot diagnostics, all recomputable from the stored metric.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub sup_rm: f64,
    pub sup_ric: f64,
    /// `|g(t) - g0|` in the initial metric.
    pub c0_distance: f64,
    pub scalar_min: f64,
    pub scalar_max: f64,
    /// `sup || dg/dt ||` measured in `g(t)` (= `2 sup|Ric|` for the plain flow).
    pub l_instant: f64,
    pub volume: f64,
}

/// One point of a flow trace.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub t: f64,
    pub geometry: FlowGeometry,
    pub diag: Diagnostics,
}

/// Why a run stopped.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum Termination {
    ReachedTarget,
    Blowup { t: f64, sup_rm: f64 },
    PositivityLoss { t: f64, node: usize },
}

/// Time-ordered record of a flow.
#[derive(Debug, Clone)]
pub struct FlowTrace {
    pub states: Vec<FlowState>,
    pub termination: Termination,
    pub initial_sup_ric: f64,
    /// Running maxima over the recorded snapshots.
    pub max_sup_ric: f64,
    pub max_l: f64,
}

impl FlowTrace {
    pub fn initial(&self) -> &FlowState {
        &self.states[0]
    }

    pub fn last(&self) -> &FlowState {
        self.states.last().unwrap()
    }

    /// Trapezoid integral of `sup|Rm|` from 0 to the k-th snapshot.
    pub fn sup_rm_integral_to(&self, k: usize) -> f64 {
        let mut s = 0.0;
        for w in self.states[..=k].windows(2) {
            let dt = w[1].t - w[0].t;
            s += 0.5 * dt * (w[0].diag.sup_rm + w[1].diag.sup_rm);
        }
        s
    }

    /// Trapezoid integral of `sup|Ric|` from 0 to the k-th snapshot.
    pub fn sup_ric_integral_to(&self, k: usize) -> f64 {
        let mut s = 0.0;
        for w in self.states[..=k].windows(2) {
            let dt = w[1].t - w[0].t;
            s += 0.5 * dt * (w[0].diag.sup_ric + w[1].diag.sup_ric);
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Right-hand sides
// ---------------------------------------------------------------------------

fn model_params(m: &ModelMetric) -> Vec<f64> {
    match m {
        ModelMetric::RoundSphere { radius, .. } => vec![radius * radius],
        ModelMetric::FlatTorus { .. } => vec![],
        ModelMetric::ProductSphereCircle { radius, .. } => vec![radius * radius],
        ModelMetric::MilnorSu2 { lambda } => lambda.to_vec(),
        ModelMetric::HeisenbergNil { .. } => vec![],
    }
}

fn model_with_params(template: &ModelMetric, p: &[f64]) -> Result<ModelMetric, FlowError> {
    let bad = || FlowError::PositivityLoss { node: 0, t: f64::NAN };
    Ok(match template {
        ModelMetric::RoundSphere { dim, .. } => {
            if !(p[0] > 0.0) {
                return Err(bad());
            }
            ModelMetric::RoundSphere {
                dim: *dim,
                radius: p[0].sqrt(),
            }
        }
        ModelMetric::FlatTorus { periods } => ModelMetric::FlatTorus {
            periods: periods.clone(),
        },
        ModelMetric::ProductSphereCircle { circle_length, .. } => {
            if !(p[0] > 0.0) {
                return Err(bad());
            }
            ModelMetric::ProductSphereCircle {
                radius: p[0].sqrt(),
                circle_length: *circle_length,
            }
        }
        ModelMetric::MilnorSu2 { .. } => {
            if p.iter().any(|v| !(*v > 0.0)) {
                return Err(bad());
            }
            ModelMetric::MilnorSu2 {
                lambda: [p[0], p[1], p[2]],
            }
        }
        ModelMetric::HeisenbergNil { .. } => template.clone(),
    })
}

fn model_rhs(template: &ModelMetric, p: &[f64]) -> Result<Vec<f64>, FlowError> {
    let m = model_with_params(template, p)?;
    Ok(match m {
        // g = r^2 * unit round metric, Ric = (n-1) * unit: d(r^2)/dt = -2(n-1).
        ModelMetric::RoundSphere { dim, .. } => vec![-2.0 * (dim as f64 - 1.0)],
        ModelMetric::FlatTorus { .. } => vec![],
        ModelMetric::ProductSphereCircle { .. } => vec![-2.0],
        ModelMetric::MilnorSu2 { lambda } => crate::models::milnor_flow_rhs(&lambda).to_vec(),
        ModelMetric::HeisenbergNil { .. } => vec![],
    })
}

/// `-2 Ric(g)` (plus the optional gauge correction) as a component field.
fn grid_rhs(g: &MetricField, gauge_fixed: bool, t: f64) -> Result<NodeField, FlowError> {
    let aux = curvature::metric_aux(g).map_err(|e| positivity_from(e, t))?;
    let gamma = curvature::christoffel(g, &aux);
    let ric = curvature::ricci_tensor(g, &gamma);
    let n = g.dim();
    let mut rhs = NodeField::zeros(g.grid().clone(), n * n);
    for (dst, src) in rhs.data_mut().iter_mut().zip(ric.data()) {
        *dst = -2.0 * src;
    }
    if gauge_fixed {
        add_gauge_correction(g, &aux, &gamma, &mut rhs);
    }
    Ok(rhs)
}

/// Background-connection correction `L_W g` with `W^k = g^{pq} G^k_pq`
/// (flat chart background): `(L_W g)_ij = d_i W_j + d_j W_i - 2 G^k_ij W_k`.
fn add_gauge_correction(g: &MetricField, aux: &MetricAux, gamma: &NodeField, rhs: &mut NodeField) {
    let grid = g.grid().clone();
    let n = g.dim();
    let nn = n * n;
    let mut w_low = NodeField::zeros(grid.clone(), n);
    for node in 0..grid.node_count() {
        let gi = aux.inverse.at(node);
        let gm = g.at(node);
        let gam = gamma.at(node);
        let mut w_up = [0.0; crate::linalg::MAX_DIM];
        for k in 0..n {
            let mut s = 0.0;
            for p in 0..n {
                for q in 0..n {
                    s += gi[p * n + q] * gam[k * nn + p * n + q];
                }
            }
            w_up[k] = s;
        }
        let dst = w_low.at_mut(node);
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += gm[j * n + k] * w_up[k];
            }
            dst[j] = s;
        }
    }
    let h = grid.spacing().to_vec();
    for node in 0..grid.node_count() {
        let gam = gamma.at(node).to_vec();
        let wc = w_low.at(node).to_vec();
        let mut dw = [0.0; crate::linalg::MAX_DIM * crate::linalg::MAX_DIM];
        for a in 0..n {
            let p = w_low.at(grid.neighbor(node, a, 1));
            let m = w_low.at(grid.neighbor(node, a, 0));
            for j in 0..n {
                dw[a * n + j] = (p[j] - m[j]) * 0.5 / h[a];
            }
        }
        let dst = rhs.at_mut(node);
        for i in 0..n {
            for j in 0..n {
                let mut v = dw[i * n + j] + dw[j * n + i];
                for k in 0..n {
                    v -= 2.0 * gam[k * nn + i * n + j] * wc[k];
                }
                dst[i * n + j] += v;
            }
        }
    }
}

fn positivity_from(e: GeometryError, t: f64) -> FlowError {
    match e {
        GeometryError::DegenerateMetric { node, .. } => FlowError::PositivityLoss { node, t },
        other => FlowError::Geometry(other),
    }
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

fn model_diagnostics(m: &ModelMetric, initial: &ModelMetric) -> Result<Diagnostics, FlowError> {
    let s: CurvatureSummary = m.exact_curvature()?;
    let c0 = m.c0_distance_from(initial)?;
    let volume = m.exact_volume().unwrap_or(f64::NAN);
    Ok(Diagnostics {
        sup_rm: s.rm_norm,
        sup_ric: s.ric_norm,
        c0_distance: c0,
        scalar_min: s.scalar,
        scalar_max: s.scalar,
        l_instant: 2.0 * s.ric_norm,
        volume,
    })
}

fn grid_diagnostics(g: &MetricField, g0: &MetricField) -> Result<Diagnostics, FlowError> {
    let aux = curvature::metric_aux(g)?;
    let gamma = curvature::christoffel(g, &aux);
    let ric = curvature::ricci_tensor(g, &gamma);
    let rm = curvature::rm_norm_field(g, &aux, &gamma);
    let ric_norm = curvature::ric_op_norm_field(g, &ric);
    let scal = curvature::scalar_curvature(&aux, &ric);
    let (smin, smax) = scal.min_max();
    let sup_ric = ric_norm.max_abs();
    Ok(Diagnostics {
        sup_rm: rm.max_abs(),
        sup_ric,
        c0_distance: g.c0_distance(g0)?,
        scalar_min: smin,
        scalar_max: smax,
        l_instant: 2.0 * sup_ric,
        volume: curvature::volume(&aux),
    })
}

/// Recomputes the diagnostics of a state from its stored geometry (the
/// stored values must match; exercised by tests).
pub fn diagnostics_of(
    geometry: &FlowGeometry,
    initial: &FlowGeometry,
) -> Result<Diagnostics, FlowError> {
    match (geometry, initial) {
        (FlowGeometry::Model(m), FlowGeometry::Model(m0)) => model_diagnostics(m, m0),
        (FlowGeometry::Grid(g), FlowGeometry::Grid(g0)) => grid_diagnostics(g, g0),
        _ => Err(FlowError::InvalidConfig(
            "state and initial geometry kinds differ".into(),
        )),
    }
}

fn sup_rm_only(g: &MetricField, t: f64) -> Result<f64, FlowError> {
    let aux = curvature::metric_aux(g).map_err(|e| positivity_from(e, t))?;
    let gamma = curvature::christoffel(g, &aux);
    Ok(curvature::rm_norm_field(g, &aux, &gamma).max_abs())
}

// ---------------------------------------------------------------------------
// Stepping
// ---------------------------------------------------------------------------

/// Stability bound for the current state.
pub fn stability_bound(geometry: &FlowGeometry, sup_rm: f64, cfl: f64, ode_coeff: f64) -> f64 {
    let denom = sup_rm.max(1.0);
    match geometry {
        FlowGeometry::Grid(g) => {
            let h = g.grid().min_spacing();
            cfl * h * h / denom
        }
        FlowGeometry::Model(_) => ode_coeff / denom,
    }
}

fn advance(geometry: &FlowGeometry, dt: f64, gauge: bool, t: f64) -> Result<FlowGeometry, FlowError> {
    match geometry {
        FlowGeometry::Model(m) => {
            let p0 = model_params(m);
            if p0.is_empty() {
                return Ok(geometry.clone());
            }
            let k1 = model_rhs(m, &p0)?;
            let p2: Vec<f64> = p0.iter().zip(&k1).map(|(a, b)| a + 0.5 * dt * b).collect();
            let k2 = model_rhs(m, &p2)?;
            let p3: Vec<f64> = p0.iter().zip(&k2).map(|(a, b)| a + 0.5 * dt * b).collect();
            let k3 = model_rhs(m, &p3)?;
            let p4: Vec<f64> = p0.iter().zip(&k3).map(|(a, b)| a + dt * b).collect();
            let k4 = model_rhs(m, &p4)?;
            let p_new: Vec<f64> = (0..p0.len())
                .map(|i| p0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect();
            Ok(FlowGeometry::Model(model_with_params(m, &p_new)?))
        }
        FlowGeometry::Grid(g) => {
            let k1 = grid_rhs(g, gauge, t)?;
            let mut g2 = g.clone();
            g2.field_mut().axpy(0.5 * dt, &k1);
            let k2 = grid_rhs(&g2, gauge, t)?;
            let mut g3 = g.clone();
            g3.field_mut().axpy(0.5 * dt, &k2);
            let k3 = grid_rhs(&g3, gauge, t)?;
            let mut g4 = g.clone();
            g4.field_mut().axpy(dt, &k3);
            let k4 = grid_rhs(&g4, gauge, t)?;
            let mut out = g.clone();
            {
                let d = out.field_mut().data_mut();
                let (a, b, c, e) = (k1.data(), k2.data(), k3.data(), k4.data());
                let s = dt / 6.0;
                for i in 0..d.len() {
                    d[i] += s * (a[i] + 2.0 * b[i] + 2.0 * c[i] + e[i]);
                }
            }
            if let Some(node) = out.first_degenerate_node() {
                return Err(FlowError::PositivityLoss { node, t: t + dt });
            }
            Ok(FlowGeometry::Grid(out))
        }
    }
}

/// One flow step of size `dt` from a state, with full diagnostics on the
/// result. `dt` must respect the stability bound for the state's current
/// `sup|Rm|`; larger steps are rejected.
pub fn step(state: &FlowState, dt: f64, cfg: &FlowConfig) -> Result<FlowState, FlowError> {
    if !(dt > 0.0) {
        return Err(FlowError::InvalidConfig("step size must be positive".into()));
    }
    let bound = stability_bound(&state.geometry, state.diag.sup_rm, cfg.cfl, cfg.ode_dt_coeff);
    if dt > bound * (1.0 + 1e-12) {
        return Err(FlowError::RejectedStep { dt, bound });
    }
    let geometry = advance(&state.geometry, dt, cfg.gauge_fixed, state.t)?;
    let diag = diagnostics_of(&geometry, initial_geometry_of(cfg, state)?)?;
    Ok(FlowState {
        t: state.t + dt,
        geometry,
        diag,
    })
}

fn initial_geometry_of<'a>(
    cfg: &'a FlowConfig,
    _state: &FlowState,
) -> Result<&'a FlowGeometry, FlowError> {
    Ok(&cfg.geometry)
}

/// Integrates the flow to the configured target, snapshotting at the
/// configured cadence. Step errors become termination reasons; a blowup is
/// recorded, never silently truncated.
pub fn run(cfg: &FlowConfig) -> Result<FlowTrace, FlowError> {
    let initial_diag = diagnostics_of(&cfg.geometry, &cfg.geometry)?;
    cfg.validate(initial_diag.sup_rm)?;
    let blowup_cap = cfg
        .blowup_threshold
        .unwrap_or(1e6 * (initial_diag.sup_rm + 1.0));

    let mut states = vec![FlowState {
        t: 0.0,
        geometry: cfg.geometry.clone(),
        diag: initial_diag.clone(),
    }];
    let initial_sup_ric = initial_diag.sup_ric;

    let mut geometry = cfg.geometry.clone();
    let mut t = 0.0;
    let mut sup_rm_est = initial_diag.sup_rm;
    let mut steps_since_probe = 0usize;
    let mut next_snapshot = cfg.snapshot_dt.min(cfg.target_time);
    // The controller multiplies by 1.1 before the first step, so seed it
    // such that the first step is exactly dt_init.
    let mut dt_prev = cfg.dt_init / 1.1;
    let is_model = matches!(geometry, FlowGeometry::Model(_));

    let termination = loop {
        if t >= cfg.target_time - 1e-14 {
            break Termination::ReachedTarget;
        }
        if sup_rm_est > blowup_cap {
            break Termination::Blowup {
                t,
                sup_rm: sup_rm_est,
            };
        }
        let bound = stability_bound(&geometry, sup_rm_est, cfg.cfl, cfg.ode_dt_coeff);
        // Grow gently toward max_dt, shrink immediately to the bound.
        dt_prev = (dt_prev * 1.1).min(cfg.max_dt).min(bound);
        let mut dt = dt_prev;
        if dt <= 1e-15 {
            break Termination::Blowup {
                t,
                sup_rm: sup_rm_est,
            };
        }
        let hit_snapshot = t + dt >= next_snapshot - 1e-14;
        if hit_snapshot {
            dt = next_snapshot - t;
        }
        geometry = match advance(&geometry, dt, cfg.gauge_fixed, t) {
            Ok(g) => g,
            Err(FlowError::PositivityLoss { node, .. }) => {
                break Termination::PositivityLoss { t, node };
            }
            Err(e) => return Err(e),
        };
        t = if hit_snapshot { next_snapshot } else { t + dt };
        steps_since_probe += 1;

        if hit_snapshot {
            let diag = diagnostics_of(&geometry, &cfg.geometry)?;
            sup_rm_est = diag.sup_rm;
            steps_since_probe = 0;
            states.push(FlowState {
                t,
                geometry: geometry.clone(),
                diag,
            });
            next_snapshot = (next_snapshot + cfg.snapshot_dt).min(cfg.target_time);
        } else if is_model || steps_since_probe >= cfg.curvature_cadence {
            sup_rm_est = match &geometry {
                FlowGeometry::Model(m) => m.exact_curvature()?.rm_norm,
                FlowGeometry::Grid(g) => sup_rm_only(g, t)?,
            };
            steps_since_probe = 0;
        }
    };

    // Record the terminal state when it is not already the last snapshot.
    let need_final = match termination {
        Termination::ReachedTarget => (states.last().unwrap().t - t).abs() > 1e-12,
        Termination::Blowup { .. } => true,
        Termination::PositivityLoss { .. } => false,
    };
    if need_final {
        if let Ok(diag) = diagnostics_of(&geometry, &cfg.geometry) {
            states.push(FlowState {
                t,
                geometry: geometry.clone(),
                diag,
            });
        }
    }

    let max_sup_ric = states.iter().fold(0.0f64, |m, s| m.max(s.diag.sup_ric));
    let max_l = states.iter().fold(0.0f64, |m, s| m.max(s.diag.l_instant));
    Ok(FlowTrace {
        states,
        termination,
        initial_sup_ric,
        max_sup_ric,
        max_l,
    })
}

// ---------------------------------------------------------------------------
// Lifted initial data
// ---------------------------------------------------------------------------

/// Quantities extracted from a chart ball standing in for the exponential
/// lift at a base point.
pub struct LiftedPatch {
    pub patch: PatchDomain,
    /// `||Rm||_{p0}` over the ball, volume form of `g`.
    pub rm_lp: f64,
    /// Sobolev constant estimate of the ball.
    pub sobolev: f64,
}

/// Extracts the chart ball of radius `r0/2` at a base node and measures the
/// initial quantities the propagation estimates are stated in: the L^{p0}
/// curvature norm and the Sobolev constant of the ball.
pub fn lifted_initial_data(
    g: &MetricField,
    rm_norm: &ScalarField,
    center: usize,
    r0: f64,
    p0: f64,
    seed: u64,
) -> Result<LiftedPatch, FlowError> {
    let patch = PatchDomain::chart_ball(g.grid().clone(), center, 0.5 * r0)?;
    let aux = curvature::metric_aux(g)?;
    let rm_lp = patch.lq_norm(rm_norm.data(), &aux, p0);
    let sobolev = crate::probes::sobolev_constant_on_patch(g, &aux, &patch, seed)
        .map_err(|e| FlowError::InvalidConfig(format!("sobolev probe failed: {e}")))?;
    Ok(LiftedPatch {
        patch,
        rm_lp,
        sobolev,
    })
}

// ---------------------------------------------------------------------------
// Evolution residuals
// ---------------------------------------------------------------------------

/// Per-trace residual report for the evolution identities.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    /// `(t, sup |dR/dt - Lap R - 2 |Ric|^2|)` at interior snapshots.
    pub scalar_identity: Vec<(f64, f64)>,
    /// Smallest `c` such that `d|Rm|/dt <= Lap|Rm| + c |Rm|^2` held at all
    /// nodes and interior snapshots (0 when curvature vanishes).
    pub quadratic_constant: f64,
    /// Fitted `c` in `sup|Ric|(t) <= sup|Ric|(0) exp(c int_0^t sup|Rm|)`.
    pub ricci_growth_constant: f64,
}

fn check_uniform_cadence(trace: &FlowTrace) -> Result<f64, FlowError> {
    if trace.states.len() < 3 {
        return Err(FlowError::TraceTooShort {
            need: 3,
            have: trace.states.len(),
        });
    }
    let dt = trace.states[1].t - trace.states[0].t;
    for w in trace.states.windows(2) {
        let d = w[1].t - w[0].t;
        if (d - dt).abs() > 1e-9 * dt.max(1e-30) {
            return Err(FlowError::NonUniformCadence(format!(
                "spacing {d} vs {dt}"
            )));
        }
    }
    Ok(dt)
}

/// Residuals of the curvature evolution identities over a uniformly
/// snapshotted trace: the scalar identity `dR/dt = Lap R + 2 |Ric|^2`
/// (Frobenius contraction), the quadratic sup inequality for `|Rm|`, and
/// the exponential growth form for `sup|Ric|`.
pub fn evolution_residuals(trace: &FlowTrace) -> Result<ResidualReport, FlowError> {
    let dt = check_uniform_cadence(trace)?;
    let mut scalar_identity = Vec::new();
    let mut quad_c = 0.0f64;
    match &trace.states[0].geometry {
        FlowGeometry::Model(_) => {
            for k in 1..trace.states.len() - 1 {
                let m_prev = trace.states[k - 1].geometry.model().unwrap();
                let m = trace.states[k].geometry.model().unwrap();
                let m_next = trace.states[k + 1].geometry.model().unwrap();
                let s_prev = m_prev.exact_curvature()?;
                let s = m.exact_curvature()?;
                let s_next = m_next.exact_curvature()?;
                // Homogeneous: Lap R = 0; |Ric|^2 is the Frobenius sum.
                let drdt = (s_next.scalar - s_prev.scalar) / (2.0 * dt);
                let ric2: f64 = s.ricci_eigenvalues.iter().map(|r| r * r).sum();
                scalar_identity.push((trace.states[k].t, (drdt - 2.0 * ric2).abs()));
                let dn = (s_next.rm_norm - s_prev.rm_norm) / (2.0 * dt);
                if s.rm_norm > 1e-12 {
                    quad_c = quad_c.max(dn / (s.rm_norm * s.rm_norm));
                }
            }
        }
        FlowGeometry::Grid(_) => {
            for k in 1..trace.states.len() - 1 {
                let g_prev = trace.states[k - 1].geometry.grid_metric().unwrap();
                let g = trace.states[k].geometry.grid_metric().unwrap();
                let g_next = trace.states[k + 1].geometry.grid_metric().unwrap();
                let aux = curvature::metric_aux(g)?;
                let gamma = curvature::christoffel(g, &aux);
                let ric = curvature::ricci_tensor(g, &gamma);
                let scal = curvature::scalar_curvature(&aux, &ric);
                let ric2 = curvature::ric_frobenius_sq_field(&aux, &ric);
                let lap_r = curvature::laplace_beltrami(g, &aux, &scal)?;
                let scal_prev = scalar_of(g_prev)?;
                let scal_next = scalar_of(g_next)?;
                let mut worst = 0.0f64;
                for node in 0..g.grid().node_count() {
                    let drdt = (scal_next.value(node) - scal_prev.value(node)) / (2.0 * dt);
                    let res = drdt - lap_r.value(node) - 2.0 * ric2.value(node);
                    worst = worst.max(res.abs());
                }
                scalar_identity.push((trace.states[k].t, worst));

                // Quadratic sup inequality for |Rm|.
                let rm = curvature::rm_norm_field(g, &aux, &gamma);
                let rm_prev = rm_of(g_prev)?;
                let rm_next = rm_of(g_next)?;
                let lap_rm = curvature::laplace_beltrami(g, &aux, &rm)?;
                let floor = 1e-8 * (1.0 + rm.max_abs());
                for node in 0..g.grid().node_count() {
                    let v = rm.value(node);
                    if v > floor {
                        let dndt = (rm_next.value(node) - rm_prev.value(node)) / (2.0 * dt);
                        let c = (dndt - lap_rm.value(node)) / (v * v);
                        quad_c = quad_c.max(c);
                    }
                }
            }
        }
    }

    // sup|Ric| growth form.
    let phi0 = trace.states[0].diag.sup_ric;
    let mut growth_c = 0.0f64;
    if phi0 > 1e-14 {
        for k in 1..trace.states.len() {
            let phi = trace.states[k].diag.sup_ric;
            let integ = trace.sup_rm_integral_to(k);
            if phi > phi0 && integ > 1e-14 {
                growth_c = growth_c.max((phi / phi0).ln() / integ);
            }
        }
    }

    Ok(ResidualReport {
        scalar_identity,
        quadratic_constant: quad_c,
        ricci_growth_constant: growth_c,
    })
}

fn scalar_of(g: &MetricField) -> Result<ScalarField, FlowError> {
    let aux = curvature::metric_aux(g)?;
    let gamma = curvature::christoffel(g, &aux);
    let ric = curvature::ricci_tensor(g, &gamma);
    Ok(curvature::scalar_curvature(&aux, &ric))
}

fn rm_of(g: &MetricField) -> Result<ScalarField, FlowError> {
    let aux = curvature::metric_aux(g)?;
    let gamma = curvature::christoffel(g, &aux);
    Ok(curvature::rm_norm_field(g, &aux, &gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ChartGrid;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn sphere(dim: usize, radius: f64) -> FlowGeometry {
        FlowGeometry::Model(ModelMetric::RoundSphere { dim, radius })
    }

    #[test]
    fn sphere_step_matches_closed_form() {
        let cfg = FlowConfig::new(sphere(2, 1.0), 0.4, 0.1);
        let diag = diagnostics_of(&cfg.geometry, &cfg.geometry).unwrap();
        let state = FlowState {
            t: 0.0,
            geometry: cfg.geometry.clone(),
            diag,
        };
        let dt = 1e-4;
        let next = step(&state, dt, &cfg).unwrap();
        assert_eq!(next.t, dt);
        let r2 = match next.geometry.model().unwrap() {
            ModelMetric::RoundSphere { radius, .. } => radius * radius,
            _ => unreachable!(),
        };
        // Linear ODE: RK4 is exact up to roundoff.
        assert_abs_diff_eq!(r2, 1.0 - 2.0 * dt, epsilon = 1e-15);
    }

    #[test]
    fn oversized_step_is_rejected() {
        let cfg = FlowConfig::new(sphere(2, 1.0), 0.4, 0.1);
        let diag = diagnostics_of(&cfg.geometry, &cfg.geometry).unwrap();
        let state = FlowState {
            t: 0.0,
            geometry: cfg.geometry.clone(),
            diag,
        };
        assert!(matches!(
            step(&state, 10.0, &cfg),
            Err(FlowError::RejectedStep { .. })
        ));
    }

    #[test]
    fn flat_torus_grid_is_stationary() {
        let grid = Arc::new(ChartGrid::new(&[8, 8], &[1.0, 1.0]).unwrap());
        let g = MetricField::euclidean(grid);
        let mut cfg = FlowConfig::new(FlowGeometry::Grid(g.clone()), 0.05, 0.025);
        cfg.dt_init = 1e-3;
        cfg.max_dt = 1e-3;
        let trace = run(&cfg).unwrap();
        assert_eq!(trace.termination, Termination::ReachedTarget);
        let last = trace.last().geometry.grid_metric().unwrap();
        assert_eq!(last.c0_distance(&g).unwrap(), 0.0);
        assert_eq!(trace.last().diag.sup_rm, 0.0);
    }

    #[test]
    fn sphere_run_reaches_target_and_blows_up_past_half() {
        let mut cfg = FlowConfig::new(sphere(2, 1.0), 0.4, 0.05);
        cfg.dt_init = 1e-4;
        cfg.max_dt = 1e-4;
        let trace = run(&cfg).unwrap();
        assert_eq!(trace.termination, Termination::ReachedTarget);
        let r2 = match trace.last().geometry.model().unwrap() {
            ModelMetric::RoundSphere { radius, .. } => radius * radius,
            _ => unreachable!(),
        };
        assert!((r2 - 0.2).abs() < 1e-8 * 0.2, "r2 {r2}");

        let mut cfg = FlowConfig::new(sphere(2, 1.0), 0.6, 0.05);
        cfg.dt_init = 1e-3;
        cfg.max_dt = 1e-3;
        let trace = run(&cfg).unwrap();
        match trace.termination {
            Termination::Blowup { t, .. } => assert!(t < 0.5, "blowup at {t}"),
            other => panic!("expected blowup, got {other:?}"),
        }
    }

    #[test]
    fn snapshots_are_uniform_and_diagnostics_recompute() {
        let mut cfg = FlowConfig::new(sphere(3, 2.0), 0.2, 0.04);
        cfg.dt_init = 5e-4;
        cfg.max_dt = 5e-4;
        let trace = run(&cfg).unwrap();
        assert_eq!(trace.states.len(), 6);
        for (k, s) in trace.states.iter().enumerate() {
            assert_abs_diff_eq!(s.t, 0.04 * k as f64, epsilon = 1e-12);
            let re = diagnostics_of(&s.geometry, &cfg.geometry).unwrap();
            assert_abs_diff_eq!(re.sup_rm, s.diag.sup_rm, epsilon = 1e-12);
            assert_abs_diff_eq!(re.sup_ric, s.diag.sup_ric, epsilon = 1e-12);
            assert_abs_diff_eq!(re.c0_distance, s.diag.c0_distance, epsilon = 1e-12);
        }
        // sup|Ric| = 2/r(t)^2 grows as the sphere shrinks; max is at the end.
        assert_abs_diff_eq!(
            trace.max_sup_ric,
            trace.last().diag.sup_ric,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(trace.max_l, 2.0 * trace.max_sup_ric, epsilon = 1e-15);
    }

    #[test]
    fn sphere_scalar_identity_residual_is_tiny() {
        let mut cfg = FlowConfig::new(sphere(2, 1.0), 0.1, 0.01);
        cfg.dt_init = 1e-4;
        cfg.max_dt = 1e-4;
        let trace = run(&cfg).unwrap();
        let rep = evolution_residuals(&trace).unwrap();
        for (t, res) in &rep.scalar_identity {
            // dR/dt = 2|Ric|^2 exactly on the sphere; the snapshot-cadence
            // central difference carries O(cadence^2) truncation.
            assert!(res < &1e-2, "t {t}: residual {res}");
        }
        // R(t) = 2/(1-2t), so the central-difference truncation is exactly
        // (dt^2/6) R''' = 16 dt^2 / (1-2t)^4 to leading order.
        let dtc = trace.states[1].t - trace.states[0].t;
        for (t, res) in &rep.scalar_identity {
            let scale = 16.0 * dtc * dtc / (1.0 - 2.0 * t).powi(4);
            assert!(*res <= 1.5 * scale, "t {t}: residual {res} vs scale {scale}");
            assert!(*res >= 0.5 * scale, "t {t}: residual {res} vs scale {scale}");
        }
    }

    #[test]
    fn flat_trace_residuals_are_zero() {
        let grid = Arc::new(ChartGrid::new(&[6, 6], &[1.0, 1.0]).unwrap());
        let g = MetricField::euclidean(grid);
        let mut cfg = FlowConfig::new(FlowGeometry::Grid(g), 0.03, 0.01);
        cfg.dt_init = 1e-3;
        cfg.max_dt = 1e-3;
        let trace = run(&cfg).unwrap();
        let rep = evolution_residuals(&trace).unwrap();
        for (_, r) in &rep.scalar_identity {
            assert!(*r <= 1e-12);
        }
        assert_eq!(rep.quadratic_constant, 0.0);
        assert_eq!(rep.ricci_growth_constant, 0.0);
    }

    #[test]
    fn nonuniform_cadence_is_rejected() {
        let mut cfg = FlowConfig::new(sphere(2, 1.0), 0.1, 0.02);
        cfg.dt_init = 1e-3;
        cfg.max_dt = 1e-3;
        let mut trace = run(&cfg).unwrap();
        trace.states[1].t += 1e-3;
        assert!(matches!(
            evolution_residuals(&trace),
            Err(FlowError::NonUniformCadence(_))
        ));
        trace.states.truncate(2);
        assert!(matches!(
            evolution_residuals(&trace),
            Err(FlowError::TraceTooShort { .. })
        ));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cfg = FlowConfig::new(sphere(2, 1.0), -1.0, 0.1);
        assert!(matches!(run(&cfg), Err(FlowError::InvalidConfig(_))));
        let mut cfg = FlowConfig::new(sphere(2, 1.0), 0.1, 0.1);
        cfg.blowup_threshold = Some(0.1); // below initial sup|Rm| = 2
        assert!(matches!(run(&cfg), Err(FlowError::InvalidConfig(_))));
    }
}
