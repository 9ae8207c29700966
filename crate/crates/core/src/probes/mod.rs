//! Geometric probes: the quantities the hypotheses and conclusions are
//! stated in. Geodesics and Jacobi fields integrate interpolated
//! connection/curvature data; distances come from a king-move grid graph
//! with geodesic relaxation of extremal paths; Sobolev constants from
//! projected gradient ascent on the Dirichlet quotient; coverings from
//! greedy separated nets.

mod distance;
mod geodesic;
mod jacobi;
mod net;
mod sobolev;

pub use distance::{
    diameter, distance_between, excess, lift_discrepancy, relax_polyline, DiameterEstimate,
    DistanceField, ExcessEstimate,
};
pub use geodesic::{geodesic, GeodesicPath};
pub use jacobi::{jacobi_conjugate_radius, ConjugateRadiusEstimate, JacobiGeometry};
pub use net::{epsilon_net, EpsilonNet};
pub use sobolev::{sobolev_constant_on_patch, sobolev_constant_with_starts};

use serde::Serialize;

use crate::curvature;
use crate::error::ProbeError;
use crate::metric::MetricField;

/// Full geometric report for one metric.
#[derive(Debug, Clone, Serialize)]
pub struct GeometryReport {
    pub diameter: f64,
    /// Graph upper bound certifying the diameter estimate.
    pub diameter_graph_bound: f64,
    pub volume: f64,
    pub excess: f64,
    /// One-sided conjugate radius estimate (more sampling only lowers it).
    pub conjugate_radius: f64,
    /// True when no conjugate point was found up to the cap length; the
    /// reported radius is then the cap.
    pub no_conjugate_point: bool,
    /// Sobolev constant of the largest chart ball around the diameter
    /// midpoint; absent in dimension 2 where the sharp exponent degenerates.
    pub sobolev_constant: Option<f64>,
}

impl GeometryReport {
    pub fn validate(&self) -> Result<(), ProbeError> {
        if !(self.volume > 0.0) {
            return Err(ProbeError::UnsupportedGeometry(format!(
                "nonpositive volume {}",
                self.volume
            )));
        }
        if !(self.conjugate_radius > 0.0) {
            return Err(ProbeError::UnsupportedGeometry(format!(
                "nonpositive conjugate radius estimate {}",
                self.conjugate_radius
            )));
        }
        if self.excess > 2.0 * self.diameter + 1e-9 {
            return Err(ProbeError::UnsupportedGeometry(format!(
                "excess {} exceeds twice the diameter {}",
                self.excess, self.diameter
            )));
        }
        Ok(())
    }
}

/// Chart volume of a grid metric (midpoint quadrature of `sqrt(det g)`;
/// exact for constant metrics).
pub fn volume(g: &MetricField) -> Result<f64, ProbeError> {
    let aux = curvature::metric_aux(g)?;
    Ok(curvature::volume(&aux))
}

/// Assembles a full report for a grid metric.
pub fn report(
    g: &MetricField,
    sample_size: usize,
    conj_samples: usize,
    conj_cap: f64,
    seed: u64,
) -> Result<GeometryReport, ProbeError> {
    let aux = curvature::metric_aux(g)?;
    let diam = diameter(g, sample_size, seed)?;
    let ex = excess(g, sample_size.min(4).max(2), seed)?;
    let conj = jacobi_conjugate_radius(&JacobiGeometry::Grid(g), conj_samples, conj_cap, seed)?;
    let sobolev = if g.dim() >= 3 {
        let radius = 0.45 * g.grid().periods().iter().cloned().fold(f64::INFINITY, f64::min);
        let patch = crate::patch::PatchDomain::chart_ball(
            g.grid().clone(),
            diam.far_node,
            radius,
        )
        .map_err(|e| ProbeError::UnsupportedGeometry(e.to_string()))?;
        Some(sobolev_constant_on_patch(g, &aux, &patch, seed)?)
    } else {
        None
    };
    let report = GeometryReport {
        diameter: diam.relaxed,
        diameter_graph_bound: diam.graph_bound,
        volume: curvature::volume(&aux),
        excess: ex.value,
        conjugate_radius: conj.radius,
        no_conjugate_point: conj.no_conjugate_point,
        sobolev_constant: sobolev,
    };
    report.validate()?;
    Ok(report)
}
