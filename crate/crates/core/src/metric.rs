//! Riemannian metrics sampled on periodic chart grids.

use std::sync::Arc;

use crate::error::GeometryError;
use crate::field::NodeField;
use crate::grid::ChartGrid;
use crate::linalg::{self, MAX_DIM};

/// Positive-definiteness floor for the smallest metric eigenvalue per node.
/// A violation is an error, never a clamp: a clamped metric would silently
/// invalidate every downstream estimate.
pub const EIGENVALUE_FLOOR: f64 = 1e-10;

/// A metric field: one symmetric positive-definite `n x n` matrix per node,
/// stored as a full row-major matrix with `g_ij == g_ji` exactly.
#[derive(Debug, Clone)]
pub struct MetricField {
    field: NodeField,
    dim: usize,
}

impl MetricField {
    /// Samples `f(x) -> g(x)` (row-major `n x n`, caller fills the full
    /// matrix) on the grid and validates the result.
    pub fn from_fn(
        grid: Arc<ChartGrid>,
        mut f: impl FnMut(&[f64], &mut [f64]),
    ) -> Result<Self, GeometryError> {
        let dim = grid.dim();
        let mut field = NodeField::zeros(grid.clone(), dim * dim);
        let mut x = [0.0; MAX_DIM];
        for node in 0..grid.node_count() {
            grid.position(node, &mut x);
            f(&x[..dim], field.at_mut(node));
        }
        let m = MetricField { field, dim };
        m.validate()?;
        Ok(m)
    }

    /// Flat (identity) metric.
    pub fn euclidean(grid: Arc<ChartGrid>) -> Self {
        let dim = grid.dim();
        let mut field = NodeField::zeros(grid, dim * dim);
        for node in 0..field.grid().node_count() {
            let g = field.at_mut(node);
            for i in 0..dim {
                g[i * dim + i] = 1.0;
            }
        }
        MetricField { field, dim }
    }

    /// Wraps an existing component field. The caller guarantees symmetry;
    /// positivity is checked.
    pub fn from_field(field: NodeField) -> Result<Self, GeometryError> {
        let dim = field.grid().dim();
        debug_assert_eq!(field.comps(), dim * dim);
        let m = MetricField { field, dim };
        m.validate()?;
        Ok(m)
    }

    pub fn grid(&self) -> &Arc<ChartGrid> {
        self.field.grid()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline(always)]
    pub fn at(&self, node: usize) -> &[f64] {
        self.field.at(node)
    }

    pub fn at_mut(&mut self, node: usize) -> &mut [f64] {
        self.field.at_mut(node)
    }

    pub fn field(&self) -> &NodeField {
        &self.field
    }

    pub fn field_mut(&mut self) -> &mut NodeField {
        &mut self.field
    }

    /// Checks exact symmetry and the positive-definiteness floor at every
    /// node. Returns the offending node on failure. NaNs fail the
    /// eigenvalue comparison and are reported as degeneracy.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.dim;
        for node in 0..self.grid().node_count() {
            let g = self.at(node);
            for i in 0..n {
                for j in (i + 1)..n {
                    if g[i * n + j].to_bits() != g[j * n + i].to_bits() {
                        return Err(GeometryError::AsymmetricMetric { node });
                    }
                }
            }
            let eig = linalg::min_eigenvalue(g, n);
            if !(eig >= EIGENVALUE_FLOOR) {
                return Err(GeometryError::DegenerateMetric {
                    node,
                    eigenvalue: eig,
                    threshold: EIGENVALUE_FLOOR,
                });
            }
        }
        Ok(())
    }

    /// First node violating positivity, if any (cheap scan used by the flow
    /// stepper; avoids building the full error).
    pub fn first_degenerate_node(&self) -> Option<usize> {
        let n = self.dim;
        (0..self.grid().node_count()).find(|&node| {
            let eig = linalg::min_eigenvalue(self.at(node), n);
            !(eig >= EIGENVALUE_FLOOR)
        })
    }

    /// Scales the metric by a constant factor (`g -> c g`).
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for v in out.field.data_mut() {
            *v *= c;
        }
        out
    }

    /// C0 distance to a reference metric measured in the reference metric:
    /// the sup over nodes of the largest absolute eigenvalue of
    /// `g0^{-1} (g - g0)`.
    pub fn c0_distance(&self, reference: &MetricField) -> Result<f64, GeometryError> {
        if !self.grid().same_layout(reference.grid()) {
            return Err(GeometryError::ChartMismatch(
                "metrics sampled on different charts".into(),
            ));
        }
        let n = self.dim;
        let mut diff = [0.0; MAX_DIM * MAX_DIM];
        let mut worst = 0.0f64;
        for node in 0..self.grid().node_count() {
            let g1 = self.at(node);
            let g0 = reference.at(node);
            for k in 0..n * n {
                diff[k] = g1[k] - g0[k];
            }
            let norm = linalg::operator_norm(&diff[..n * n], g0, n).ok_or(
                GeometryError::DegenerateMetric {
                    node,
                    eigenvalue: f64::NAN,
                    threshold: EIGENVALUE_FLOOR,
                },
            )?;
            worst = worst.max(norm);
        }
        Ok(worst)
    }

    /// Trilinear interpolation of the metric at an arbitrary chart point.
    pub fn interpolate(&self, x: &[f64], out: &mut [f64]) {
        interpolate_components(&self.field, x, out);
    }
}

/// Multilinear (per-axis linear) interpolation of a node field at a chart
/// point, with periodic wraparound.
pub fn interpolate_components(field: &NodeField, x: &[f64], out: &mut [f64]) {
    let grid = field.grid().clone();
    let dim = grid.dim();
    let comps = field.comps();
    for v in out[..comps].iter_mut() {
        *v = 0.0;
    }
    // Base node and fractional offsets, honoring the per-axis node offset.
    let mut base = [0usize; MAX_DIM];
    let mut frac = [0.0f64; MAX_DIM];
    let mut x0 = [0.0; MAX_DIM];
    // Position of node [0,...,0].
    grid.position(0, &mut x0);
    for a in 0..dim {
        let h = grid.spacing()[a];
        let t = (x[a] - x0[a]) / h;
        let f = t.floor();
        base[a] = (f as i64).rem_euclid(grid.extents()[a] as i64) as usize;
        frac[a] = t - f;
    }
    // Accumulate over the 2^dim corners.
    let corners = 1usize << dim;
    let mut coords = [0usize; MAX_DIM];
    for corner in 0..corners {
        let mut w = 1.0;
        for a in 0..dim {
            let up = (corner >> a) & 1;
            coords[a] = if up == 1 {
                (base[a] + 1) % grid.extents()[a]
            } else {
                base[a]
            };
            w *= if up == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        if w == 0.0 {
            continue;
        }
        let node = grid.encode(&coords[..dim]);
        let vals = field.at(node);
        for c in 0..comps {
            out[c] += w * vals[c];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid2(n: usize) -> Arc<ChartGrid> {
        Arc::new(ChartGrid::new(&[n, n], &[1.0, 1.0]).unwrap())
    }

    #[test]
    fn euclidean_validates() {
        let g = MetricField::euclidean(grid2(8));
        assert!(g.validate().is_ok());
    }

    #[test]
    fn degenerate_metric_is_an_error_naming_the_node() {
        let grid = grid2(8);
        let res = MetricField::from_fn(grid, |x, g| {
            let v = if x[0] == 0.0 && x[1] == 0.0 { 0.0 } else { 1.0 };
            g[0] = v;
            g[1] = 0.0;
            g[2] = 0.0;
            g[3] = 1.0;
        });
        match res {
            Err(GeometryError::DegenerateMetric { node, .. }) => assert_eq!(node, 0),
            other => panic!("expected degeneracy error, got {other:?}"),
        }
    }

    #[test]
    fn c0_distance_identities() {
        let grid = grid2(8);
        let g0 = MetricField::from_fn(grid, |x, g| {
            g[0] = 1.3 + 0.1 * (2.0 * std::f64::consts::PI * x[0]).sin();
            g[1] = 0.2;
            g[2] = 0.2;
            g[3] = 0.9;
        })
        .unwrap();
        assert_abs_diff_eq!(g0.c0_distance(&g0).unwrap(), 0.0, epsilon = 1e-15);
        let eps = 0.25;
        let g1 = g0.scaled(1.0 + eps);
        assert_abs_diff_eq!(g1.c0_distance(&g0).unwrap(), eps, epsilon = 1e-12);
    }

    #[test]
    fn interpolation_reproduces_nodes_and_linear_fields() {
        let grid = grid2(10);
        let g = MetricField::from_fn(grid.clone(), |x, m| {
            m[0] = 2.0 + (2.0 * std::f64::consts::PI * x[1]).cos() * 0.3;
            m[1] = 0.1;
            m[2] = 0.1;
            m[3] = 1.0;
        })
        .unwrap();
        let mut out = [0.0; 4];
        let mut x = [0.0; MAX_DIM];
        grid.position(37, &mut x);
        g.interpolate(&x[..2], &mut out);
        let want = g.at(37);
        for c in 0..4 {
            assert_abs_diff_eq!(out[c], want[c], epsilon = 1e-14);
        }
    }
}
