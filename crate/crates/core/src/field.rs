//! Node-major tensor field storage.

use crate::grid::ChartGrid;
use std::sync::Arc;

/// A field with `comps` f64 components per grid node, stored node-major
/// (`data[node * comps + c]`). Node-major keeps all components of one node
/// in a single cache line for the pointwise contraction loops.
#[derive(Debug, Clone)]
pub struct NodeField {
    grid: Arc<ChartGrid>,
    comps: usize,
    data: Vec<f64>,
}

impl NodeField {
    pub fn zeros(grid: Arc<ChartGrid>, comps: usize) -> Self {
        let data = vec![0.0; grid.node_count() * comps];
        NodeField { grid, comps, data }
    }

    pub fn grid(&self) -> &Arc<ChartGrid> {
        &self.grid
    }

    pub fn comps(&self) -> usize {
        self.comps
    }

    #[inline(always)]
    pub fn at(&self, node: usize) -> &[f64] {
        &self.data[node * self.comps..(node + 1) * self.comps]
    }

    #[inline(always)]
    pub fn at_mut(&mut self, node: usize) -> &mut [f64] {
        &mut self.data[node * self.comps..(node + 1) * self.comps]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self += s * other`, componentwise over the whole field.
    pub fn axpy(&mut self, s: f64, other: &NodeField) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += s * b;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }
}

/// Scalar field on a chart grid.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<ChartGrid>,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Arc<ChartGrid>) -> Self {
        let data = vec![0.0; grid.node_count()];
        ScalarField { grid, data }
    }

    pub fn from_fn(grid: Arc<ChartGrid>, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let mut out = Self::zeros(grid.clone());
        let mut x = [0.0; crate::linalg::MAX_DIM];
        for node in 0..grid.node_count() {
            grid.position(node, &mut x);
            out.data[node] = f(&x[..grid.dim()]);
        }
        out
    }

    pub fn grid(&self) -> &Arc<ChartGrid> {
        &self.grid
    }

    #[inline(always)]
    pub fn value(&self, node: usize) -> f64 {
        self.data[node]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}
