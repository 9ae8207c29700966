//! Periodic chart grids (torus topology).
//!
//! A chart samples tensor fields at the points `x_a = (j_a + off_a) h_a`,
//! `j_a = 0..count_a`, with period `L_a = count_a * h_a` on every axis.
//! All finite-difference stencils wrap around; neighbor indices are
//! precomputed once per grid so the curvature kernels stay branch-light.

use crate::error::GeometryError;
use crate::linalg::MAX_DIM;

/// A periodic chart grid.
#[derive(Debug, Clone)]
pub struct ChartGrid {
    dim: usize,
    extents: Vec<usize>,
    periods: Vec<f64>,
    spacing: Vec<f64>,
    /// Per-axis node offset as a fraction of the spacing, in `[0, 1)`.
    /// Charts with coordinate degeneracies (polar caps) use `0.5` to keep
    /// nodes off the degenerate locus.
    offsets: Vec<f64>,
    strides: Vec<usize>,
    node_count: usize,
    /// `neighbors[(2*axis + dir) * node_count + node]`, dir 0 = minus, 1 = plus.
    neighbors: Vec<u32>,
}

impl ChartGrid {
    /// Builds a grid with the given node counts and period lengths and zero
    /// node offset.
    pub fn new(extents: &[usize], periods: &[f64]) -> Result<Self, GeometryError> {
        Self::with_offsets(extents, periods, &vec![0.0; extents.len()])
    }

    /// Builds a grid with per-axis fractional node offsets.
    pub fn with_offsets(
        extents: &[usize],
        periods: &[f64],
        offsets: &[f64],
    ) -> Result<Self, GeometryError> {
        let dim = extents.len();
        if dim < 2 || dim > MAX_DIM {
            return Err(GeometryError::InvalidChart(format!(
                "dimension must be in 2..={MAX_DIM}, got {dim}"
            )));
        }
        if periods.len() != dim || offsets.len() != dim {
            return Err(GeometryError::InvalidChart(
                "extents, periods and offsets must have equal length".into(),
            ));
        }
        for (a, &c) in extents.iter().enumerate() {
            if c < 4 {
                return Err(GeometryError::InvalidChart(format!(
                    "axis {a} has {c} nodes, need at least 4"
                )));
            }
            if !(periods[a] > 0.0) {
                return Err(GeometryError::InvalidChart(format!(
                    "axis {a} period must be positive, got {}",
                    periods[a]
                )));
            }
            if !(0.0..1.0).contains(&offsets[a]) {
                return Err(GeometryError::InvalidChart(format!(
                    "axis {a} offset must lie in [0,1), got {}",
                    offsets[a]
                )));
            }
        }
        let node_count: usize = extents.iter().product();
        if node_count > u32::MAX as usize {
            return Err(GeometryError::InvalidChart("grid too large".into()));
        }
        let spacing: Vec<f64> = extents
            .iter()
            .zip(periods)
            .map(|(&c, &l)| l / c as f64)
            .collect();
        // Row-major: the last axis is contiguous.
        let mut strides = vec![0usize; dim];
        let mut s = 1;
        for a in (0..dim).rev() {
            strides[a] = s;
            s *= extents[a];
        }
        let mut grid = ChartGrid {
            dim,
            extents: extents.to_vec(),
            periods: periods.to_vec(),
            spacing,
            offsets: offsets.to_vec(),
            strides,
            node_count,
            neighbors: Vec::new(),
        };
        grid.build_neighbor_table();
        Ok(grid)
    }

    fn build_neighbor_table(&mut self) {
        let n = self.node_count;
        let mut table = vec![0u32; 2 * self.dim * n];
        let mut coords = [0usize; MAX_DIM];
        for node in 0..n {
            self.decode(node, &mut coords);
            for a in 0..self.dim {
                let c = coords[a];
                let minus = if c == 0 { self.extents[a] - 1 } else { c - 1 };
                let plus = if c + 1 == self.extents[a] { 0 } else { c + 1 };
                let base = node - c * self.strides[a];
                table[(2 * a) * n + node] = (base + minus * self.strides[a]) as u32;
                table[(2 * a + 1) * n + node] = (base + plus * self.strides[a]) as u32;
            }
        }
        self.neighbors = table;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn periods(&self) -> &[f64] {
        &self.periods
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Cell volume of the chart measure `prod_a h_a`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Decodes a flat node index into per-axis indices.
    #[inline]
    pub fn decode(&self, node: usize, coords: &mut [usize; MAX_DIM]) {
        let mut rem = node;
        for a in 0..self.dim {
            coords[a] = rem / self.strides[a];
            rem %= self.strides[a];
        }
    }

    /// Flat index of the node with the given per-axis indices.
    #[inline]
    pub fn encode(&self, coords: &[usize]) -> usize {
        let mut node = 0;
        for a in 0..self.dim {
            node += coords[a] * self.strides[a];
        }
        node
    }

    /// Chart coordinates of a node.
    pub fn position(&self, node: usize, x: &mut [f64; MAX_DIM]) {
        let mut coords = [0usize; MAX_DIM];
        self.decode(node, &mut coords);
        for a in 0..self.dim {
            x[a] = (coords[a] as f64 + self.offsets[a]) * self.spacing[a];
        }
    }

    /// Neighbor one step along `axis` in the minus (dir = 0) or plus
    /// (dir = 1) direction, with wraparound.
    #[inline(always)]
    pub fn neighbor(&self, node: usize, axis: usize, dir: usize) -> usize {
        self.neighbors[(2 * axis + dir) * self.node_count + node] as usize
    }

    /// Neighbor `steps` nodes away along `axis` (steps may be negative).
    pub fn offset(&self, node: usize, axis: usize, steps: isize) -> usize {
        let mut coords = [0usize; MAX_DIM];
        self.decode(node, &mut coords);
        let c = coords[a_checked(axis, self.dim)] as isize;
        let e = self.extents[axis] as isize;
        coords[axis] = (((c + steps) % e) + e) as usize % e as usize;
        self.encode(&coords[..self.dim])
    }

    /// Shortest periodic displacement from chart point `from` to `to`,
    /// componentwise in `(-L_a/2, L_a/2]`.
    pub fn wrap_delta(&self, from: &[f64], to: &[f64], delta: &mut [f64]) {
        for a in 0..self.dim {
            let l = self.periods[a];
            let mut d = (to[a] - from[a]) % l;
            if d > 0.5 * l {
                d -= l;
            } else if d <= -0.5 * l {
                d += l;
            }
            delta[a] = d;
        }
    }

    /// Wraps a chart point into the fundamental domain `[0, L_a)`.
    pub fn wrap_point(&self, x: &mut [f64]) {
        for a in 0..self.dim {
            let l = self.periods[a];
            x[a] = x[a].rem_euclid(l);
        }
    }

    /// Node nearest to the chart point `x`.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut coords = [0usize; MAX_DIM];
        for a in 0..self.dim {
            let e = self.extents[a];
            let j = ((x[a] / self.spacing[a] - self.offsets[a]).round() as i64).rem_euclid(e as i64);
            coords[a] = j as usize;
        }
        self.encode(&coords[..self.dim])
    }

    /// True when the two grids are compatible for pointwise field operations.
    pub fn same_layout(&self, other: &ChartGrid) -> bool {
        self.dim == other.dim
            && self.extents == other.extents
            && self.periods == other.periods
            && self.offsets == other.offsets
    }
}

#[inline(always)]
fn a_checked(axis: usize, dim: usize) -> usize {
    debug_assert!(axis < dim);
    axis
}
