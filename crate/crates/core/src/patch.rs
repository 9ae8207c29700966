//! Chart-ball subdomains with Dirichlet boundary.
//!
//! A patch is the set of grid nodes within a chart-coordinate ball of the
//! center node; everything outside is boundary, where fields are pinned to
//! zero. The Dirichlet energy on a patch is assembled as a symmetric
//! positive-semidefinite quadratic form `E(f) = f^T A f ~ integral
//! g^{ij} d_i f d_j f sqrt(g)`, built face-by-face so the implicit heat
//! steps can use conjugate gradients.

use std::sync::Arc;

use crate::curvature::MetricAux;
use crate::error::FlowError;
use crate::grid::ChartGrid;
use crate::linalg::MAX_DIM;
use crate::metric::MetricField;

/// Ball-shaped subdomain of a chart grid.
#[derive(Debug, Clone)]
pub struct PatchDomain {
    grid: Arc<ChartGrid>,
    inside: Vec<bool>,
    interior: Vec<u32>,
    center: usize,
    radius: f64,
}

impl PatchDomain {
    /// Nodes within chart distance `radius` of the center node (periodic
    /// wrap). Fails when the ball does not fit in half the chart period.
    pub fn chart_ball(
        grid: Arc<ChartGrid>,
        center: usize,
        radius: f64,
    ) -> Result<Self, FlowError> {
        let half = 0.5 * grid.periods().iter().cloned().fold(f64::INFINITY, f64::min);
        if !(radius > 0.0) || radius > half {
            return Err(FlowError::ChartTooSmall {
                radius,
                half_period: half,
            });
        }
        let mut cx = [0.0; MAX_DIM];
        grid.position(center, &mut cx);
        let mut inside = vec![false; grid.node_count()];
        let mut interior = Vec::new();
        let mut x = [0.0; MAX_DIM];
        let mut d = [0.0; MAX_DIM];
        for node in 0..grid.node_count() {
            grid.position(node, &mut x);
            grid.wrap_delta(&cx[..grid.dim()], &x[..grid.dim()], &mut d);
            let r2: f64 = d[..grid.dim()].iter().map(|v| v * v).sum();
            if r2.sqrt() <= radius {
                inside[node] = true;
                interior.push(node as u32);
            }
        }
        Ok(PatchDomain {
            grid,
            inside,
            interior,
            center,
            radius,
        })
    }

    pub fn grid(&self) -> &Arc<ChartGrid> {
        &self.grid
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn contains(&self, node: usize) -> bool {
        self.inside[node]
    }

    pub fn interior(&self) -> &[u32] {
        &self.interior
    }

    /// Chart distance from a node to the patch boundary (radius minus the
    /// distance to the center; the chart-ball boundary is a sphere in chart
    /// coordinates).
    pub fn distance_to_boundary(&self, node: usize) -> f64 {
        let mut cx = [0.0; MAX_DIM];
        let mut x = [0.0; MAX_DIM];
        let mut d = [0.0; MAX_DIM];
        self.grid.position(self.center, &mut cx);
        self.grid.position(node, &mut x);
        self.grid
            .wrap_delta(&cx[..self.grid.dim()], &x[..self.grid.dim()], &mut d);
        let r: f64 = d[..self.grid.dim()]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        self.radius - r
    }

    /// Zeroes a field outside the patch.
    pub fn project(&self, f: &mut [f64]) {
        for (node, v) in f.iter_mut().enumerate() {
            if !self.inside[node] {
                *v = 0.0;
            }
        }
    }

    /// `(integral_patch |f|^q dvol)^{1/q}` with the metric volume form.
    pub fn lq_norm(&self, f: &[f64], aux: &MetricAux, q: f64) -> f64 {
        let cell = self.grid.cell_volume();
        let mut s = 0.0;
        for &node in &self.interior {
            let node = node as usize;
            s += f[node].abs().powf(q) * aux.sqrt_det.value(node);
        }
        (s * cell).powf(1.0 / q)
    }

    /// `integral_patch f dvol`.
    pub fn integral(&self, f: &[f64], aux: &MetricAux) -> f64 {
        let cell = self.grid.cell_volume();
        let mut s = 0.0;
        for &node in &self.interior {
            let node = node as usize;
            s += f[node] * aux.sqrt_det.value(node);
        }
        s * cell
    }

    /// Patch volume.
    pub fn volume(&self, aux: &MetricAux) -> f64 {
        let cell = self.grid.cell_volume();
        let mut s = 0.0;
        for &node in &self.interior {
            s += aux.sqrt_det.value(node as usize);
        }
        s * cell
    }
}

/// Symmetric Dirichlet form on a patch.
///
/// Each face `(node, axis)` carries the full gradient vector (exact
/// difference along the face axis, averaged centered differences across)
/// contracted with the face-averaged `sqrt(g) g^{ij}`, weighted `cell/n`;
/// summing the per-face quadratic forms yields a consistent O(h^2)
/// discretization of the Dirichlet energy that is PSD by construction.
pub struct DirichletForm {
    patch: PatchDomain,
    /// Faces whose gradient stencil touches the patch, as (node, axis).
    active_faces: Vec<(u32, u8)>,
    /// Nodes written by the adjoint scatter (active faces' stencils).
    active_nodes: Vec<u32>,
    /// Face-averaged `sqrt(g) g^{ij}` per active face.
    face_w: Vec<f64>,
    /// Lumped mass `sqrt(g) * cell` per node.
    mass: Vec<f64>,
    dim: usize,
}

impl DirichletForm {
    pub fn new(patch: &PatchDomain, _g: &MetricField, aux: &MetricAux) -> Self {
        let grid = patch.grid().clone();
        let n = grid.dim();
        let nn = n * n;
        let count = grid.node_count();
        let cell = grid.cell_volume();
        let mut active_faces = Vec::new();
        let mut face_w = Vec::new();
        let mut touched = vec![false; count];
        for node in 0..count {
            for a in 0..n {
                if !face_touches_patch(patch, n, node, a) {
                    continue;
                }
                active_faces.push((node as u32, a as u8));
                let other = grid.neighbor(node, a, 1);
                let wi = aux.sqrt_det.value(node);
                let wo = aux.sqrt_det.value(other);
                let gi = aux.inverse.at(node);
                let go = aux.inverse.at(other);
                for c in 0..nn {
                    face_w.push(0.5 * (wi * gi[c] + wo * go[c]));
                }
                // nodes the adjoint scatter writes to
                touched[node] = true;
                touched[other] = true;
                for b in 0..n {
                    if b == a {
                        continue;
                    }
                    for d in [0, 1] {
                        touched[grid.neighbor(node, b, d)] = true;
                        touched[grid.neighbor(other, b, d)] = true;
                    }
                }
            }
        }
        let active_nodes = (0..count).filter(|&i| touched[i]).map(|i| i as u32).collect();
        let mass = (0..count)
            .map(|node| aux.sqrt_det.value(node) * cell)
            .collect();
        DirichletForm {
            patch: patch.clone(),
            active_faces,
            active_nodes,
            face_w,
            mass,
            dim: n,
        }
    }

    pub fn patch(&self) -> &PatchDomain {
        &self.patch
    }

    /// Lumped mass per node.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    fn face_gradient(&self, f: &[f64], node: usize, a: usize, grad: &mut [f64]) {
        let grid = self.patch.grid();
        let n = self.dim;
        let h = grid.spacing();
        let up = grid.neighbor(node, a, 1);
        for b in 0..n {
            if b == a {
                grad[b] = (f[up] - f[node]) / h[a];
            } else {
                let c0 = (f[grid.neighbor(node, b, 1)] - f[grid.neighbor(node, b, 0)])
                    / (2.0 * h[b]);
                let c1 = (f[grid.neighbor(up, b, 1)] - f[grid.neighbor(up, b, 0)]) / (2.0 * h[b]);
                grad[b] = 0.5 * (c0 + c1);
            }
        }
    }

    /// Dirichlet energy `E(f)` (assumes `f` vanishes outside the patch).
    pub fn energy(&self, f: &[f64]) -> f64 {
        let grid = self.patch.grid();
        let n = self.dim;
        let nn = n * n;
        let cell = grid.cell_volume() / n as f64;
        let mut e = 0.0;
        let mut grad = [0.0; MAX_DIM];
        for (fi, &(node, a)) in self.active_faces.iter().enumerate() {
            let (node, a) = (node as usize, a as usize);
            self.face_gradient(f, node, a, &mut grad);
            let m = &self.face_w[fi * nn..(fi + 1) * nn];
            let mut q = 0.0;
            for b in 0..n {
                for c in 0..n {
                    q += m[b * n + c] * grad[b] * grad[c];
                }
            }
            e += q * cell;
        }
        e
    }

    /// `out = A f` with `E(f) = f^T A f`, projected onto the patch interior
    /// (input assumed zero outside).
    pub fn apply(&self, f: &[f64], out: &mut [f64]) {
        let grid = self.patch.grid().clone();
        let n = self.dim;
        let nn = n * n;
        let h = grid.spacing().to_vec();
        let cell = grid.cell_volume() / n as f64;
        for &node in &self.active_nodes {
            out[node as usize] = 0.0;
        }
        let mut grad = [0.0; MAX_DIM];
        let mut q = [0.0; MAX_DIM];
        for (fi, &(node, a)) in self.active_faces.iter().enumerate() {
            let (node, a) = (node as usize, a as usize);
            self.face_gradient(f, node, a, &mut grad);
            let m = &self.face_w[fi * nn..(fi + 1) * nn];
            for b in 0..n {
                let mut s = 0.0;
                for c in 0..n {
                    s += m[b * n + c] * grad[c];
                }
                q[b] = s * cell;
            }
            // Adjoint of the face gradient.
            let up = grid.neighbor(node, a, 1);
            for b in 0..n {
                if b == a {
                    let v = q[b] / h[a];
                    out[up] += v;
                    out[node] -= v;
                } else {
                    let v = q[b] * 0.5 / (2.0 * h[b]);
                    out[grid.neighbor(node, b, 1)] += v;
                    out[grid.neighbor(node, b, 0)] -= v;
                    out[grid.neighbor(up, b, 1)] += v;
                    out[grid.neighbor(up, b, 0)] -= v;
                }
            }
        }
        self.patch.project(out);
    }

    /// Solves `(mass + dt A) x = mass .* rhs` by conjugate gradients with
    /// mass (Jacobi) preconditioning. Returns the iteration count.
    pub fn solve_implicit(&self, dt: f64, rhs: &[f64], x: &mut [f64], tol: f64) -> usize {
        let count = rhs.len();
        let mut b = vec![0.0; count];
        for i in 0..count {
            b[i] = self.mass[i] * rhs[i];
        }
        self.patch.project(&mut b);
        x.copy_from_slice(rhs);
        self.patch.project(x);
        let mut ax = vec![0.0; count];
        let mut scratch = vec![0.0; count];
        let apply_full = |v: &[f64], out: &mut Vec<f64>, tmp: &mut Vec<f64>| {
            self.apply(v, tmp);
            for i in 0..count {
                out[i] = self.mass[i] * v[i] + dt * tmp[i];
            }
            self.patch.project(out);
        };
        apply_full(x, &mut ax, &mut scratch);
        let mut r: Vec<f64> = (0..count).map(|i| b[i] - ax[i]).collect();
        self.patch.project(&mut r);
        let mut z: Vec<f64> = (0..count).map(|i| r[i] / self.mass[i]).collect();
        self.patch.project(&mut z);
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        let mut iters = 0;
        for _ in 0..4000 {
            let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rn <= tol * b_norm {
                break;
            }
            apply_full(&p, &mut ax, &mut scratch);
            let pap: f64 = p.iter().zip(&ax).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            for i in 0..count {
                x[i] += alpha * p[i];
                r[i] -= alpha * ax[i];
            }
            for i in 0..count {
                z[i] = r[i] / self.mass[i];
            }
            self.patch.project(&mut z);
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..count {
                p[i] = z[i] + beta * p[i];
            }
            iters += 1;
        }
        self.patch.project(x);
        iters
    }
}


fn face_touches_patch(patch: &PatchDomain, dim: usize, node: usize, a: usize) -> bool {
    // A face matters when any node in its gradient stencil is interior:
    // the two endpoints or their cross-axis neighbors.
    let grid = patch.grid();
    let up = grid.neighbor(node, a, 1);
    if patch.contains(node) || patch.contains(up) {
        return true;
    }
    for b in 0..dim {
        if b == a {
            continue;
        }
        if patch.contains(grid.neighbor(node, b, 1))
            || patch.contains(grid.neighbor(node, b, 0))
            || patch.contains(grid.neighbor(up, b, 1))
            || patch.contains(grid.neighbor(up, b, 0))
        {
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::metric_aux;
    use approx::assert_abs_diff_eq;

    fn flat_patch(nodes: usize, len: f64, radius: f64) -> (MetricField, PatchDomain) {
        let grid = Arc::new(ChartGrid::new(&[nodes, nodes, nodes], &[len, len, len]).unwrap());
        let g = MetricField::euclidean(grid.clone());
        let center = grid.encode(&[nodes / 2, nodes / 2, nodes / 2]);
        let patch = PatchDomain::chart_ball(grid, center, radius).unwrap();
        (g, patch)
    }

    #[test]
    fn ball_that_does_not_fit_is_rejected() {
        let grid = Arc::new(ChartGrid::new(&[8, 8, 8], &[2.0, 2.0, 2.0]).unwrap());
        assert!(matches!(
            PatchDomain::chart_ball(grid, 0, 1.5),
            Err(FlowError::ChartTooSmall { .. })
        ));
    }

    #[test]
    fn patch_volume_approximates_ball_volume() {
        let (g, patch) = flat_patch(24, 2.5, 1.0);
        let aux = metric_aux(&g).unwrap();
        let vol = patch.volume(&aux);
        let want = 4.0 / 3.0 * std::f64::consts::PI;
        assert!((vol - want).abs() < 0.05 * want, "vol {vol} want {want}");
    }

    #[test]
    fn energy_matches_apply_quadratic_form() {
        let grid = Arc::new(ChartGrid::new(&[12, 12, 12], &[2.0, 2.0, 2.0]).unwrap());
        let g = MetricField::from_fn(grid.clone(), |x, m| {
            let b = 0.1 * (std::f64::consts::PI * x[0]).sin();
            for c in m.iter_mut() {
                *c = 0.0;
            }
            m[0] = 1.0 + 0.2 * (std::f64::consts::PI * x[1]).cos();
            m[4] = 1.0;
            m[8] = 1.2;
            m[1] = b;
            m[3] = b;
        })
        .unwrap();
        let aux = metric_aux(&g).unwrap();
        let center = grid.encode(&[6, 6, 6]);
        let patch = PatchDomain::chart_ball(grid.clone(), center, 0.8).unwrap();
        let form = DirichletForm::new(&patch, &g, &aux);
        let mut f = vec![0.0; grid.node_count()];
        let mut x = [0.0; MAX_DIM];
        let mut cx = [0.0; MAX_DIM];
        grid.position(center, &mut cx);
        let mut d = [0.0; MAX_DIM];
        for node in 0..grid.node_count() {
            grid.position(node, &mut x);
            grid.wrap_delta(&cx[..3], &x[..3], &mut d);
            let r2: f64 = d[..3].iter().map(|v| v * v).sum();
            f[node] = (-4.0 * r2).exp();
        }
        patch.project(&mut f);
        let e = form.energy(&f);
        let mut af = vec![0.0; grid.node_count()];
        form.apply(&f, &mut af);
        let faf: f64 = f.iter().zip(&af).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(e, faf, epsilon = 1e-10 * e.abs());
        assert!(e > 0.0);
    }

    #[test]
    fn energy_of_gaussian_on_flat_patch_converges_to_integral() {
        // f = exp(-|x|^2 / (2 s^2)) truncated at the ball; the Dirichlet
        // energy of the untruncated Gaussian is (3/2) * pi^{3/2} * s.
        let s = 0.45;
        let want = 1.5 * std::f64::consts::PI.powf(1.5) * s;
        let mut errs = Vec::new();
        for nodes in [24usize, 48] {
            let (g, patch) = flat_patch(nodes, 4.0, 1.7);
            let aux = metric_aux(&g).unwrap();
            let form = DirichletForm::new(&patch, &g, &aux);
            let grid = patch.grid().clone();
            let mut f = vec![0.0; grid.node_count()];
            let mut x = [0.0; MAX_DIM];
            let mut cx = [0.0; MAX_DIM];
            grid.position(patch.center(), &mut cx);
            let mut d = [0.0; MAX_DIM];
            for node in 0..grid.node_count() {
                grid.position(node, &mut x);
                grid.wrap_delta(&cx[..3], &x[..3], &mut d);
                let r2: f64 = d[..3].iter().map(|v| v * v).sum();
                f[node] = (-r2 / (2.0 * s * s)).exp();
            }
            patch.project(&mut f);
            errs.push((form.energy(&f) - want).abs() / want);
        }
        assert!(errs[1] < 0.03, "relative errors {errs:?}");
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.5, "order {order}, errors {errs:?}");
    }

    #[test]
    fn implicit_solve_recovers_identity_at_zero_dt() {
        let (g, patch) = flat_patch(16, 2.0, 0.8);
        let aux = metric_aux(&g).unwrap();
        let form = DirichletForm::new(&patch, &g, &aux);
        let grid = patch.grid().clone();
        let mut rhs = vec![0.0; grid.node_count()];
        for &node in patch.interior() {
            rhs[node as usize] = 1.0 + (node as f64 * 0.37).sin();
        }
        let mut x = vec![0.0; grid.node_count()];
        form.solve_implicit(0.0, &rhs, &mut x, 1e-12);
        for &node in patch.interior() {
            assert_abs_diff_eq!(x[node as usize], rhs[node as usize], epsilon = 1e-9);
        }
    }
}
