//! Conjugate radius via transverse Jacobi systems.
//!
//! Along each sampled geodesic the matrix Jacobi equation `J'' + R(s) J = 0`
//! is integrated in a parallel-transported orthonormal transverse frame,
//! with `R(s)_{ab} = R(E_b, v, v, E_a)`; the first vanishing of `det J`
//! (sign change, then linear interpolation) is a conjugate point. The
//! estimate is the minimum over samples, so more sampling only lowers it.
//!
//! Grid metrics interpolate the Riemann field trilinearly along integrated
//! geodesics; constant-curvature families and sphere-circle products use
//! their frame-constant curvature matrices directly (the oracle path stays
//! a genuine ODE integration, independent of the closed-form zero).

use crate::curvature::{self, interpolate_components};
use crate::error::ProbeError;
use crate::field::NodeField;
use crate::linalg::MAX_DIM;
use crate::metric::MetricField;
use crate::models::ModelMetric;
use crate::util;

use super::geodesic::normalize_velocity;

/// Geometry a Jacobi probe can run on.
pub enum JacobiGeometry<'a> {
    Grid(&'a MetricField),
    Model(&'a ModelMetric),
}

/// One-sided conjugate radius estimate.
#[derive(Debug, Clone, Serialize)]
pub struct ConjugateRadiusEstimate {
    /// First conjugate distance found over all samples, or the cap.
    pub radius: f64,
    /// True when no sample produced a conjugate point before the cap.
    pub no_conjugate_point: bool,
    pub cap: f64,
    pub samples: usize,
}

use serde::Serialize;

/// Conjugate radius by sampled Jacobi integration. `samples >= 2n` is
/// required; the first `2n` directions are the chart frame axes, the rest
/// low-discrepancy. The default integration step is `cap / 4096`
/// (model route) or half the grid spacing (grid route).
pub fn jacobi_conjugate_radius(
    geom: &JacobiGeometry,
    samples: usize,
    cap: f64,
    seed: u64,
) -> Result<ConjugateRadiusEstimate, ProbeError> {
    jacobi_conjugate_radius_with_step(geom, samples, cap, seed, None)
}

/// As [`jacobi_conjugate_radius`] with an explicit integration step
/// (used by convergence-order studies).
pub fn jacobi_conjugate_radius_with_step(
    geom: &JacobiGeometry,
    samples: usize,
    cap: f64,
    seed: u64,
    step: Option<f64>,
) -> Result<ConjugateRadiusEstimate, ProbeError> {
    let n = match geom {
        JacobiGeometry::Grid(g) => g.dim(),
        JacobiGeometry::Model(m) => m.dim(),
    };
    if samples < 2 * n {
        return Err(ProbeError::TooFewSamples {
            need: 2 * n,
            got: samples,
        });
    }
    if !(cap > 0.0) {
        return Err(ProbeError::UnsupportedGeometry("cap must be positive".into()));
    }
    let mut best: Option<f64> = None;
    match geom {
        JacobiGeometry::Model(m) => {
            let ds = step.unwrap_or(cap / 4096.0);
            for dir in model_directions(m, samples, seed)? {
                let r_matrix = model_curvature_matrix(m, &dir)?;
                if let Some(s) = integrate_constant_jacobi(&r_matrix, n - 1, cap, ds) {
                    best = Some(best.map_or(s, |b: f64| b.min(s)));
                }
            }
        }
        JacobiGeometry::Grid(g) => {
            let aux = curvature::metric_aux(g)?;
            let gamma = curvature::christoffel(g, &aux);
            let riem = curvature::riemann_lowered(g, &gamma);
            let ds = step.unwrap_or(0.5 * g.grid().min_spacing());
            let bases = grid_base_points(g, seed);
            let dirs = frame_and_quasi_directions(n, samples, seed);
            for &base in &bases {
                let mut x0 = [0.0; MAX_DIM];
                g.grid().position(base, &mut x0);
                for dir in &dirs {
                    if let Some(s) =
                        integrate_grid_jacobi(g, &gamma, &riem, &x0[..n], dir, cap, ds)?
                    {
                        best = Some(best.map_or(s, |b: f64| b.min(s)));
                    }
                }
            }
        }
    }
    Ok(match best {
        Some(radius) => ConjugateRadiusEstimate {
            radius,
            no_conjugate_point: false,
            cap,
            samples,
        },
        None => ConjugateRadiusEstimate {
            radius: cap,
            no_conjugate_point: true,
            cap,
            samples,
        },
    })
}

fn grid_base_points(g: &MetricField, seed: u64) -> Vec<usize> {
    let grid = g.grid();
    let mut bases = vec![0usize];
    for p in util::quasi_points(util::sub_seed(seed, "jacobi-base"), 2, grid.dim()) {
        let x: Vec<f64> = p
            .iter()
            .zip(grid.periods())
            .map(|(u, l)| u * l)
            .collect();
        let node = grid.nearest_node(&x);
        if !bases.contains(&node) {
            bases.push(node);
        }
    }
    bases
}

pub(crate) fn frame_and_quasi_directions(n: usize, samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut dirs = Vec::with_capacity(samples);
    for a in 0..n {
        for sign in [1.0, -1.0] {
            let mut d = vec![0.0; n];
            d[a] = sign;
            dirs.push(d);
        }
    }
    for p in util::quasi_points(util::sub_seed(seed, "jacobi-dir"), samples - 2 * n, n) {
        let mut d: Vec<f64> = p.iter().map(|u| 2.0 * u - 1.0).collect();
        let norm: f64 = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-9 {
            d[0] = 1.0;
        } else {
            for v in d.iter_mut() {
                *v /= norm;
            }
        }
        dirs.push(d);
    }
    dirs
}

fn model_directions(
    m: &ModelMetric,
    samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, ProbeError> {
    Ok(frame_and_quasi_directions(m.dim(), samples, seed))
}

/// Transverse curvature matrix (constant along the geodesic) for the
/// model families with frame-constant curvature.
fn model_curvature_matrix(m: &ModelMetric, dir: &[f64]) -> Result<Vec<f64>, ProbeError> {
    let n = m.dim();
    let t = n - 1;
    let mut r = vec![0.0; t * t];
    match m {
        ModelMetric::RoundSphere { radius, .. } => {
            let k = 1.0 / (radius * radius);
            for a in 0..t {
                r[a * t + a] = k;
            }
        }
        ModelMetric::FlatTorus { .. } => {}
        ModelMetric::ProductSphereCircle { radius, .. } => {
            // Unit direction (u, w), u in the 2-sphere factor, w along the
            // circle. The transverse frame splits into a sphere vector
            // orthogonal to u (eigenvalue K |u|^2) and the mixed direction
            // (eigenvalue 0).
            let k = 1.0 / (radius * radius);
            let u2 = dir[0] * dir[0] + dir[1] * dir[1];
            let norm2: f64 = dir.iter().map(|v| v * v).sum();
            r[0] = k * u2 / norm2.max(1e-300);
            // r[1 * t + 1] stays 0.
        }
        _ => {
            return Err(ProbeError::UnsupportedGeometry(format!(
                "Jacobi integration not available for {m:?}; use the curvature comparison bound"
            )))
        }
    }
    Ok(r)
}

/// Integrates `J'' = -R J` for a constant matrix `R`, `J(0) = 0`,
/// `J'(0) = I`, reporting the first zero of `det J` if any.
fn integrate_constant_jacobi(r: &[f64], t: usize, cap: f64, ds: f64) -> Option<f64> {
    let mut j = vec![0.0; t * t];
    let mut jp = vec![0.0; t * t];
    for a in 0..t {
        jp[a * t + a] = 1.0;
    }
    let steps = (cap / ds).ceil() as usize;
    let ds = cap / steps as f64;
    let mut watcher = DetWatcher::new();
    for k in 0..steps {
        rk4_linear(r, t, ds, &mut j, &mut jp);
        let s = (k + 1) as f64 * ds;
        if let Some(zero) = watcher.observe(s, det_small(&j, t)) {
            return Some(zero);
        }
    }
    None
}

/// Determinant-zero watcher. Odd-multiplicity conjugate points show up as
/// sign changes (located by linear interpolation); even-multiplicity ones
/// (all transverse fields vanishing together, as on round spheres where
/// det J ~ sin^{n-1}) show up as sharp dips to zero without a sign change,
/// located by the vertex of the parabola through the three samples around
/// the local minimum. Arms itself once the determinant has become positive
/// (det J ~ s^{n-1} > 0 near the base point).
struct DetWatcher {
    armed: bool,
    window: [(f64, f64); 3],
    filled: usize,
}

impl DetWatcher {
    fn new() -> Self {
        DetWatcher {
            armed: false,
            window: [(0.0, 0.0); 3],
            filled: 0,
        }
    }

    fn observe(&mut self, s: f64, det: f64) -> Option<f64> {
        let prev = if self.filled > 0 {
            Some(self.window[(self.filled - 1).min(2)])
        } else {
            None
        };
        if let Some((ps, pd)) = prev {
            if self.armed && pd > 0.0 && det <= 0.0 {
                let frac = pd / (pd - det);
                return Some(ps + frac * (s - ps));
            }
        }
        if self.filled < 3 {
            self.window[self.filled] = (s, det);
            self.filled += 1;
        } else {
            self.window.rotate_left(1);
            self.window[2] = (s, det);
        }
        if det > 0.0 {
            self.armed = true;
        }
        if self.armed && self.filled == 3 {
            let [(s0, d0), (s1, d1), (s2, d2)] = self.window;
            if d0 > d1 && d2 > d1 && d1 >= 0.0 {
                let denom = d0 - 2.0 * d1 + d2;
                if denom > 0.0 {
                    let delta = 0.5 * (s2 - s1) * (d0 - d2) / denom;
                    let vertex_value = d1 - (d0 - d2) * (d0 - d2) / (8.0 * denom);
                    if vertex_value <= 0.05 * d0.max(d2) {
                        let vertex = (s1 + delta).clamp(s0, s2);
                        return Some(vertex);
                    }
                }
            }
        }
        None
    }
}

fn rk4_linear(r: &[f64], t: usize, ds: f64, j: &mut [f64], jp: &mut [f64]) {
    let f = |j: &[f64], jp: &[f64], out_j: &mut [f64], out_jp: &mut [f64]| {
        out_j.copy_from_slice(jp);
        for a in 0..t {
            for b in 0..t {
                let mut s = 0.0;
                for c in 0..t {
                    s += r[a * t + c] * j[c * t + b];
                }
                out_jp[a * t + b] = -s;
            }
        }
    };
    let m = t * t;
    let mut k = vec![0.0; 8 * m];
    let (k1j, rest) = k.split_at_mut(m);
    let (k1p, rest) = rest.split_at_mut(m);
    let (k2j, rest) = rest.split_at_mut(m);
    let (k2p, rest) = rest.split_at_mut(m);
    let (k3j, rest) = rest.split_at_mut(m);
    let (k3p, rest) = rest.split_at_mut(m);
    let (k4j, k4p) = rest.split_at_mut(m);
    let mut tj = vec![0.0; m];
    let mut tp = vec![0.0; m];
    f(j, jp, k1j, k1p);
    for i in 0..m {
        tj[i] = j[i] + 0.5 * ds * k1j[i];
        tp[i] = jp[i] + 0.5 * ds * k1p[i];
    }
    f(&tj, &tp, k2j, k2p);
    for i in 0..m {
        tj[i] = j[i] + 0.5 * ds * k2j[i];
        tp[i] = jp[i] + 0.5 * ds * k2p[i];
    }
    f(&tj, &tp, k3j, k3p);
    for i in 0..m {
        tj[i] = j[i] + ds * k3j[i];
        tp[i] = jp[i] + ds * k3p[i];
    }
    f(&tj, &tp, k4j, k4p);
    for i in 0..m {
        j[i] += ds / 6.0 * (k1j[i] + 2.0 * k2j[i] + 2.0 * k3j[i] + k4j[i]);
        jp[i] += ds / 6.0 * (k1p[i] + 2.0 * k2p[i] + 2.0 * k3p[i] + k4p[i]);
    }
}

fn det_small(m: &[f64], t: usize) -> f64 {
    match t {
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        3 => {
            m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
                + m[2] * (m[3] * m[7] - m[4] * m[6])
        }
        _ => {
            let mut a = m.to_vec();
            let mut det = 1.0;
            for col in 0..t {
                let mut piv = col;
                for r in (col + 1)..t {
                    if a[r * t + col].abs() > a[piv * t + col].abs() {
                        piv = r;
                    }
                }
                if a[piv * t + col] == 0.0 {
                    return 0.0;
                }
                if piv != col {
                    for c in 0..t {
                        a.swap(col * t + c, piv * t + c);
                    }
                    det = -det;
                }
                det *= a[col * t + col];
                for r in (col + 1)..t {
                    let f = a[r * t + col] / a[col * t + col];
                    for c in col..t {
                        a[r * t + c] -= f * a[col * t + c];
                    }
                }
            }
            det
        }
    }
}

/// Full grid-route state integration: geodesic + parallel frame +
/// transverse Jacobi matrix, with curvature interpolated along the path.
fn integrate_grid_jacobi(
    g: &MetricField,
    gamma: &NodeField,
    riem: &NodeField,
    base: &[f64],
    dir: &[f64],
    cap: f64,
    ds: f64,
) -> Result<Option<f64>, ProbeError> {
    let n = g.dim();
    let t = n - 1;

    let mut v = [0.0; MAX_DIM];
    v[..n].copy_from_slice(dir);
    normalize_velocity(g, base, &mut v[..n]);

    // g-orthonormal transverse frame at the base by Gram-Schmidt.
    let mut gm = [0.0; MAX_DIM * MAX_DIM];
    g.interpolate(base, &mut gm);
    let dot = |a: &[f64], b: &[f64], gm: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for jj in 0..n {
                s += gm[i * n + jj] * a[i] * b[jj];
            }
        }
        s
    };
    let mut frame = vec![vec![0.0; n]; t];
    {
        let mut count = 0;
        for axis in 0..n {
            if count == t {
                break;
            }
            let mut e = vec![0.0; n];
            e[axis] = 1.0;
            // remove the velocity component and previous frame vectors
            let c = dot(&e, &v[..n], &gm);
            for i in 0..n {
                e[i] -= c * v[i];
            }
            for prev in frame.iter().take(count) {
                let c = dot(&e, prev, &gm);
                for i in 0..n {
                    e[i] -= c * prev[i];
                }
            }
            let norm = dot(&e, &e, &gm).sqrt();
            if norm > 1e-8 {
                for val in e.iter_mut() {
                    *val /= norm;
                }
                frame[count] = e;
                count += 1;
            }
        }
        if count < t {
            return Err(ProbeError::UnsupportedGeometry(
                "failed to build a transverse frame".into(),
            ));
        }
    }

    // Packed state: x(n), v(n), frame(t*n), J(t*t), Jp(t*t).
    let dim_x = n;
    let dim_state = 2 * n + t * n + 2 * t * t;
    let mut y = vec![0.0; dim_state];
    y[..n].copy_from_slice(base);
    y[n..2 * n].copy_from_slice(&v[..n]);
    for (a, e) in frame.iter().enumerate() {
        y[2 * n + a * n..2 * n + (a + 1) * n].copy_from_slice(e);
    }
    for a in 0..t {
        // J = 0, Jp = I
        y[2 * n + t * n + t * t + a * t + a] = 1.0;
    }

    let nn = n * n;
    let n4 = n * n * n * n;
    let deriv = |y: &[f64], dy: &mut [f64]| {
        let x = &y[..dim_x];
        let v = &y[n..2 * n];
        let mut gam = [0.0; MAX_DIM * MAX_DIM * MAX_DIM];
        interpolate_components(gamma, x, &mut gam[..n * nn]);
        let mut rm = vec![0.0; n4];
        interpolate_components(riem, x, &mut rm);
        // x' = v
        dy[..n].copy_from_slice(v);
        // v' = -Gamma v v
        for k in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                for jj in 0..n {
                    s += gam[k * nn + i * n + jj] * v[i] * v[jj];
                }
            }
            dy[n + k] = -s;
        }
        // frame' = -Gamma v E
        for a in 0..t {
            let e = &y[2 * n + a * n..2 * n + (a + 1) * n];
            for k in 0..n {
                let mut s = 0.0;
                for i in 0..n {
                    for jj in 0..n {
                        s += gam[k * nn + i * n + jj] * v[i] * e[jj];
                    }
                }
                dy[2 * n + a * n + k] = -s;
            }
        }
        // R_{ab} = R_ijkl E_b^i v^j v^k E_a^l
        let mut rmat = [0.0; MAX_DIM * MAX_DIM];
        for a in 0..t {
            let ea = &y[2 * n + a * n..2 * n + (a + 1) * n];
            for b in 0..t {
                let eb = &y[2 * n + b * n..2 * n + (b + 1) * n];
                let mut s = 0.0;
                for i in 0..n {
                    for jj in 0..n {
                        for k in 0..n {
                            for l in 0..n {
                                s += rm[((i * n + jj) * n + k) * n + l]
                                    * eb[i]
                                    * v[jj]
                                    * v[k]
                                    * ea[l];
                            }
                        }
                    }
                }
                rmat[a * t + b] = s;
            }
        }
        // J' = Jp; Jp' = -R J
        let joff = 2 * n + t * n;
        let poff = joff + t * t;
        for i in 0..t * t {
            dy[joff + i] = y[poff + i];
        }
        for a in 0..t {
            for b in 0..t {
                let mut s = 0.0;
                for c in 0..t {
                    s += rmat[a * t + c] * y[joff + c * t + b];
                }
                dy[poff + a * t + b] = -s;
            }
        }
    };

    let steps = (cap / ds).ceil() as usize;
    let ds = cap / steps as f64;
    let mut watcher = DetWatcher::new();
    let mut k1 = vec![0.0; dim_state];
    let mut k2 = vec![0.0; dim_state];
    let mut k3 = vec![0.0; dim_state];
    let mut k4 = vec![0.0; dim_state];
    let mut tmp = vec![0.0; dim_state];
    let joff = 2 * n + t * n;
    for step_idx in 0..steps {
        deriv(&y, &mut k1);
        for i in 0..dim_state {
            tmp[i] = y[i] + 0.5 * ds * k1[i];
        }
        deriv(&tmp, &mut k2);
        for i in 0..dim_state {
            tmp[i] = y[i] + 0.5 * ds * k2[i];
        }
        deriv(&tmp, &mut k3);
        for i in 0..dim_state {
            tmp[i] = y[i] + ds * k3[i];
        }
        deriv(&tmp, &mut k4);
        for i in 0..dim_state {
            y[i] += ds / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|c| !c.is_finite()) {
            return Err(ProbeError::ChartExit {
                arc_length: (step_idx + 1) as f64 * ds,
            });
        }
        {
            // keep the position representative inside the chart
            let grid = g.grid().clone();
            let mut xw = [0.0; MAX_DIM];
            xw[..n].copy_from_slice(&y[..n]);
            grid.wrap_point(&mut xw[..n]);
            y[..n].copy_from_slice(&xw[..n]);
        }
        let s = (step_idx + 1) as f64 * ds;
        let det = det_small(&y[joff..joff + t * t], t);
        if let Some(zero) = watcher.observe(s, det) {
            return Ok(Some(zero));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_conjugate_radius_matches_pi_r() {
        for r in [1.0, 2.0] {
            let m = ModelMetric::RoundSphere { dim: 3, radius: r };
            let est = jacobi_conjugate_radius(&JacobiGeometry::Model(&m), 6, 4.0 * r, 7).unwrap();
            assert!(!est.no_conjugate_point);
            let want = std::f64::consts::PI * r;
            assert!(
                (est.radius - want).abs() < 1e-4,
                "r {r}: got {} want {want}",
                est.radius
            );
        }
    }

    #[test]
    fn flat_torus_has_no_conjugate_points_up_to_cap() {
        let m = ModelMetric::FlatTorus {
            periods: vec![1.0, 1.0, 1.0],
        };
        let cap = 10.0 * m.exact_diameter().unwrap();
        let est = jacobi_conjugate_radius(&JacobiGeometry::Model(&m), 6, cap, 3).unwrap();
        assert!(est.no_conjugate_point);
        assert_eq!(est.radius, cap);
    }

    #[test]
    fn conjugate_radius_scales_like_sqrt_of_metric_scale() {
        let m = ModelMetric::RoundSphere { dim: 2, radius: 1.0 };
        let c = 2.25; // metric scale; distances scale by 1.5
        let scaled = m.scaled(c).unwrap();
        let a = jacobi_conjugate_radius(&JacobiGeometry::Model(&m), 4, 5.0, 1).unwrap();
        let b = jacobi_conjugate_radius(&JacobiGeometry::Model(&scaled), 4, 7.5, 1).unwrap();
        let ratio = b.radius / a.radius;
        assert!((ratio - 1.5).abs() < 1e-3, "ratio {ratio}");
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let m = ModelMetric::RoundSphere { dim: 3, radius: 1.0 };
        assert!(matches!(
            jacobi_conjugate_radius(&JacobiGeometry::Model(&m), 3, 4.0, 0),
            Err(ProbeError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn product_conjugate_radius_is_the_sphere_factor_value() {
        let m = ModelMetric::ProductSphereCircle {
            radius: 1.2,
            circle_length: 5.0,
        };
        let est = jacobi_conjugate_radius(&JacobiGeometry::Model(&m), 8, 8.0, 5).unwrap();
        let want = std::f64::consts::PI * 1.2;
        assert!(
            (est.radius - want).abs() < 1e-3,
            "got {} want {want}",
            est.radius
        );
    }

    #[test]
    fn jacobi_zero_convergence_order_in_the_ode_step() {
        // Coarse steps so truncation dominates: error in the located zero
        // must decrease at order >= 1.8.
        let m = ModelMetric::RoundSphere { dim: 3, radius: 1.0 };
        let want = std::f64::consts::PI;
        let mut errs = Vec::new();
        for div in [40.0, 80.0, 160.0] {
            let est = jacobi_conjugate_radius_with_step(
                &JacobiGeometry::Model(&m),
                6,
                4.0,
                0,
                Some(4.0 / div),
            )
            .unwrap();
            errs.push((est.radius - want).abs());
        }
        let order = crate::util::refinement_order(&errs);
        assert!(order >= 1.8, "order {order}, errors {errs:?}");
    }
}
