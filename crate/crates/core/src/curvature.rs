//! Chart tensor calculus by centered second-order finite differences.
//!
//! Conventions (fixed once, used everywhere):
//!
//! * Christoffel: `G^k_ij = 1/2 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij)`.
//! * Curvature operator: `F^l_ijk = d_i G^l_jk - d_j G^l_ik
//!   + G^l_im G^m_jk - G^l_jm G^m_ik`, lowered as `R_ijkl = g_lm F^m_ijk`.
//!   With this ordering `R_ijkl = -R_jikl = -R_ijlk = R_klij`, the sectional
//!   curvature of a coordinate plane is `K(a,b) = R_abba / (g_aa g_bb -
//!   g_ab^2)`, and a round sphere comes out positive.
//! * Ricci: `Ric_ij = g^{kl} R_kijl`, which collapses exactly (even in
//!   floating point) to the direct contraction
//!   `d_k G^k_ij - d_i G^k_kj + G^k_km G^m_ij - G^k_im G^m_kj`;
//!   the result is symmetrized, scalar curvature is `R = g^{ij} Ric_ij`.
//! * Pointwise norms: `|Rm|` is the full contraction
//!   `sqrt(R_ijkl R^ijkl)`; `|Ric|` is the operator norm (largest absolute
//!   eigenvalue of `Ric` relative to `g`), so a bound `|Ric| <= c` means
//!   `-c g <= Ric <= c g`. The Frobenius contraction `R_ij R^ij` is exposed
//!   separately for the scalar-curvature evolution identity.
//!
//! All operations are pure node-parallel maps followed by sequential
//! reductions, so results are bitwise reproducible for any worker count.

use rayon::prelude::*;
use std::sync::Arc;

use crate::error::GeometryError;
use crate::field::{NodeField, ScalarField};
use crate::grid::ChartGrid;
use crate::linalg::{self, MAX_DIM};
use crate::metric::{MetricField, EIGENVALUE_FLOOR};

const M2: usize = MAX_DIM * MAX_DIM;
const M3: usize = MAX_DIM * M2;
const M4: usize = MAX_DIM * M3;

/// Pointwise inverse metric and volume density, computed once per metric.
pub struct MetricAux {
    /// `g^{ij}` per node (`n x n`, symmetric).
    pub inverse: NodeField,
    /// `sqrt(det g)` per node.
    pub sqrt_det: ScalarField,
}

/// Computes the inverse metric and volume density, failing on the first
/// node where the metric is degenerate.
pub fn metric_aux(g: &MetricField) -> Result<MetricAux, GeometryError> {
    let grid = g.grid().clone();
    let n = g.dim();
    let mut inverse = NodeField::zeros(grid.clone(), n * n);
    let mut sqrt_det = ScalarField::zeros(grid.clone());
    let bad: Vec<usize> = inverse
        .data_mut()
        .par_chunks_mut(n * n)
        .zip(sqrt_det.data_mut().par_iter_mut())
        .enumerate()
        .filter_map(|(node, (inv, w))| {
            match linalg::spd_inverse(g.at(node), n, inv) {
                Some(det) if det > 0.0 => {
                    *w = det.sqrt();
                    None
                }
                _ => Some(node),
            }
        })
        .collect();
    if let Some(&node) = bad.iter().min() {
        return Err(GeometryError::DegenerateMetric {
            node,
            eigenvalue: linalg::min_eigenvalue(g.at(node), n),
            threshold: EIGENVALUE_FLOOR,
        });
    }
    Ok(MetricAux { inverse, sqrt_det })
}

#[inline(always)]
fn centered_into(
    grid: &ChartGrid,
    field: &NodeField,
    node: usize,
    comps: usize,
    out: &mut [f64],
) {
    // out[a * comps + c] = centered difference of component c along axis a.
    for a in 0..grid.dim() {
        let p = field.at(grid.neighbor(node, a, 1));
        let m = field.at(grid.neighbor(node, a, 0));
        let s = 0.5 / grid.spacing()[a];
        let row = &mut out[a * comps..(a + 1) * comps];
        for c in 0..comps {
            row[c] = (p[c] - m[c]) * s;
        }
    }
}

/// Christoffel coefficients `G^k_ij`, stored `[k*n*n + i*n + j]`,
/// exactly symmetric in `(i, j)`.
pub fn christoffel(g: &MetricField, aux: &MetricAux) -> NodeField {
    let grid = g.grid().clone();
    let n = g.dim();
    let nn = n * n;
    let mut out = NodeField::zeros(grid.clone(), n * nn);
    out.data_mut()
        .par_chunks_mut(n * nn)
        .enumerate()
        .for_each(|(node, gam)| {
            let gi = aux.inverse.at(node);
            let mut dg = [0.0; MAX_DIM * M2];
            centered_into(&grid, g.field(), node, nn, &mut dg);
            for k in 0..n {
                for i in 0..n {
                    for j in i..n {
                        let mut s = 0.0;
                        for l in 0..n {
                            s += gi[k * n + l]
                                * (dg[i * nn + j * n + l] + dg[j * nn + i * n + l]
                                    - dg[l * nn + i * n + j]);
                        }
                        let v = 0.5 * s;
                        gam[k * nn + i * n + j] = v;
                        gam[k * nn + j * n + i] = v;
                    }
                }
            }
        });
    out
}

#[inline(always)]
fn curvature_operator_at(
    grid: &ChartGrid,
    gamma: &NodeField,
    node: usize,
    n: usize,
    f_out: &mut [f64],
) {
    // F^l_ijk in f_out[((l*n + i)*n + j)*n + k].
    let nn = n * n;
    let nnn = n * nn;
    let mut dgam = [0.0; MAX_DIM * M3];
    centered_into(grid, gamma, node, nnn, &mut dgam);
    let gam = gamma.at(node);
    for l in 0..n {
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut v = dgam[i * nnn + l * nn + j * n + k]
                        - dgam[j * nnn + l * nn + i * n + k];
                    for m in 0..n {
                        v += gam[l * nn + i * n + m] * gam[m * nn + j * n + k]
                            - gam[l * nn + j * n + m] * gam[m * nn + i * n + k];
                    }
                    f_out[((l * n + i) * n + j) * n + k] = v;
                }
            }
        }
    }
}

/// Lowered Riemann tensor `R_ijkl`, stored `[((i*n + j)*n + k)*n + l]`.
pub fn riemann_lowered(g: &MetricField, gamma: &NodeField) -> NodeField {
    let grid = g.grid().clone();
    let n = g.dim();
    let mut out = NodeField::zeros(grid.clone(), n * n * n * n);
    out.data_mut()
        .par_chunks_mut(n * n * n * n)
        .enumerate()
        .for_each(|(node, r)| {
            let mut f = [0.0; M4];
            curvature_operator_at(&grid, gamma, node, n, &mut f);
            let gm = g.at(node);
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        for l in 0..n {
                            let mut v = 0.0;
                            for m in 0..n {
                                v += gm[l * n + m] * f[((m * n + i) * n + j) * n + k];
                            }
                            r[((i * n + j) * n + k) * n + l] = v;
                        }
                    }
                }
            }
        });
    out
}

/// Ricci tensor `Ric_ij` (symmetric `n x n` per node).
pub fn ricci_tensor(g: &MetricField, gamma: &NodeField) -> NodeField {
    let grid = g.grid().clone();
    let n = g.dim();
    let nn = n * n;
    let nnn = n * nn;
    let mut out = NodeField::zeros(grid.clone(), nn);
    out.data_mut()
        .par_chunks_mut(nn)
        .enumerate()
        .for_each(|(node, ric)| {
            let mut dgam = [0.0; MAX_DIM * M3];
            centered_into(&grid, gamma, node, nnn, &mut dgam);
            let gam = gamma.at(node);
            let mut raw = [0.0; M2];
            for i in 0..n {
                for j in 0..n {
                    let mut v = 0.0;
                    for k in 0..n {
                        v += dgam[k * nnn + k * nn + i * n + j];
                        v -= dgam[i * nnn + k * nn + k * n + j];
                        for m in 0..n {
                            v += gam[k * nn + k * n + m] * gam[m * nn + i * n + j]
                                - gam[k * nn + i * n + m] * gam[m * nn + k * n + j];
                        }
                    }
                    raw[i * n + j] = v;
                }
            }
            for i in 0..n {
                for j in 0..n {
                    ric[i * n + j] = 0.5 * (raw[i * n + j] + raw[j * n + i]);
                }
            }
        });
    out
}

/// Scalar curvature `R = g^{ij} Ric_ij`.
pub fn scalar_curvature(aux: &MetricAux, ricci: &NodeField) -> ScalarField {
    let grid = ricci.grid().clone();
    let n = grid.dim();
    let mut out = ScalarField::zeros(grid);
    out.data_mut()
        .par_iter_mut()
        .enumerate()
        .for_each(|(node, v)| {
            let gi = aux.inverse.at(node);
            let rc = ricci.at(node);
            let mut s = 0.0;
            for i in 0..n * n {
                s += gi[i] * rc[i];
            }
            *v = s;
        });
    out
}

#[inline(always)]
fn rm_norm_sq_at(r: &[f64], gi: &[f64], n: usize) -> f64 {
    // Raise the four indices one at a time, then contract.
    let mut a = [0.0; M4];
    let mut b = [0.0; M4];
    let n4 = n * n * n * n;
    a[..n4].copy_from_slice(&r[..n4]);
    // Index order in storage: (i, j, k, l). Raise leading index each pass by
    // cycling the storage so the index being raised is always the first.
    for _pass in 0..4 {
        let n3 = n * n * n;
        for rest in 0..n3 {
            for i in 0..n {
                let mut s = 0.0;
                for m in 0..n {
                    s += gi[i * n + m] * a[m * n3 + rest];
                }
                // Cycle: new storage order (j,k,l,i).
                b[rest * n + i] = s;
            }
        }
        a[..n4].copy_from_slice(&b[..n4]);
    }
    // After four passes the index order has cycled back to (i,j,k,l).
    let mut s = 0.0;
    for c in 0..n4 {
        s += a[c] * r[c];
    }
    s
}

/// Pointwise `|Rm| = sqrt(R_ijkl R^ijkl)` as a scalar field. Requires only
/// the Christoffel field; the Riemann tensor is formed in per-node scratch
/// and discarded.
pub fn rm_norm_field(g: &MetricField, aux: &MetricAux, gamma: &NodeField) -> ScalarField {
    let grid = g.grid().clone();
    let n = g.dim();
    let mut out = ScalarField::zeros(grid.clone());
    out.data_mut()
        .par_iter_mut()
        .enumerate()
        .for_each(|(node, v)| {
            let mut f = [0.0; M4];
            curvature_operator_at(&grid, gamma, node, n, &mut f);
            let gm = g.at(node);
            let gi = aux.inverse.at(node);
            let mut r = [0.0; M4];
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        for l in 0..n {
                            let mut s = 0.0;
                            for m in 0..n {
                                s += gm[l * n + m] * f[((m * n + i) * n + j) * n + k];
                            }
                            r[((i * n + j) * n + k) * n + l] = s;
                        }
                    }
                }
            }
            *v = rm_norm_sq_at(&r[..n * n * n * n], gi, n).max(0.0).sqrt();
        });
    out
}

/// Pointwise operator norm of the Ricci tensor (largest absolute eigenvalue
/// relative to `g`).
pub fn ric_op_norm_field(g: &MetricField, ricci: &NodeField) -> ScalarField {
    let n = g.dim();
    let mut out = ScalarField::zeros(g.grid().clone());
    out.data_mut()
        .par_iter_mut()
        .enumerate()
        .for_each(|(node, v)| {
            *v = linalg::operator_norm(ricci.at(node), g.at(node), n).unwrap_or(f64::NAN);
        });
    out
}

/// Pointwise Frobenius contraction `Ric_ij Ric^ij` (used by the
/// scalar-curvature evolution identity, which needs the full contraction,
/// not the operator norm).
pub fn ric_frobenius_sq_field(aux: &MetricAux, ricci: &NodeField) -> ScalarField {
    let grid = ricci.grid().clone();
    let n = grid.dim();
    let mut out = ScalarField::zeros(grid);
    out.data_mut()
        .par_iter_mut()
        .enumerate()
        .for_each(|(node, v)| {
            let gi = aux.inverse.at(node);
            let rc = ricci.at(node);
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let mut up = 0.0;
                    for a in 0..n {
                        for b in 0..n {
                            up += gi[i * n + a] * gi[j * n + b] * rc[a * n + b];
                        }
                    }
                    s += up * rc[i * n + j];
                }
            }
            *v = s;
        });
    out
}

/// Full curvature data for one metric.
pub struct CurvatureBundle {
    pub christoffel: NodeField,
    pub riemann: NodeField,
    pub ricci: NodeField,
    pub scalar: ScalarField,
    /// Pointwise `|Rm|` per node.
    pub rm_norm: ScalarField,
    /// Pointwise operator norm of Ricci per node.
    pub ric_norm: ScalarField,
    pub sup_rm: f64,
    pub sup_ric: f64,
}

/// Computes the full curvature bundle of a metric.
pub fn bundle(g: &MetricField) -> Result<CurvatureBundle, GeometryError> {
    let aux = metric_aux(g)?;
    bundle_with_aux(g, &aux)
}

/// As [`bundle`], reusing a precomputed [`MetricAux`].
pub fn bundle_with_aux(g: &MetricField, aux: &MetricAux) -> Result<CurvatureBundle, GeometryError> {
    let gamma = christoffel(g, aux);
    let riemann = riemann_lowered(g, &gamma);
    let ricci = ricci_tensor(g, &gamma);
    let scalar = scalar_curvature(aux, &ricci);
    let rm_norm = rm_norm_field(g, aux, &gamma);
    let ric_norm = ric_op_norm_field(g, &ricci);
    let sup_rm = rm_norm.max_abs();
    let sup_ric = ric_norm.max_abs();
    Ok(CurvatureBundle {
        christoffel: gamma,
        riemann,
        ricci,
        scalar,
        rm_norm,
        ric_norm,
        sup_rm,
        sup_ric,
    })
}

/// Curvature norms: `(sup |Rm|, sup |Ric|, ||Rm||_p)`. The L^p integral uses
/// the volume form of `g`; `p >= 1` is required.
pub fn norms(
    bundle: &CurvatureBundle,
    g: &MetricField,
    p: f64,
) -> Result<(f64, f64, f64), GeometryError> {
    if !(p >= 1.0) {
        return Err(GeometryError::InvalidExponent(p));
    }
    let aux = metric_aux(g)?;
    let lp = lp_norm(&bundle.rm_norm, &aux, p);
    Ok((bundle.sup_rm, bundle.sup_ric, lp))
}

/// `(integral |f|^p dvol)^{1/p}` over the whole chart.
pub fn lp_norm(f: &ScalarField, aux: &MetricAux, p: f64) -> f64 {
    let cell = f.grid().cell_volume();
    let mut s = 0.0;
    for node in 0..f.grid().node_count() {
        s += f.value(node).abs().powf(p) * aux.sqrt_det.value(node);
    }
    (s * cell).powf(1.0 / p)
}

/// Chart volume `integral sqrt(det g)` by midpoint quadrature (exact for
/// constant metrics).
pub fn volume(aux: &MetricAux) -> f64 {
    let cell = aux.sqrt_det.grid().cell_volume();
    let mut s = 0.0;
    for node in 0..aux.sqrt_det.grid().node_count() {
        s += aux.sqrt_det.value(node);
    }
    s * cell
}

/// Laplace-Beltrami operator `Delta u = (1/sqrt g) d_i (sqrt g g^{ij} d_j u)`
/// in expanded form `g^{ij} d2_ij u + b^j d_j u` with
/// `b^j = (1/sqrt g) d_i (sqrt g g^{ij})`, all derivatives centered.
/// On a flat metric this reduces to the ordinary discrete Laplacian.
pub fn laplace_beltrami(
    g: &MetricField,
    aux: &MetricAux,
    u: &ScalarField,
) -> Result<ScalarField, GeometryError> {
    if !g.grid().same_layout(u.grid()) {
        return Err(GeometryError::ChartMismatch(
            "scalar field sampled on a different chart".into(),
        ));
    }
    let grid = g.grid().clone();
    let n = g.dim();
    let nn = n * n;
    // W^{ij} = sqrt(det g) g^{ij}.
    let mut w = NodeField::zeros(grid.clone(), nn);
    for node in 0..grid.node_count() {
        let gi = aux.inverse.at(node);
        let sd = aux.sqrt_det.value(node);
        let row = w.at_mut(node);
        for c in 0..nn {
            row[c] = sd * gi[c];
        }
    }
    let mut out = ScalarField::zeros(grid.clone());
    let h = grid.spacing().to_vec();
    out.data_mut()
        .par_iter_mut()
        .enumerate()
        .for_each(|(node, dest)| {
            let gi = aux.inverse.at(node);
            let sd = aux.sqrt_det.value(node);
            let uc = u.value(node);
            let mut du = [0.0; MAX_DIM];
            let mut lap = 0.0;
            for a in 0..n {
                let up = u.value(grid.neighbor(node, a, 1));
                let um = u.value(grid.neighbor(node, a, 0));
                du[a] = (up - um) * 0.5 / h[a];
                // same-axis second derivative
                lap += gi[a * n + a] * (up - 2.0 * uc + um) / (h[a] * h[a]);
            }
            for a in 0..n {
                for b in (a + 1)..n {
                    let pp = u.value(grid.neighbor(grid.neighbor(node, a, 1), b, 1));
                    let mm = u.value(grid.neighbor(grid.neighbor(node, a, 0), b, 0));
                    let pm = u.value(grid.neighbor(grid.neighbor(node, a, 1), b, 0));
                    let mp = u.value(grid.neighbor(grid.neighbor(node, a, 0), b, 1));
                    let mixed = (pp + mm - pm - mp) / (4.0 * h[a] * h[b]);
                    lap += 2.0 * gi[a * n + b] * mixed;
                }
            }
            // drift term b^j du_j
            for j in 0..n {
                let mut div = 0.0;
                for i in 0..n {
                    let wp = w.at(grid.neighbor(node, i, 1))[i * n + j];
                    let wm = w.at(grid.neighbor(node, i, 0))[i * n + j];
                    div += (wp - wm) * 0.5 / h[i];
                }
                lap += div / sd * du[j];
            }
            *dest = lap;
        });
    Ok(out)
}

/// `integral (Delta u) dvol` over the closed chart (zero up to
/// discretization error, by periodicity).
pub fn divergence_integral(aux: &MetricAux, lap_u: &ScalarField) -> f64 {
    let cell = lap_u.grid().cell_volume();
    let mut s = 0.0;
    for node in 0..lap_u.grid().node_count() {
        s += lap_u.value(node) * aux.sqrt_det.value(node);
    }
    s * cell
}

/// Sectional curvature of the coordinate plane `(a, b)` at a node,
/// `K = R_abba / (g_aa g_bb - g_ab^2)`.
pub fn sectional_coordinate_plane(
    g: &MetricField,
    riemann: &NodeField,
    node: usize,
    a: usize,
    b: usize,
) -> f64 {
    let n = g.dim();
    let gm = g.at(node);
    let r = riemann.at(node);
    let num = r[((a * n + b) * n + b) * n + a];
    let den = gm[a * n + a] * gm[b * n + b] - gm[a * n + b] * gm[a * n + b];
    num / den
}

/// Helper used in tests and by the flow engine: Ricci directly from a
/// metric, with intermediate fields discarded.
pub fn ricci_of_metric(g: &MetricField) -> Result<NodeField, GeometryError> {
    let aux = metric_aux(g)?;
    let gamma = christoffel(g, &aux);
    Ok(ricci_tensor(g, &gamma))
}

pub use crate::metric::interpolate_components;

/// Convenience: interpolation target grid re-export used by probes.
pub type Grid = Arc<ChartGrid>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ChartGrid;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn torus_grid(n: usize, dim: usize) -> Arc<ChartGrid> {
        Arc::new(ChartGrid::new(&vec![n; dim], &vec![2.0 * PI; dim]).unwrap())
    }

    #[test]
    fn flat_metric_has_zero_connection_and_curvature() {
        let g = MetricField::euclidean(torus_grid(8, 2));
        let aux = metric_aux(&g).unwrap();
        let gamma = christoffel(&g, &aux);
        assert_eq!(gamma.data().iter().fold(0.0f64, |m, v| m.max(v.abs())), 0.0);
        let b = bundle(&g).unwrap();
        assert_eq!(b.sup_rm, 0.0);
        assert_eq!(b.sup_ric, 0.0);
        assert_eq!(b.scalar.max_abs(), 0.0);
        let (a, r, l) = norms(&b, &g, 2.0).unwrap();
        assert_eq!((a, r, l), (0.0, 0.0, 0.0));
    }

    #[test]
    fn norms_reject_p_below_one() {
        let g = MetricField::euclidean(torus_grid(8, 2));
        let b = bundle(&g).unwrap();
        assert!(matches!(
            norms(&b, &g, 0.5),
            Err(GeometryError::InvalidExponent(_))
        ));
    }

    #[test]
    fn christoffel_is_symmetric_in_lower_indices() {
        let grid = torus_grid(16, 2);
        let g = MetricField::from_fn(grid, |x, m| {
            m[0] = 1.0 + 0.3 * x[0].sin();
            m[1] = 0.1 * (x[0] + x[1]).cos();
            m[2] = m[1];
            m[3] = 1.0 + 0.2 * (2.0 * x[1]).cos();
        })
        .unwrap();
        let aux = metric_aux(&g).unwrap();
        let gamma = christoffel(&g, &aux);
        let n = 2;
        for node in 0..g.grid().node_count() {
            let gm = gamma.at(node);
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        assert_eq!(gm[k * n * n + i * n + j], gm[k * n * n + j * n + i]);
                    }
                }
            }
        }
    }

    #[test]
    fn exponential_diagonal_metric_matches_hand_derivative() {
        // g = diag(e^{2 x}, 1): G^1_11 = 1 analytically. The chart seam makes
        // the field non-periodic, so evaluate away from it; the centered
        // stencil error is sinh(2h)/(2h) - 1 <= 0.68 h^2 for h <= 0.1.
        let grid = torus_grid(64, 2);
        let g = MetricField::from_fn(grid.clone(), |x, m| {
            m[0] = (2.0 * x[0]).exp();
            m[1] = 0.0;
            m[2] = 0.0;
            m[3] = 1.0;
        })
        .unwrap();
        let aux = metric_aux(&g).unwrap();
        let gamma = christoffel(&g, &aux);
        let node = grid.encode(&[32, 0]);
        let h = grid.spacing()[0];
        let got = gamma.at(node)[0]; // G^1_11
        assert!((got - 1.0).abs() <= 0.68 * h * h + 1e-12, "got {got}");
    }

    #[test]
    fn periodic_diagonal_metric_matches_symbolic_derivative() {
        // g = diag(e^{2 sin x}, 1): G^1_11 = cos x. Check second-order
        // convergence of the worst-node error.
        let mut errs = Vec::new();
        for n in [32usize, 64] {
            let grid = torus_grid(n, 2);
            let g = MetricField::from_fn(grid.clone(), |x, m| {
                m[0] = (2.0 * x[0].sin()).exp();
                m[1] = 0.0;
                m[2] = 0.0;
                m[3] = 1.0;
            })
            .unwrap();
            let aux = metric_aux(&g).unwrap();
            let gamma = christoffel(&g, &aux);
            let mut worst = 0.0f64;
            let mut x = [0.0; MAX_DIM];
            for node in 0..grid.node_count() {
                grid.position(node, &mut x);
                let want = x[0].cos();
                worst = worst.max((gamma.at(node)[0] - want).abs());
            }
            errs.push(worst);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.8, "order {order}, errors {errs:?}");
    }

    #[test]
    fn laplacian_of_fourier_mode_on_flat_torus() {
        let grid = torus_grid(64, 2);
        let g = MetricField::euclidean(grid.clone());
        let aux = metric_aux(&g).unwrap();
        let u = ScalarField::from_fn(grid.clone(), |x| x[0].sin());
        let lap = laplace_beltrami(&g, &aux, &u).unwrap();
        // Discrete eigenvalue of the standard Laplacian: -(2 - 2 cos h)/h^2.
        let h = grid.spacing()[0];
        let lam = -(2.0 - 2.0 * h.cos()) / (h * h);
        for node in 0..grid.node_count() {
            assert_abs_diff_eq!(lap.value(node), lam * u.value(node), epsilon = 1e-10);
        }
        // Continuum eigenvalue -1 within O(h^2).
        assert!((lam + 1.0).abs() < h * h);
        // Constant field maps to zero; divergence integral vanishes.
        let c = ScalarField::from_fn(grid.clone(), |_| 3.7);
        let lap_c = laplace_beltrami(&g, &aux, &c).unwrap();
        assert_eq!(lap_c.max_abs(), 0.0);
        assert_abs_diff_eq!(divergence_integral(&aux, &lap), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn divergence_integral_vanishes_on_curved_chart_under_refinement() {
        // The expanded-form discretization does not telescope exactly, so
        // the closed-chart integral of Delta u is O(h^2), not zero; check
        // smallness plus the convergence order.
        let mut errs = Vec::new();
        for n in [16usize, 32] {
            let grid = torus_grid(n, 2);
            let g = MetricField::from_fn(grid.clone(), |x, m| {
                m[0] = 1.0 + 0.2 * (x[0] + 0.5 * x[1]).sin();
                m[1] = 0.05 * x[1].cos();
                m[2] = m[1];
                m[3] = 1.0 - 0.15 * (x[0] - x[1]).cos();
            })
            .unwrap();
            let aux = metric_aux(&g).unwrap();
            let u = ScalarField::from_fn(grid.clone(), |x| (x[0].sin() + (2.0 * x[1]).cos()) * 0.5);
            let lap = laplace_beltrami(&g, &aux, &u).unwrap();
            errs.push(divergence_integral(&aux, &lap).abs() / lap.max_abs());
        }
        assert!(errs[1] < 5e-3, "relative integral {errs:?}");
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.8, "order {order}, errors {errs:?}");
    }

    #[test]
    fn ricci_equals_contraction_of_riemann() {
        let grid = torus_grid(12, 3);
        let g = MetricField::from_fn(grid, |x, m| {
            let p = 0.08;
            for c in 0..9 {
                m[c] = 0.0;
            }
            m[0] = 1.0 + p * (x[1] + x[2]).sin();
            m[4] = 1.0 + p * (x[0] + 2.0 * x[2]).cos();
            m[8] = 1.0 + p * (2.0 * x[0] - x[1]).sin();
            m[1] = 0.3 * p * (x[2]).cos();
            m[3] = m[1];
        })
        .unwrap();
        let aux = metric_aux(&g).unwrap();
        let gamma = christoffel(&g, &aux);
        let riem = riemann_lowered(&g, &gamma);
        let ric = ricci_tensor(&g, &gamma);
        let n = 3;
        for node in (0..g.grid().node_count()).step_by(7) {
            let gi = aux.inverse.at(node);
            let r = riem.at(node);
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for k in 0..n {
                        for l in 0..n {
                            s += gi[k * n + l] * r[((k * n + i) * n + j) * n + l];
                        }
                    }
                    // The direct form symmetrizes, so compare against the
                    // symmetrized contraction.
                    let mut st = 0.0;
                    for k in 0..n {
                        for l in 0..n {
                            st += gi[k * n + l] * r[((k * n + j) * n + i) * n + l];
                        }
                    }
                    let want = 0.5 * (s + st);
                    assert_abs_diff_eq!(ric.at(node)[i * n + j], want, epsilon = 1e-11);
                }
            }
        }
    }

    #[test]
    fn scalar_is_trace_of_ricci_exactly() {
        let grid = torus_grid(10, 2);
        let g = MetricField::from_fn(grid, |x, m| {
            m[0] = 1.0 + 0.2 * x[0].sin();
            m[1] = 0.1 * x[1].sin();
            m[2] = m[1];
            m[3] = 1.2;
        })
        .unwrap();
        let aux = metric_aux(&g).unwrap();
        let gamma = christoffel(&g, &aux);
        let ric = ricci_tensor(&g, &gamma);
        let scal = scalar_curvature(&aux, &ric);
        for node in 0..g.grid().node_count() {
            let gi = aux.inverse.at(node);
            let rc = ric.at(node);
            let tr: f64 = (0..4).map(|c| gi[c] * rc[c]).sum();
            assert_eq!(scal.value(node), tr);
        }
    }
}
