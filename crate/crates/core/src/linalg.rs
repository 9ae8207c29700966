//! Dense linear algebra for small symmetric matrices (chart dimension <= 6).
//!
//! Curvature kernels call these routines once per grid node, so everything
//! works on caller-provided slices with stack scratch and no allocation.

/// Maximum supported chart dimension.
pub const MAX_DIM: usize = 6;

const MAX2: usize = MAX_DIM * MAX_DIM;

/// Cholesky factorization of a symmetric positive-definite `n x n` matrix
/// stored row-major. Returns the lower factor in `l`, or `None` if a pivot
/// drops below `eps`.
pub fn cholesky(a: &[f64], n: usize, eps: f64, l: &mut [f64]) -> Option<()> {
    debug_assert!(n <= MAX_DIM);
    for x in l[..n * n].iter_mut() {
        *x = 0.0;
    }
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > eps) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(())
}

/// Determinant of a symmetric positive-definite matrix via Cholesky.
/// Returns `None` when the matrix is not positive definite.
pub fn spd_det(a: &[f64], n: usize) -> Option<f64> {
    let mut l = [0.0; MAX2];
    cholesky(a, n, 0.0, &mut l)?;
    let mut d = 1.0;
    for i in 0..n {
        d *= l[i * n + i];
    }
    Some(d * d)
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
/// `inv` receives the full (symmetric) inverse. Returns the determinant.
pub fn spd_inverse(a: &[f64], n: usize, inv: &mut [f64]) -> Option<f64> {
    let mut l = [0.0; MAX2];
    cholesky(a, n, 0.0, &mut l)?;
    // Invert L in place (lower triangular).
    let mut li = [0.0; MAX2];
    for i in 0..n {
        li[i * n + i] = 1.0 / l[i * n + i];
        for j in 0..i {
            let mut s = 0.0;
            for k in j..i {
                s += l[i * n + k] * li[k * n + j];
            }
            li[i * n + j] = -s / l[i * n + i];
        }
    }
    // inv = L^{-T} L^{-1}
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i.max(j)..n {
                s += li[k * n + i] * li[k * n + j];
            }
            inv[i * n + j] = s;
            inv[j * n + i] = s;
        }
    }
    let mut d = 1.0;
    for i in 0..n {
        d *= l[i * n + i];
    }
    Some(d * d)
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method.
/// Fills `eigs[..n]` in ascending order.
pub fn sym_eigenvalues(a: &[f64], n: usize, eigs: &mut [f64]) {
    debug_assert!(n <= MAX_DIM);
    let mut m = [0.0; MAX2];
    m[..n * n].copy_from_slice(&a[..n * n]);
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    for i in 0..n {
        eigs[i] = m[i * n + i];
    }
    eigs[..n].sort_by(|x, y| x.partial_cmp(y).unwrap());
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &[f64], n: usize) -> f64 {
    let mut eigs = [0.0; MAX_DIM];
    sym_eigenvalues(a, n, &mut eigs);
    eigs[0]
}

/// Eigenvalues of `a` relative to the SPD matrix `g` (solutions of
/// `det(a - t g) = 0`), ascending. This is the spectrum of the
/// endomorphism `g^{-1} a`; for symmetric `a` it is real.
pub fn generalized_eigenvalues(a: &[f64], g: &[f64], n: usize, eigs: &mut [f64]) -> Option<()> {
    let mut l = [0.0; MAX2];
    cholesky(g, n, 0.0, &mut l)?;
    // b = L^{-1} a L^{-T}, computed by forward substitutions.
    let mut b = [0.0; MAX2];
    b[..n * n].copy_from_slice(&a[..n * n]);
    // Solve L x = b columnwise (rows of b).
    for col in 0..n {
        for i in 0..n {
            let mut s = b[i * n + col];
            for k in 0..i {
                s -= l[i * n + k] * b[k * n + col];
            }
            b[i * n + col] = s / l[i * n + i];
        }
    }
    // Solve (L x^T = b^T) i.e. right-multiply by L^{-T}.
    for row in 0..n {
        for i in 0..n {
            let mut s = b[row * n + i];
            for k in 0..i {
                s -= l[i * n + k] * b[row * n + k];
            }
            b[row * n + i] = s / l[i * n + i];
        }
    }
    // Symmetrize against roundoff and diagonalize.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (b[i * n + j] + b[j * n + i]);
            b[i * n + j] = v;
            b[j * n + i] = v;
        }
    }
    sym_eigenvalues(&b, n, eigs);
    Some(())
}

/// Largest absolute generalized eigenvalue of `a` relative to `g`
/// (the operator norm of a symmetric 2-tensor measured in the metric `g`).
pub fn operator_norm(a: &[f64], g: &[f64], n: usize) -> Option<f64> {
    let mut eigs = [0.0; MAX_DIM];
    generalized_eigenvalues(a, g, n, &mut eigs)?;
    Some(eigs[0].abs().max(eigs[n - 1].abs()))
}

/// Solve the small linear system `m x = rhs` by Gaussian elimination with
/// partial pivoting. Returns false when the matrix is numerically singular.
pub fn solve(m: &[f64], rhs: &[f64], n: usize, x: &mut [f64]) -> bool {
    let mut a = [0.0; MAX2];
    let mut b = [0.0; MAX_DIM];
    a[..n * n].copy_from_slice(&m[..n * n]);
    b[..n].copy_from_slice(&rhs[..n]);
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if a[r * n + col].abs() > a[piv * n + col].abs() {
                piv = r;
            }
        }
        if a[piv * n + col].abs() < 1e-300 {
            return false;
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            b.swap(col, piv);
        }
        for r in (col + 1)..n {
            let f = a[r * n + col] / a[col * n + col];
            for c in col..n {
                a[r * n + c] -= f * a[col * n + c];
            }
            b[r] -= f * b[col];
        }
    }
    for row in (0..n).rev() {
        let mut s = b[row];
        for c in (row + 1)..n {
            s -= a[row * n + c] * x[c];
        }
        x[row] = s / a[row * n + row];
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn inverse_and_det_of_spd() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let mut inv = [0.0; 9];
        let det = spd_inverse(&a, 3, &mut inv).unwrap();
        assert_abs_diff_eq!(det, spd_det(&a, 3).unwrap(), epsilon = 1e-12);
        // a * inv = id
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += a[i * 3 + k] * inv[k * 3 + j];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(s, want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn eigenvalues_of_known_matrix() {
        // diag(1,2) rotated by 45 degrees.
        let a = [1.5, 0.5, 0.5, 1.5];
        let mut e = [0.0; MAX_DIM];
        sym_eigenvalues(&a, 2, &mut e);
        assert_abs_diff_eq!(e[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn generalized_eigenvalues_reduce_to_plain_for_identity() {
        let a = [2.0, 0.3, 0.3, -1.0];
        let g = [1.0, 0.0, 0.0, 1.0];
        let mut e = [0.0; MAX_DIM];
        generalized_eigenvalues(&a, &g, 2, &mut e).unwrap();
        let mut plain = [0.0; MAX_DIM];
        sym_eigenvalues(&a, 2, &mut plain);
        assert_abs_diff_eq!(e[0], plain[0], epsilon = 1e-12);
        assert_abs_diff_eq!(e[1], plain[1], epsilon = 1e-12);
    }

    #[test]
    fn scaling_identity_for_operator_norm() {
        // |(1+eps) g - g|_g = eps exactly.
        let g = [2.0, 0.4, 0.4, 1.0];
        let eps = 0.37;
        let mut diff = [0.0; 4];
        for i in 0..4 {
            diff[i] = eps * g[i];
        }
        assert_abs_diff_eq!(operator_norm(&diff, &g, 2).unwrap(), eps, epsilon = 1e-13);
    }

    #[test]
    fn solve_small_system() {
        let m = [2.0, 1.0, 1.0, 3.0];
        let rhs = [5.0, 10.0];
        let mut x = [0.0; MAX_DIM];
        assert!(solve(&m, &rhs, 2, &mut x));
        assert_abs_diff_eq!(2.0 * x[0] + x[1], 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[0] + 3.0 * x[1], 10.0, epsilon = 1e-12);
    }
}
