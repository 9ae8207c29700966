//! Closed-form model geometries and their exact flows.
//!
//! Five families. Spheres, flat tori and sphere-circle products have fully
//! closed-form curvature and flow; diagonal left-invariant metrics on SU(2)
//! reduce the flow to a three-parameter ODE system integrated here at
//! reference precision (a "semi-exact" oracle, an order of magnitude tighter
//! than anything it validates); the nilmanifold shear family is used for
//! membership and collapse demonstrations, with its flow exercised through
//! the grid engine.
//!
//! SU(2) conventions: a fixed left-invariant frame `X_1, X_2, X_3` with
//! `[X_i, X_j] = 2 eps_ijk X_k` and diagonal metric `g = diag(l1, l2, l3)`
//! in the dual coframe. For the orthonormal frame `e_i = X_i / sqrt(l_i)`
//! the structure constants are `c_i = 2 sqrt(l_i / (l_j l_k))` and, with
//! `mu_i = (c_1 + c_2 + c_3)/2 - c_i`, the principal Ricci curvatures are
//! `r_i = 2 mu_j mu_k` and the frame-plane sectional curvatures follow from
//! `K_ij = (r_i + r_j - r_k) / 2`. With `l1 = l2 = l3 = l` this is the round
//! 3-sphere of radius `sqrt(l)`. The same formulas cover the Heisenberg
//! algebra (`c_1 = c_2 = 0`), giving principal Ricci curvatures
//! `(-c^2/2, -c^2/2, +c^2/2)`.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::GeometryError;
use crate::grid::ChartGrid;
use crate::linalg::MAX_DIM;
use crate::metric::MetricField;

/// A closed-form model geometry.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelMetric {
    RoundSphere {
        dim: usize,
        radius: f64,
    },
    FlatTorus {
        periods: Vec<f64>,
    },
    /// `S^2(radius) x S^1(circle_length)`.
    ProductSphereCircle {
        radius: f64,
        circle_length: f64,
    },
    /// Diagonal left-invariant metric on SU(2) in the Milnor frame.
    MilnorSu2 {
        lambda: [f64; 3],
    },
    /// Collapsing nilmanifold family: `dx^2 + dy^2 + eps^2 (dz - s dy)^2`
    /// with shear rate 1 at the reference slice; `eps` scales the fiber.
    HeisenbergNil {
        epsilon: f64,
        periods: [f64; 3],
    },
}

/// Closed-form curvature summary of a model metric.
#[derive(Debug, Clone)]
pub struct CurvatureSummary {
    /// Sectional curvatures of the frame planes (all planes for constant
    /// curvature families; in 3-D the frame planes realize the extremes).
    pub frame_sectional: Vec<f64>,
    /// Eigenvalues of Ricci relative to the metric.
    pub ricci_eigenvalues: Vec<f64>,
    pub scalar: f64,
    /// Full-contraction norm `|Rm| = sqrt(R_ijkl R^ijkl)`.
    pub rm_norm: f64,
    /// Operator norm of Ricci.
    pub ric_norm: f64,
}

impl CurvatureSummary {
    pub fn max_sectional(&self) -> f64 {
        self.frame_sectional.iter().cloned().fold(0.0, f64::max)
    }
}

/// Conjugate-radius value carried by a membership card.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConjRadius {
    Exact(f64),
    /// Comparison bound `pi / sqrt(K_max)`; the true value is at least this.
    LowerBound(f64),
    /// No conjugate points (flat or nonpositively curved family).
    Infinite,
}

impl ConjRadius {
    pub fn certified_lower(&self) -> f64 {
        match *self {
            ConjRadius::Exact(v) | ConjRadius::LowerBound(v) => v,
            ConjRadius::Infinite => f64::INFINITY,
        }
    }
}

/// Class-membership probe result.
#[derive(Debug, Clone)]
pub struct MembershipCard {
    pub sup_ric: f64,
    pub conj: ConjRadius,
    /// Membership in the class with `|Ric| <= 1` and `conj >= r0`.
    pub member: bool,
    /// Upper bound on the injectivity radius from a short closed geodesic,
    /// when one is available in closed form (collapse witness).
    pub inj_upper: Option<f64>,
}

/// Exact (or reference-precision) Ricci flow of a model metric.
#[derive(Debug, Clone)]
pub struct ExactFlowSolution {
    pub initial: ModelMetric,
    /// First time the reduced flow leaves the smooth regime
    /// (`f64::INFINITY` for stationary families).
    pub t_blowup: f64,
}

/// Grid realization of a model metric on a periodic chart.
pub struct GridRealization {
    pub metric: MetricField,
    /// Number of times the chart covers the model (polar charts cover
    /// spheres twice per angular axis). Chart volume = cover * model volume.
    pub cover: f64,
    /// Nodes where the realization agrees with the model to second jet;
    /// curvature comparisons evaluate here.
    pub probe_nodes: Vec<usize>,
    /// True when the realization only matches the model near the probe
    /// nodes (jet realizations), so global quantities are meaningless.
    pub jet_only: bool,
}

impl ModelMetric {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = match self {
            ModelMetric::RoundSphere { dim, radius } => *dim >= 2 && *radius > 0.0,
            ModelMetric::FlatTorus { periods } => {
                periods.len() >= 2 && periods.iter().all(|&l| l > 0.0)
            }
            ModelMetric::ProductSphereCircle {
                radius,
                circle_length,
            } => *radius > 0.0 && *circle_length > 0.0,
            ModelMetric::MilnorSu2 { lambda } => lambda.iter().all(|&l| l > 0.0),
            ModelMetric::HeisenbergNil { epsilon, periods } => {
                (0.0..=1.0).contains(epsilon) && *epsilon > 0.0 && periods.iter().all(|&l| l > 0.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidChart(format!(
                "invalid model parameters: {self:?}"
            )))
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelMetric::RoundSphere { dim, .. } => *dim,
            ModelMetric::FlatTorus { periods } => periods.len(),
            ModelMetric::ProductSphereCircle { .. } => 3,
            ModelMetric::MilnorSu2 { .. } => 3,
            ModelMetric::HeisenbergNil { .. } => 3,
        }
    }

    /// Closed-form curvature.
    pub fn exact_curvature(&self) -> Result<CurvatureSummary, GeometryError> {
        self.validate()?;
        Ok(match self {
            ModelMetric::RoundSphere { dim, radius } => {
                let n = *dim as f64;
                let k = 1.0 / (radius * radius);
                let planes = dim * (dim - 1) / 2;
                CurvatureSummary {
                    frame_sectional: vec![k; planes],
                    ricci_eigenvalues: vec![(n - 1.0) * k; *dim],
                    scalar: n * (n - 1.0) * k,
                    rm_norm: (2.0 * n * (n - 1.0)).sqrt() * k,
                    ric_norm: (n - 1.0) * k,
                }
            }
            ModelMetric::FlatTorus { periods } => {
                let n = periods.len();
                CurvatureSummary {
                    frame_sectional: vec![0.0; n * (n - 1) / 2],
                    ricci_eigenvalues: vec![0.0; n],
                    scalar: 0.0,
                    rm_norm: 0.0,
                    ric_norm: 0.0,
                }
            }
            ModelMetric::ProductSphereCircle { radius, .. } => {
                let k = 1.0 / (radius * radius);
                CurvatureSummary {
                    // planes: (sphere), (mixed), (mixed)
                    frame_sectional: vec![k, 0.0, 0.0],
                    ricci_eigenvalues: vec![k, k, 0.0],
                    scalar: 2.0 * k,
                    rm_norm: 2.0 * k,
                    ric_norm: k,
                }
            }
            ModelMetric::MilnorSu2 { lambda } => su2_summary(lambda),
            ModelMetric::HeisenbergNil { epsilon, .. } => {
                let c2 = epsilon * epsilon;
                let (r1, r2, r3) = (-0.5 * c2, -0.5 * c2, 0.5 * c2);
                summary_3d([r1, r2, r3])
            }
        })
    }

    /// Exact flow by symmetry reduction. Families without a reduction
    /// (the nil shear) are rejected.
    pub fn exact_flow(&self) -> Result<ExactFlowSolution, GeometryError> {
        self.validate()?;
        let t_blowup = match self {
            ModelMetric::RoundSphere { dim, radius } => {
                radius * radius / (2.0 * (*dim as f64 - 1.0))
            }
            ModelMetric::FlatTorus { .. } => f64::INFINITY,
            ModelMetric::ProductSphereCircle { radius, .. } => radius * radius / 2.0,
            ModelMetric::MilnorSu2 { lambda } => milnor_blowup_time(*lambda),
            ModelMetric::HeisenbergNil { .. } => {
                return Err(GeometryError::UnsupportedFamily(
                    "nil shear family has no ODE reduction; flow it through the grid engine".into(),
                ))
            }
        };
        Ok(ExactFlowSolution {
            initial: self.clone(),
            t_blowup,
        })
    }

    /// Membership probe for the class `|Ric| <= 1`, `conj >= r0`.
    pub fn membership_card(&self, r0: f64) -> Result<MembershipCard, GeometryError> {
        let summary = self.exact_curvature()?;
        let conj = match self {
            ModelMetric::RoundSphere { radius, .. } => ConjRadius::Exact(PI * radius),
            ModelMetric::FlatTorus { .. } => ConjRadius::Infinite,
            // The circle factor contributes no conjugate points; mixed
            // geodesics see the sphere factor at reduced speed, so the
            // sphere bound is exact.
            ModelMetric::ProductSphereCircle { radius, .. } => ConjRadius::Exact(PI * radius),
            // 3-D frame-diagonal curvature operators attain their maximum
            // sectional curvature on frame planes, so the comparison bound
            // pi / sqrt(K_max) is rigorous.
            ModelMetric::MilnorSu2 { .. } | ModelMetric::HeisenbergNil { .. } => {
                let kmax = summary.max_sectional();
                if kmax > 0.0 {
                    ConjRadius::LowerBound(PI / kmax.sqrt())
                } else {
                    ConjRadius::Infinite
                }
            }
        };
        let inj_upper = match self {
            // The central fiber is a closed geodesic of length eps * L_z.
            ModelMetric::HeisenbergNil { epsilon, periods } => Some(0.5 * epsilon * periods[2]),
            _ => None,
        };
        Ok(MembershipCard {
            sup_ric: summary.ric_norm,
            member: summary.ric_norm <= 1.0 && conj.certified_lower() >= r0,
            conj,
            inj_upper,
        })
    }

    /// Metric scaled by a constant: `g -> c g`.
    pub fn scaled(&self, c: f64) -> Result<ModelMetric, GeometryError> {
        if !(c > 0.0) {
            return Err(GeometryError::InvalidChart("scale must be positive".into()));
        }
        Ok(match self {
            ModelMetric::RoundSphere { dim, radius } => ModelMetric::RoundSphere {
                dim: *dim,
                radius: radius * c.sqrt(),
            },
            ModelMetric::FlatTorus { periods } => ModelMetric::FlatTorus {
                periods: periods.iter().map(|l| l * c.sqrt()).collect(),
            },
            ModelMetric::ProductSphereCircle {
                radius,
                circle_length,
            } => ModelMetric::ProductSphereCircle {
                radius: radius * c.sqrt(),
                circle_length: circle_length * c.sqrt(),
            },
            ModelMetric::MilnorSu2 { lambda } => ModelMetric::MilnorSu2 {
                lambda: [lambda[0] * c, lambda[1] * c, lambda[2] * c],
            },
            ModelMetric::HeisenbergNil { .. } => {
                return Err(GeometryError::UnsupportedFamily(
                    "scaling leaves the shear parametrization".into(),
                ))
            }
        })
    }

    /// Closed-form volume (families with a global closed form).
    pub fn exact_volume(&self) -> Result<f64, GeometryError> {
        self.validate()?;
        match self {
            ModelMetric::RoundSphere { dim: 2, radius } => Ok(4.0 * PI * radius * radius),
            ModelMetric::RoundSphere { dim: 3, radius } => Ok(2.0 * PI * PI * radius.powi(3)),
            ModelMetric::RoundSphere { dim, .. } => Err(GeometryError::UnsupportedDimension {
                got: *dim,
                context: "closed-form sphere volume implemented for n = 2, 3".into(),
            }),
            ModelMetric::FlatTorus { periods } => Ok(periods.iter().product()),
            ModelMetric::ProductSphereCircle {
                radius,
                circle_length,
            } => Ok(4.0 * PI * radius * radius * circle_length),
            ModelMetric::MilnorSu2 { lambda } => {
                Ok(2.0 * PI * PI * (lambda[0] * lambda[1] * lambda[2]).sqrt())
            }
            ModelMetric::HeisenbergNil { epsilon, periods } => {
                Ok(epsilon * periods.iter().product::<f64>())
            }
        }
    }

    /// Closed-form diameter (families with one).
    pub fn exact_diameter(&self) -> Option<f64> {
        match self {
            ModelMetric::RoundSphere { radius, .. } => Some(PI * radius),
            ModelMetric::FlatTorus { periods } => {
                Some(periods.iter().map(|l| 0.25 * l * l).sum::<f64>().sqrt())
            }
            ModelMetric::ProductSphereCircle {
                radius,
                circle_length,
            } => {
                let a = PI * radius;
                let b = 0.5 * circle_length;
                Some((a * a + b * b).sqrt())
            }
            _ => None,
        }
    }

    /// C0 distance to another member of the same family, measured in `other`
    /// (largest relative eigenvalue deviation of the parameter map).
    pub fn c0_distance_from(&self, other: &ModelMetric) -> Result<f64, GeometryError> {
        match (self, other) {
            (
                ModelMetric::RoundSphere { dim: d1, radius: r1 },
                ModelMetric::RoundSphere { dim: d0, radius: r0 },
            ) if d1 == d0 => Ok(((r1 * r1) / (r0 * r0) - 1.0).abs()),
            (ModelMetric::FlatTorus { periods: a }, ModelMetric::FlatTorus { periods: b })
                if a == b =>
            {
                Ok(0.0)
            }
            (
                ModelMetric::ProductSphereCircle { radius: r1, .. },
                ModelMetric::ProductSphereCircle { radius: r0, .. },
            ) => Ok(((r1 * r1) / (r0 * r0) - 1.0).abs()),
            (
                ModelMetric::MilnorSu2 { lambda: l1 },
                ModelMetric::MilnorSu2 { lambda: l0 },
            ) => Ok(l1
                .iter()
                .zip(l0)
                .map(|(a, b)| (a / b - 1.0).abs())
                .fold(0.0, f64::max)),
            _ => Err(GeometryError::ChartMismatch(
                "C0 distance needs two members of the same family".into(),
            )),
        }
    }

    /// Chart realization suited to curvature evaluation near the probe
    /// nodes. `res` controls the resolution of the axes that carry the
    /// metric variation.
    pub fn curvature_chart(&self, res: usize) -> Result<GridRealization, GeometryError> {
        self.validate()?;
        match self {
            ModelMetric::FlatTorus { periods } => {
                let grid = Arc::new(ChartGrid::new(
                    &vec![res.max(4); periods.len()],
                    periods,
                )?);
                let metric = MetricField::euclidean(grid.clone());
                let probe_nodes = (0..grid.node_count()).step_by(7).collect();
                Ok(GridRealization {
                    metric,
                    cover: 1.0,
                    probe_nodes,
                    jet_only: false,
                })
            }
            ModelMetric::RoundSphere { dim: 2, radius } => sphere2_polar_chart(*radius, res, 8),
            ModelMetric::RoundSphere { dim: 3, radius } => sphere3_polar_chart(*radius, res),
            ModelMetric::RoundSphere { dim, .. } => Err(GeometryError::UnsupportedDimension {
                got: *dim,
                context: "sphere charts implemented for n = 2, 3".into(),
            }),
            ModelMetric::ProductSphereCircle {
                radius,
                circle_length,
            } => product_chart(*radius, *circle_length, res),
            ModelMetric::HeisenbergNil { epsilon, periods } => nil_shear_chart(*epsilon, periods, res),
            ModelMetric::MilnorSu2 { .. } => self.jet_chart(res),
        }
    }

    /// Chart realization suited to distance probes (isotropic resolution).
    pub fn probe_chart(&self, res: usize) -> Result<GridRealization, GeometryError> {
        match self {
            ModelMetric::RoundSphere { dim: 2, radius } => sphere2_polar_chart(*radius, res, res),
            other => other.curvature_chart(res),
        }
    }

    /// Normal-coordinate jet realization: periodic metric whose second jet
    /// at the center node matches the model, so curvature at the center is
    /// the model curvature. Valid for any family with frame-constant
    /// curvature; used where no global chart exists.
    pub fn jet_chart(&self, res: usize) -> Result<GridRealization, GeometryError> {
        let summary = self.exact_curvature()?;
        let n = self.dim();
        if n != 3 {
            return Err(GeometryError::UnsupportedDimension {
                got: n,
                context: "jet realization implemented for 3-D frames".into(),
            });
        }
        // R_ijkl from frame-plane sectionals (diagonal curvature operator):
        // R_ijkl = K_{(ij)} (d_il d_jk - d_ik d_jl) for {i,j} = {k,l}.
        let k23 = summary.frame_sectional[pair_index(1, 2)];
        let k13 = summary.frame_sectional[pair_index(0, 2)];
        let k12 = summary.frame_sectional[pair_index(0, 1)];
        let kmax = summary
            .frame_sectional
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-12);
        // Keep the quadratic correction small so the chart stays SPD.
        let period = 2.0 * PI * (0.55 / kmax.sqrt()).min(0.25);
        let grid = Arc::new(ChartGrid::new(&[res, res, res], &[period; 3])?);
        let pair_k = move |i: usize, j: usize| -> f64 {
            match (i.min(j), i.max(j)) {
                (0, 1) => k12,
                (0, 2) => k13,
                (1, 2) => k23,
                _ => 0.0,
            }
        };
        let riem = move |i: usize, j: usize, k: usize, l: usize| -> f64 {
            if i == j || k == l {
                return 0.0;
            }
            if (i.min(j), i.max(j)) != (k.min(l), k.max(l)) {
                return 0.0;
            }
            let kk = pair_k(i, j);
            let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
            kk * (delta(i, l) * delta(j, k) - delta(i, k) * delta(j, l))
        };
        let scale = period / (2.0 * PI);
        let metric = MetricField::from_fn(grid.clone(), |x, g| {
            let mut s = [0.0; 3];
            for a in 0..3 {
                s[a] = scale * (x[a] / scale).sin();
            }
            for i in 0..3 {
                for j in 0..3 {
                    let mut v = if i == j { 1.0 } else { 0.0 };
                    for k in 0..3 {
                        for l in 0..3 {
                            v += (1.0 / 3.0) * riem(i, k, j, l) * s[k] * s[l];
                        }
                    }
                    g[i * 3 + j] = v;
                }
            }
            // enforce exact symmetry against roundoff
            for i in 0..3 {
                for j in (i + 1)..3 {
                    let m = 0.5 * (g[i * 3 + j] + g[j * 3 + i]);
                    g[i * 3 + j] = m;
                    g[j * 3 + i] = m;
                }
            }
        })?;
        let center = grid.encode(&[0, 0, 0]);
        Ok(GridRealization {
            metric,
            cover: f64::NAN,
            probe_nodes: vec![center],
            jet_only: true,
        })
    }
}

fn pair_index(i: usize, j: usize) -> usize {
    // order: (0,1), (0,2), (1,2) -> but summary_3d stores (K_23, K_31, K_12)
    // in frame_sectional as [K12, K13, K23]; keep one canonical order.
    match (i.min(j), i.max(j)) {
        (0, 1) => 0,
        (0, 2) => 1,
        (1, 2) => 2,
        _ => unreachable!(),
    }
}

/// Summary for a 3-D metric from its principal Ricci curvatures, using
/// `K_ij = (r_i + r_j - r_k)/2`.
fn summary_3d(r: [f64; 3]) -> CurvatureSummary {
    let k12 = 0.5 * (r[0] + r[1] - r[2]);
    let k13 = 0.5 * (r[0] + r[2] - r[1]);
    let k23 = 0.5 * (r[1] + r[2] - r[0]);
    let rm = 2.0 * (k12 * k12 + k13 * k13 + k23 * k23).sqrt();
    let ric = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    CurvatureSummary {
        frame_sectional: vec![k12, k13, k23],
        ricci_eigenvalues: r.to_vec(),
        scalar: r.iter().sum(),
        rm_norm: rm,
        ric_norm: ric,
    }
}

fn su2_structure_constants(lambda: &[f64; 3]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for i in 0..3 {
        let j = (i + 1) % 3;
        let k = (i + 2) % 3;
        c[i] = 2.0 * (lambda[i] / (lambda[j] * lambda[k])).sqrt();
    }
    c
}

fn su2_ricci_eigenvalues(lambda: &[f64; 3]) -> [f64; 3] {
    let c = su2_structure_constants(lambda);
    let half = 0.5 * (c[0] + c[1] + c[2]);
    let mu = [half - c[0], half - c[1], half - c[2]];
    [
        2.0 * mu[1] * mu[2],
        2.0 * mu[0] * mu[2],
        2.0 * mu[0] * mu[1],
    ]
}

fn su2_summary(lambda: &[f64; 3]) -> CurvatureSummary {
    summary_3d(su2_ricci_eigenvalues(lambda))
}

/// RHS of the reduced flow on diagonal SU(2) metrics:
/// `dl_i/dt = 4 [ (l_j - l_k)^2 - l_i^2 ] / (l_j l_k)`.
pub fn milnor_flow_rhs(l: &[f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        let j = (i + 1) % 3;
        let k = (i + 2) % 3;
        let d = l[j] - l[k];
        out[i] = 4.0 * (d * d - l[i] * l[i]) / (l[j] * l[k]);
    }
    out
}

/// Reference integration of the reduced SU(2) flow to time `t`, with
/// Richardson step-doubling until successive refinements agree to `tol`.
pub fn integrate_milnor(lambda0: [f64; 3], t: f64, tol: f64) -> Result<[f64; 3], GeometryError> {
    if t == 0.0 {
        return Ok(lambda0);
    }
    let mut steps = ((t.abs() / 1e-3).ceil() as usize).max(64);
    let mut prev = milnor_rk4(lambda0, t, steps)?;
    for _ in 0..20 {
        steps *= 2;
        let next = milnor_rk4(lambda0, t, steps)?;
        let diff = prev
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if diff <= tol {
            return Ok(next);
        }
        prev = next;
    }
    Err(GeometryError::InvalidChart(
        "reference SU(2) integration failed to converge (near blowup?)".into(),
    ))
}

fn milnor_rk4(mut l: [f64; 3], t: f64, steps: usize) -> Result<[f64; 3], GeometryError> {
    let dt = t / steps as f64;
    for _ in 0..steps {
        let k1 = milnor_flow_rhs(&l);
        let l2 = add_scaled(&l, &k1, 0.5 * dt);
        let k2 = milnor_flow_rhs(&l2);
        let l3 = add_scaled(&l, &k2, 0.5 * dt);
        let k3 = milnor_flow_rhs(&l3);
        let l4 = add_scaled(&l, &k3, dt);
        let k4 = milnor_flow_rhs(&l4);
        for i in 0..3 {
            l[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            if !(l[i] > 0.0) {
                return Err(GeometryError::InvalidChart(
                    "SU(2) flow parameter left the positive cone".into(),
                ));
            }
        }
    }
    Ok(l)
}

fn add_scaled(a: &[f64; 3], b: &[f64; 3], s: f64) -> [f64; 3] {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

fn milnor_blowup_time(lambda0: [f64; 3]) -> f64 {
    // March forward until the smallest parameter collapses. The round case
    // has dl/dt = -4 exactly, so min(lambda)/4 is the natural step scale.
    let mut l = lambda0;
    let mut t = 0.0;
    loop {
        let lmin = l[0].min(l[1]).min(l[2]);
        if lmin < 1e-9 * lambda0[0].max(lambda0[1]).max(lambda0[2]) {
            return t;
        }
        let dt = (lmin / 4.0) * 0.25;
        match milnor_rk4(l, dt, 32) {
            Ok(next) => {
                l = next;
                t += dt;
            }
            Err(_) => return t,
        }
        if t > 1e6 {
            return f64::INFINITY;
        }
    }
}

impl ExactFlowSolution {
    /// Model metric at time `t` along the exact flow.
    pub fn metric_at(&self, t: f64) -> Result<ModelMetric, GeometryError> {
        if t < 0.0 || t >= self.t_blowup {
            return Err(GeometryError::InvalidChart(format!(
                "time {t} outside [0, {})",
                self.t_blowup
            )));
        }
        match &self.initial {
            ModelMetric::RoundSphere { dim, radius } => {
                let r2 = radius * radius - 2.0 * (*dim as f64 - 1.0) * t;
                Ok(ModelMetric::RoundSphere {
                    dim: *dim,
                    radius: r2.sqrt(),
                })
            }
            ModelMetric::FlatTorus { periods } => Ok(ModelMetric::FlatTorus {
                periods: periods.clone(),
            }),
            ModelMetric::ProductSphereCircle {
                radius,
                circle_length,
            } => Ok(ModelMetric::ProductSphereCircle {
                radius: (radius * radius - 2.0 * t).sqrt(),
                circle_length: *circle_length,
            }),
            ModelMetric::MilnorSu2 { lambda } => Ok(ModelMetric::MilnorSu2 {
                lambda: integrate_milnor(*lambda, t, 1e-12)?,
            }),
            ModelMetric::HeisenbergNil { .. } => unreachable!("rejected at construction"),
        }
    }
}

// ---------------------------------------------------------------------------
// Chart realizations
// ---------------------------------------------------------------------------

/// Polar chart of the round 2-sphere on a torus grid: `(theta, phi)` with
/// `g = diag(r^2, r^2 sin^2 theta)`, both periods `2 pi`. The chart is a
/// smooth positive metric on the torus (nodes offset off the poles) that
/// double-covers the sphere; curvature is the sphere's away from the
/// degenerate circles, so probe nodes sit in the equatorial band.
fn sphere2_polar_chart(
    radius: f64,
    res_theta: usize,
    res_phi: usize,
) -> Result<GridRealization, GeometryError> {
    let grid = Arc::new(ChartGrid::with_offsets(
        &[res_theta, res_phi.max(4)],
        &[2.0 * PI, 2.0 * PI],
        &[0.5, 0.0],
    )?);
    let r2 = radius * radius;
    let metric = MetricField::from_fn(grid.clone(), |x, g| {
        let s = x[0].sin();
        g[0] = r2;
        g[1] = 0.0;
        g[2] = 0.0;
        g[3] = r2 * s * s;
    })?;
    let probe_nodes = band_nodes(&grid, &[0], PI / 4.0, 3.0 * PI / 4.0);
    Ok(GridRealization {
        metric,
        cover: 2.0,
        probe_nodes,
        jet_only: false,
    })
}

/// Polar chart of the round 3-sphere: `(psi, theta, phi)` with
/// `g = r^2 diag(1, sin^2 psi, sin^2 psi sin^2 theta)`, quadruple cover.
fn sphere3_polar_chart(radius: f64, res: usize) -> Result<GridRealization, GeometryError> {
    let grid = Arc::new(ChartGrid::with_offsets(
        &[res, res, 8],
        &[2.0 * PI, 2.0 * PI, 2.0 * PI],
        &[0.5, 0.5, 0.0],
    )?);
    let r2 = radius * radius;
    let metric = MetricField::from_fn(grid.clone(), |x, g| {
        let sp = x[0].sin();
        let st = x[1].sin();
        for c in g.iter_mut() {
            *c = 0.0;
        }
        g[0] = r2;
        g[4] = r2 * sp * sp;
        g[8] = r2 * sp * sp * st * st;
    })?;
    let probe_nodes = band_nodes(&grid, &[0, 1], PI / 4.0, 3.0 * PI / 4.0);
    Ok(GridRealization {
        metric,
        cover: 4.0,
        probe_nodes,
        jet_only: false,
    })
}

fn product_chart(
    radius: f64,
    circle_length: f64,
    res: usize,
) -> Result<GridRealization, GeometryError> {
    let grid = Arc::new(ChartGrid::with_offsets(
        &[res, 8, 8],
        &[2.0 * PI, 2.0 * PI, circle_length],
        &[0.5, 0.0, 0.0],
    )?);
    let r2 = radius * radius;
    let metric = MetricField::from_fn(grid.clone(), |x, g| {
        let s = x[0].sin();
        for c in g.iter_mut() {
            *c = 0.0;
        }
        g[0] = r2;
        g[4] = r2 * s * s;
        g[8] = 1.0;
    })?;
    let probe_nodes = band_nodes(&grid, &[0], PI / 4.0, 3.0 * PI / 4.0);
    Ok(GridRealization {
        metric,
        cover: 2.0,
        probe_nodes,
        jet_only: false,
    })
}

/// Sine-shear chart for the nil family: `dx^2 + dy^2 + eps^2 (dz - s dy)^2`
/// with `s(x) = (L/2pi) sin(2pi x / L)`. At the slices where `s = 0` and
/// `s' = +-1, s'' = 0` the second jet matches the homogeneous nil metric
/// with structure constant `eps`, so curvature there is the model's.
fn nil_shear_chart(
    epsilon: f64,
    periods: &[f64; 3],
    res: usize,
) -> Result<GridRealization, GeometryError> {
    let grid = Arc::new(ChartGrid::new(&[res, res.min(16).max(4), res.min(16).max(4)], periods)?);
    let lx = periods[0];
    let scale = lx / (2.0 * PI);
    let e2 = epsilon * epsilon;
    let metric = MetricField::from_fn(grid.clone(), |x, g| {
        let s = scale * (x[0] / scale).sin();
        for c in g.iter_mut() {
            *c = 0.0;
        }
        g[0] = 1.0;
        g[4] = 1.0 + e2 * s * s;
        g[5] = -e2 * s;
        g[7] = -e2 * s;
        g[8] = e2;
    })?;
    // Probe where x = 0 (s = 0, s' = 1): the x-index-0 column of nodes.
    let mut probe_nodes = Vec::new();
    let mut coords = [0usize; MAX_DIM];
    for node in 0..grid.node_count() {
        grid.decode(node, &mut coords);
        if coords[0] == 0 {
            probe_nodes.push(node);
        }
    }
    Ok(GridRealization {
        metric,
        cover: 1.0,
        probe_nodes,
        jet_only: true,
    })
}

/// Perturbed flat torus: `g = id + amplitude * S(x)` with `S` a seeded sum
/// of axis-aligned sine modes of the given integer frequency (two modes per
/// component, off-diagonal entries damped to keep the field safely SPD).
/// Deterministic for a fixed seed.
pub fn perturbed_torus(
    dim: usize,
    nodes: usize,
    period: f64,
    amplitude: f64,
    frequency: u32,
    seed: u64,
) -> Result<MetricField, GeometryError> {
    use rand::Rng;
    if !(amplitude >= 0.0) || amplitude > 0.3 {
        return Err(GeometryError::InvalidChart(format!(
            "perturbation amplitude {amplitude} outside [0, 0.3]"
        )));
    }
    let grid = Arc::new(ChartGrid::new(&vec![nodes; dim], &vec![period; dim])?);
    let mut rng = crate::util::rng(crate::util::sub_seed(seed, "perturbed-torus"));
    let wave = 2.0 * PI * frequency as f64 / period;
    // (i, j, axis, phase, weight) per mode
    let mut modes = Vec::new();
    for i in 0..dim {
        for j in i..dim {
            for _rep in 0..2 {
                let axis = (rng.gen::<u64>() as usize) % dim;
                let phase = rng.gen::<f64>() * 2.0 * PI;
                let weight = if i == j { 0.5 } else { 0.15 };
                modes.push((i, j, axis, phase, weight));
            }
        }
    }
    MetricField::from_fn(grid, |x, g| {
        for c in g.iter_mut() {
            *c = 0.0;
        }
        for i in 0..dim {
            g[i * dim + i] = 1.0;
        }
        for &(i, j, axis, phase, weight) in &modes {
            let v = amplitude * weight * (wave * x[axis] + phase).sin();
            g[i * dim + j] += v;
            if i != j {
                g[j * dim + i] += v;
            }
        }
    })
}

fn band_nodes(grid: &Arc<ChartGrid>, axes: &[usize], lo: f64, hi: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut x = [0.0; MAX_DIM];
    for node in 0..grid.node_count() {
        grid.position(node, &mut x);
        if axes.iter().all(|&a| x[a] > lo && x[a] < hi) {
            out.push(node);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn flat_torus_is_stationary_with_zero_curvature() {
        let m = ModelMetric::FlatTorus {
            periods: vec![1.0, 2.0, 3.0],
        };
        let c = m.exact_curvature().unwrap();
        assert_eq!(c.rm_norm, 0.0);
        assert_eq!(c.ric_norm, 0.0);
        let f = m.exact_flow().unwrap();
        assert_eq!(f.t_blowup, f64::INFINITY);
        assert_eq!(f.metric_at(5.0).unwrap(), m);
    }

    #[test]
    fn sphere_curvature_closed_forms() {
        let m = ModelMetric::RoundSphere {
            dim: 3,
            radius: 2.0,
        };
        let c = m.exact_curvature().unwrap();
        for k in &c.frame_sectional {
            assert_abs_diff_eq!(*k, 0.25, epsilon = 1e-15);
        }
        for r in &c.ricci_eigenvalues {
            assert_abs_diff_eq!(*r, 0.5, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(c.scalar, 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c.rm_norm, (12.0f64).sqrt() * 0.25, epsilon = 1e-15);
    }

    #[test]
    fn sphere_flow_closed_form_and_blowup() {
        let m = ModelMetric::RoundSphere {
            dim: 2,
            radius: 1.0,
        };
        let f = m.exact_flow().unwrap();
        assert_abs_diff_eq!(f.t_blowup, 0.5, epsilon = 1e-15);
        let at = f.metric_at(0.3).unwrap();
        match at {
            ModelMetric::RoundSphere { radius, .. } => {
                assert_abs_diff_eq!(radius * radius, 0.4, epsilon = 1e-15);
            }
            _ => unreachable!(),
        }
        assert!(f.metric_at(0.5).is_err());
    }

    #[test]
    fn exact_flow_satisfies_the_flow_equation_on_spheres() {
        // d(r^2)/dt from the trajectory vs -2 * Ricci coefficient.
        let m = ModelMetric::RoundSphere {
            dim: 3,
            radius: 1.5,
        };
        let f = m.exact_flow().unwrap();
        let dt = 1e-5;
        let t = 0.2;
        let r2 = |t: f64| match f.metric_at(t).unwrap() {
            ModelMetric::RoundSphere { radius, .. } => radius * radius,
            _ => unreachable!(),
        };
        let deriv = (r2(t + dt) - r2(t - dt)) / (2.0 * dt);
        // Ric = (n-1)/r^2 * g: the coefficient on the unit round metric is
        // (n-1), so d(r^2)/dt = -2 (n-1).
        assert_abs_diff_eq!(deriv, -4.0, epsilon = 1e-10);
    }

    #[test]
    fn round_milnor_matches_sphere_after_identification() {
        // lambda = (l, l, l) is the round 3-sphere of radius sqrt(l).
        let l = 2.3;
        let m = ModelMetric::MilnorSu2 {
            lambda: [l, l, l],
        };
        let c = m.exact_curvature().unwrap();
        let s = ModelMetric::RoundSphere {
            dim: 3,
            radius: l.sqrt(),
        }
        .exact_curvature()
        .unwrap();
        for (a, b) in c.ricci_eigenvalues.iter().zip(&s.ricci_eigenvalues) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-13);
        }
        for (a, b) in c.frame_sectional.iter().zip(&s.frame_sectional) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-13);
        }
        // Flow: round case collapses linearly, dl/dt = -4.
        let f = m.exact_flow().unwrap();
        let at = match f.metric_at(0.1).unwrap() {
            ModelMetric::MilnorSu2 { lambda } => lambda,
            _ => unreachable!(),
        };
        for v in at {
            assert_abs_diff_eq!(v, l - 0.4, epsilon = 1e-10);
        }
        assert!((f.t_blowup - l / 4.0).abs() < 2e-3 * l);
    }

    #[test]
    fn berger_ricci_eigenvalues() {
        // lambda = (e^2, 1, 1): principal Ricci curvatures
        // (2 e^2, 4 - 2 e^2, 4 - 2 e^2).
        let e: f64 = 0.3;
        let r = su2_ricci_eigenvalues(&[e * e, 1.0, 1.0]);
        assert_abs_diff_eq!(r[0], 2.0 * e * e, epsilon = 1e-12);
        assert_abs_diff_eq!(r[1], 4.0 - 2.0 * e * e, epsilon = 1e-12);
        assert_abs_diff_eq!(r[2], 4.0 - 2.0 * e * e, epsilon = 1e-12);
        // Sectional range [e^2, 4 - 3 e^2] attained on frame planes.
        let s = su2_summary(&[e * e, 1.0, 1.0]);
        let kmin = s.frame_sectional.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(kmin, e * e, epsilon = 1e-12);
        assert_abs_diff_eq!(s.max_sectional(), 4.0 - 3.0 * e * e, epsilon = 1e-12);
    }

    #[test]
    fn milnor_flow_preserves_parameter_order() {
        let l0 = [3.0, 2.0, 1.0];
        let f = ModelMetric::MilnorSu2 { lambda: l0 }.exact_flow().unwrap();
        let mut t = 0.0;
        while t < 0.15 {
            let l = match f.metric_at(t).unwrap() {
                ModelMetric::MilnorSu2 { lambda } => lambda,
                _ => unreachable!(),
            };
            assert!(l[0] >= l[1] - 1e-12 && l[1] >= l[2] - 1e-12, "order broken at t={t}: {l:?}");
            t += 0.03;
        }
    }

    #[test]
    fn membership_cards() {
        // Sphere with r^2 >= n-1 is a member: sup|Ric| = (n-1)/r^2 <= 1.
        let m = ModelMetric::RoundSphere {
            dim: 3,
            radius: (2.0f64).sqrt(),
        };
        let card = m.membership_card(1.0).unwrap();
        assert_abs_diff_eq!(card.sup_ric, 1.0, epsilon = 1e-15);
        assert_eq!(card.conj, ConjRadius::Exact(PI * (2.0f64).sqrt()));
        assert!(card.member);

        let t = ModelMetric::FlatTorus {
            periods: vec![1.0, 1.0],
        };
        let card = t.membership_card(10.0).unwrap();
        assert_eq!(card.sup_ric, 0.0);
        assert_eq!(card.conj, ConjRadius::Infinite);
        assert!(card.member);

        // Collapsing nil members: bounded Ricci, inj -> 0, conj -> infinity.
        let mut prev_inj = f64::INFINITY;
        for eps in [0.5, 0.25, 0.125] {
            let h = ModelMetric::HeisenbergNil {
                epsilon: eps,
                periods: [1.0, 1.0, 1.0],
            };
            let card = h.membership_card(1.0).unwrap();
            assert_abs_diff_eq!(card.sup_ric, eps * eps / 2.0, epsilon = 1e-15);
            assert!(card.sup_ric <= 1.0);
            let inj = card.inj_upper.unwrap();
            assert!(inj < prev_inj);
            prev_inj = inj;
            // conj bound = pi / sqrt(eps^2/4) = 2 pi / eps grows.
            assert_abs_diff_eq!(
                card.conj.certified_lower(),
                2.0 * PI / eps,
                epsilon = 1e-12
            );
            assert!(card.member);
        }
    }

    #[test]
    fn scaling_covariance_on_spheres() {
        let m = ModelMetric::RoundSphere {
            dim: 2,
            radius: 1.0,
        };
        let c = 4.0;
        let scaled = m.scaled(c).unwrap();
        let a = m.exact_curvature().unwrap();
        let b = scaled.exact_curvature().unwrap();
        assert_abs_diff_eq!(b.rm_norm, a.rm_norm / c, epsilon = 1e-15);
        assert_abs_diff_eq!(
            scaled.exact_flow().unwrap().t_blowup,
            c * m.exact_flow().unwrap().t_blowup,
            epsilon = 1e-12
        );
    }

    #[test]
    fn nil_flow_reduction_is_rejected() {
        let h = ModelMetric::HeisenbergNil {
            epsilon: 0.5,
            periods: [1.0, 1.0, 1.0],
        };
        assert!(matches!(
            h.exact_flow(),
            Err(GeometryError::UnsupportedFamily(_))
        ));
    }
}
