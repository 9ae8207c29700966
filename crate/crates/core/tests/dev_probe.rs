// Temporary measurement harness (deleted before finalizing): prints the
// discretization errors that oracle tolerances get pinned from.

use riccilab_core::curvature;
use riccilab_core::models::ModelMetric;

#[test]
#[ignore]
fn measure_sphere2_sectional_error() {
    for res in [2048usize, 4096, 8192, 16384] {
        let m = ModelMetric::RoundSphere { dim: 2, radius: 1.0 };
        let real = m.curvature_chart(res).unwrap();
        let g = &real.metric;
        let aux = curvature::metric_aux(g).unwrap();
        let gamma = curvature::christoffel(g, &aux);
        let riem = curvature::riemann_lowered(g, &gamma);
        let mut worst = 0.0f64;
        for &node in &real.probe_nodes {
            let k = curvature::sectional_coordinate_plane(g, &riem, node, 0, 1);
            worst = worst.max((k - 1.0).abs());
        }
        println!("res {res}: worst sectional error {worst:.3e} over {} nodes", real.probe_nodes.len());
    }
}

#[test]
#[ignore]
fn measure_heisenberg_ricci_error() {
    for res in [32usize, 64, 128] {
        let eps = 0.5;
        let m = ModelMetric::HeisenbergNil { epsilon: eps, periods: [2.0 * std::f64::consts::PI; 3] };
        let real = m.curvature_chart(res).unwrap();
        let g = &real.metric;
        let aux = curvature::metric_aux(g).unwrap();
        let gamma = curvature::christoffel(g, &aux);
        let ric = curvature::ricci_tensor(g, &gamma);
        let want = m.exact_curvature().unwrap().ricci_eigenvalues;
        let mut worst = 0.0f64;
        for &node in &real.probe_nodes {
            let mut eigs = [0.0; riccilab_core::linalg::MAX_DIM];
            riccilab_core::linalg::generalized_eigenvalues(ric.at(node), g.at(node), 3, &mut eigs)
                .unwrap();
            let mut sorted = want.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for i in 0..3 {
                worst = worst.max((eigs[i] - sorted[i]).abs());
            }
        }
        println!("res {res}: worst nil ricci-eig error {worst:.3e}");
    }
}

#[test]
#[ignore]
fn measure_milnor_jet_error() {
    for res in [32usize, 64, 128] {
        let m = ModelMetric::MilnorSu2 { lambda: [1.5, 1.0, 0.7] };
        let real = m.jet_chart(res).unwrap();
        let g = &real.metric;
        let aux = curvature::metric_aux(g).unwrap();
        let gamma = curvature::christoffel(g, &aux);
        let ric = curvature::ricci_tensor(g, &gamma);
        let mut want = m.exact_curvature().unwrap().ricci_eigenvalues;
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let node = real.probe_nodes[0];
        let mut eigs = [0.0; riccilab_core::linalg::MAX_DIM];
        riccilab_core::linalg::generalized_eigenvalues(ric.at(node), g.at(node), 3, &mut eigs)
            .unwrap();
        let mut worst = 0.0f64;
        for i in 0..3 {
            worst = worst.max((eigs[i] - want[i]).abs());
        }
        println!("res {res}: milnor jet ricci-eig error {worst:.3e} (eigs {:?} want {:?})", &eigs[..3], want);
    }
}

#[test]
#[ignore]
fn measure_product_mixed_plane() {
    for res in [512usize, 1024] {
        let m = ModelMetric::ProductSphereCircle { radius: 1.3, circle_length: 4.0 };
        let real = m.curvature_chart(res).unwrap();
        let g = &real.metric;
        let aux = curvature::metric_aux(g).unwrap();
        let gamma = curvature::christoffel(g, &aux);
        let riem = curvature::riemann_lowered(g, &gamma);
        let mut worst_sphere = 0.0f64;
        let mut worst_mixed = 0.0f64;
        let want = 1.0 / (1.3f64 * 1.3);
        for &node in real.probe_nodes.iter().step_by(3) {
            let ks = curvature::sectional_coordinate_plane(g, &riem, node, 0, 1);
            let km1 = curvature::sectional_coordinate_plane(g, &riem, node, 0, 2);
            let km2 = curvature::sectional_coordinate_plane(g, &riem, node, 1, 2);
            worst_sphere = worst_sphere.max((ks - want).abs());
            worst_mixed = worst_mixed.max(km1.abs()).max(km2.abs());
        }
        println!("res {res}: product sphere-plane err {worst_sphere:.3e}, mixed-plane err {worst_mixed:.3e}");
    }
}

#[test]
#[ignore]
fn measure_perturbed_torus_curvature() {
    use riccilab_core::models::perturbed_torus;
    for (a, freq, nodes) in [
        (0.05, 4u32, 24usize),
        (0.1, 4, 24),
        (0.2, 4, 24),
        (0.2, 4, 48),
        (0.1, 2, 24),
        (0.2, 2, 24),
        (0.05, 2, 16),
        (0.1, 2, 16),
        (0.2, 2, 16),
    ] {
        let g = perturbed_torus(3, nodes, 2.0 * std::f64::consts::PI, a, freq, 42).unwrap();
        let b = curvature::bundle(&g).unwrap();
        println!(
            "a={a} freq={freq} nodes={nodes}: sup|Ric|={:.4}, sup|Rm|={:.4}",
            b.sup_ric, b.sup_rm
        );
    }
}

#[test]
#[ignore]
fn measure_sobolev_flat_ball() {
    use riccilab_core::metric::MetricField;
    use riccilab_core::patch::PatchDomain;
    use riccilab_core::probes::sobolev_constant_on_patch;
    use std::sync::Arc;
    for nodes in [16usize, 20, 24, 28] {
        let grid = Arc::new(riccilab_core::grid::ChartGrid::new(&[nodes; 3], &[2.5; 3]).unwrap());
        let g = MetricField::euclidean(grid.clone());
        let aux = curvature::metric_aux(&g).unwrap();
        let center = grid.encode(&[nodes / 2; 3]);
        let patch = PatchDomain::chart_ball(grid, center, 1.0).unwrap();
        let cs = sobolev_constant_on_patch(&g, &aux, &patch, 3).unwrap();
        println!("nodes {nodes}: C_S estimate {cs:.6}");
    }
    // radial 1-D oracle at several resolutions
    for nr in [50usize, 100, 200, 400] {
        let r = 1.0f64;
        let h = r / nr as f64;
        let n = 3.0f64;
        let qs = 2.0 * n / (n - 2.0);
        let omega = 4.0 * std::f64::consts::PI;
        let s_at = |j: usize| (j as f64 + 0.5) * h;
        // maximize Q over radial profiles vanishing at s = r
        let mut f: Vec<f64> = (0..nr).map(|j| (-(s_at(j) / 0.3f64).powi(2)).exp()).collect();
        let energy = |f: &[f64]| -> f64 {
            let mut e = 0.0;
            for j in 0..nr {
                let fp = if j + 1 < nr { f[j + 1] } else { 0.0 };
                let sj = (j as f64 + 1.0) * h; // face position
                e += ((fp - f[j]) / h).powi(2) * sj * sj * h;
            }
            omega * e
        };
        let norm = |f: &[f64]| -> f64 {
            let mut m = 0.0;
            for j in 0..nr {
                m += f[j].abs().powf(qs) * s_at(j) * s_at(j) * h;
            }
            (omega * m).powf(1.0 / qs)
        };
        let q_of = |f: &[f64]| norm(f) / energy(f).sqrt();
        let mut qv = q_of(&f);
        let mut alpha = 0.1;
        for _ in 0..8000 {
            let e = energy(&f);
            let nm = norm(&f);
            let nq = nm.powf(qs);
            // gradient of log Q
            let mut grad = vec![0.0; nr];
            for j in 0..nr {
                let w = omega * s_at(j) * s_at(j) * h;
                grad[j] = f[j].abs().powf(qs - 1.0) * f[j].signum() * w / nq;
            }
            // minus A f / E with A the radial stiffness
            for j in 0..nr {
                let sj1 = (j as f64 + 1.0) * h;
                let sj0 = j as f64 * h;
                let fp = if j + 1 < nr { f[j + 1] } else { 0.0 };
                let fm = if j > 0 { f[j - 1] } else { f[0] };
                let af = omega * (-(fp - f[j]) / h * sj1 * sj1 + (f[j] - fm) / h * sj0 * sj0) / h * h;
                grad[j] -= af / e;
            }
            let gn: f64 = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gn < 1e-15 { break; }
            let fs: f64 = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            let cand: Vec<f64> = (0..nr).map(|j| f[j] + alpha * fs * grad[j] / gn).collect();
            let qc = q_of(&cand);
            if qc > qv { f = cand; qv = qc; alpha = (alpha * 1.2).min(0.5); } else { alpha *= 0.5; if alpha < 1e-12 { break; } }
        }
        println!("radial nr {nr}: C_S oracle {qv:.6}");
    }
}

fn radial_sobolev_oracle(r: f64, h: f64) -> f64 {
    // 1-D reduction of the quotient over radial profiles vanishing at s=r,
    // midpoint radial cells of width h, binomial smoothing like the 3-D
    // estimator, projected gradient ascent.
    let nr = (r / h).round() as usize;
    let n = 3.0f64;
    let qs = 2.0 * n / (n - 2.0);
    let omega = 4.0 * std::f64::consts::PI;
    let s_at = |j: usize| (j as f64 + 0.5) * h;
    let smooth = |f: &mut Vec<f64>| {
        let mut next = vec![0.0; f.len()];
        for j in 0..f.len() {
            let fm = if j > 0 { f[j - 1] } else { f[0] }; // reflect at origin
            let fp = if j + 1 < f.len() { f[j + 1] } else { 0.0 };
            next[j] = 0.25 * fm + 0.5 * f[j] + 0.25 * fp;
        }
        *f = next;
    };
    let energy = |f: &[f64]| -> f64 {
        let mut e = 0.0;
        for j in 0..nr {
            let fp = if j + 1 < nr { f[j + 1] } else { 0.0 };
            let sj = (j as f64 + 1.0) * h;
            e += ((fp - f[j]) / h).powi(2) * sj * sj * h;
        }
        omega * e
    };
    let norm = |f: &[f64]| -> f64 {
        let mut m = 0.0;
        for j in 0..nr {
            m += f[j].abs().powf(qs) * s_at(j) * s_at(j) * h;
        }
        (omega * m).powf(1.0 / qs)
    };
    let q_of = |f: &[f64]| {
        let e = energy(f);
        if e <= 0.0 { 0.0 } else { norm(f) / e.sqrt() }
    };
    let mut best = 0.0f64;
    for w0 in [0.25 * r, 0.4 * r, 0.6 * r] {
        let mut f: Vec<f64> = (0..nr).map(|j| (-(s_at(j) / w0).powi(2)).exp()).collect();
        smooth(&mut f);
        let mut qv = q_of(&f);
        let mut alpha = 0.1f64;
        for _ in 0..6000 {
            let e = energy(&f);
            let nm = norm(&f);
            let nq = nm.powf(qs);
            let mut grad = vec![0.0; nr];
            for j in 0..nr {
                let w = omega * s_at(j) * s_at(j) * h;
                grad[j] = f[j].abs().powf(qs - 1.0) * f[j].signum() * w / nq;
            }
            for j in 0..nr {
                let sj1 = (j as f64 + 1.0) * h;
                let sj0 = j as f64 * h;
                let fp = if j + 1 < nr { f[j + 1] } else { 0.0 };
                let fm = if j > 0 { f[j - 1] } else { f[0] };
                let af = omega * (-(fp - f[j]) * sj1 * sj1 + (f[j] - fm) * sj0 * sj0) / h;
                grad[j] -= af / e;
            }
            let gn: f64 = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gn < 1e-15 { break; }
            let fs: f64 = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut improved = false;
            for _bt in 0..10 {
                let mut cand: Vec<f64> = (0..nr).map(|j| f[j] + alpha * fs * grad[j] / gn).collect();
                smooth(&mut cand);
                let qc = q_of(&cand);
                if qc > qv {
                    f = cand; qv = qc; alpha = (alpha * 1.2).min(0.5); improved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !improved { break; }
        }
        best = best.max(qv);
    }
    best
}

#[test]
#[ignore]
fn measure_sobolev_matched_radial() {
    use riccilab_core::metric::MetricField;
    use riccilab_core::patch::PatchDomain;
    use riccilab_core::probes::sobolev_constant_on_patch;
    use std::sync::Arc;
    for nodes in [16usize, 20, 24] {
        let extent = 2.5;
        let h = extent / nodes as f64;
        let grid = Arc::new(riccilab_core::grid::ChartGrid::new(&[nodes; 3], &[extent; 3]).unwrap());
        let g = MetricField::euclidean(grid.clone());
        let aux = curvature::metric_aux(&g).unwrap();
        let center = grid.encode(&[nodes / 2; 3]);
        let patch = PatchDomain::chart_ball(grid, center, 1.0).unwrap();
        let cs = sobolev_constant_on_patch(&g, &aux, &patch, 3).unwrap();
        let oracle = radial_sobolev_oracle(1.0, h);
        println!("nodes {nodes} (h={h:.4}): 3d {cs:.5} radial {oracle:.5} ratio {:.4}", cs / oracle);
    }
}
