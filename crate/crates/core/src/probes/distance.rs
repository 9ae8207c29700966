//! Distances, diameter and excess on grid metrics.
//!
//! The workhorse is Dijkstra on the king-move grid graph (all `3^n - 1`
//! neighbor offsets) with edge lengths `sqrt(dx^T g_avg dx)`; graph
//! distances upper-bound the true ones. Extremal pairs are then tightened
//! by relaxing the extracted polyline (local curve shortening with
//! interpolated metric), which removes most of the king-metric bias while
//! staying an upper bound on the pair distance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::ProbeError;
use crate::linalg::MAX_DIM;
use crate::metric::MetricField;
use crate::util;

/// Dijkstra result from one source.
pub struct DistanceField {
    pub source: usize,
    pub dist: Vec<f64>,
    prev: Vec<u32>,
}

struct HeapEntry {
    dist: f64,
    node: u32,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.dist == other.dist && self.node == other.node
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, ties broken by node index for determinism
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// All king-move offsets (excluding the origin) with their chart
/// displacement vectors.
fn king_moves(g: &MetricField) -> Vec<(Vec<isize>, Vec<f64>)> {
    let n = g.dim();
    let h = g.grid().spacing();
    let mut moves = Vec::new();
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut rem = code;
        let mut offs = vec![0isize; n];
        let mut dx = vec![0.0; n];
        let mut zero = true;
        for a in 0..n {
            let d = (rem % 3) as isize - 1;
            rem /= 3;
            offs[a] = d;
            dx[a] = d as f64 * h[a];
            if d != 0 {
                zero = false;
            }
        }
        if !zero {
            moves.push((offs, dx));
        }
    }
    moves
}

fn apply_move(g: &MetricField, node: usize, offs: &[isize]) -> usize {
    let mut out = node;
    for (a, &d) in offs.iter().enumerate() {
        if d != 0 {
            out = g.grid().offset(out, a, d);
        }
    }
    out
}

/// Dijkstra from `source`, optionally stopping expansion beyond `limit`.
pub fn dijkstra_limited(g: &MetricField, source: usize, limit: f64) -> DistanceField {
    let count = g.grid().node_count();
    let n = g.dim();
    let moves = king_moves(g);
    let mut dist = vec![f64::INFINITY; count];
    let mut prev = vec![u32::MAX; count];
    let mut done = vec![false; count];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapEntry {
        dist: 0.0,
        node: source as u32,
    });
    while let Some(HeapEntry { dist: d, node }) = heap.pop() {
        let node = node as usize;
        if done[node] {
            continue;
        }
        done[node] = true;
        if d > limit {
            continue;
        }
        let ga = g.at(node);
        for (offs, dx) in &moves {
            let other = apply_move(g, node, offs);
            if done[other] {
                continue;
            }
            let gb = g.at(other);
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += 0.5 * (ga[i * n + j] + gb[i * n + j]) * dx[i] * dx[j];
                }
            }
            let nd = d + s.sqrt();
            if nd < dist[other] {
                dist[other] = nd;
                prev[other] = node as u32;
                heap.push(HeapEntry {
                    dist: nd,
                    node: other as u32,
                });
            }
        }
    }
    DistanceField {
        source,
        dist,
        prev,
    }
}

pub fn dijkstra(g: &MetricField, source: usize) -> DistanceField {
    dijkstra_limited(g, source, f64::INFINITY)
}

impl DistanceField {
    /// Extracts the graph shortest path to `target` as chart points.
    pub fn path_to(&self, g: &MetricField, target: usize) -> Vec<Vec<f64>> {
        let n = g.dim();
        let mut nodes = vec![target];
        let mut cur = target;
        while cur != self.source {
            let p = self.prev[cur];
            if p == u32::MAX {
                break;
            }
            cur = p as usize;
            nodes.push(cur);
        }
        nodes.reverse();
        nodes
            .into_iter()
            .map(|node| {
                let mut x = [0.0; MAX_DIM];
                g.grid().position(node, &mut x);
                x[..n].to_vec()
            })
            .collect()
    }
}

/// Length of a polyline with the metric interpolated at segment midpoints.
pub fn polyline_length(g: &MetricField, pts: &[Vec<f64>], closed: bool) -> f64 {
    let n = g.dim();
    let grid = g.grid();
    let mut gm = [0.0; MAX_DIM * MAX_DIM];
    let mut total = 0.0;
    let count = if closed { pts.len() } else { pts.len() - 1 };
    let mut d = [0.0; MAX_DIM];
    for k in 0..count {
        let a = &pts[k];
        let b = &pts[(k + 1) % pts.len()];
        grid.wrap_delta(a, b, &mut d);
        let mut mid: Vec<f64> = (0..n).map(|c| a[c] + 0.5 * d[c]).collect();
        grid.wrap_point(&mut mid);
        g.interpolate(&mid, &mut gm);
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += gm[i * n + j] * d[i] * d[j];
            }
        }
        total += s.sqrt();
    }
    total
}

/// Local curve shortening: resamples to roughly uniform segments, then
/// sweeps vertex-wise descent on the two adjacent segment lengths. The
/// result never shrinks below the true geodesic distance of the endpoints
/// (it is still a path), so relaxed lengths remain certified upper bounds.
pub fn relax_polyline(
    g: &MetricField,
    pts: &[Vec<f64>],
    closed: bool,
    sweeps: usize,
) -> (Vec<Vec<f64>>, f64) {
    let n = g.dim();
    let grid = g.grid().clone();
    // Resample to segments of about one grid spacing.
    let target_seg = grid.min_spacing();
    let mut pts = resample(g, pts, closed, target_seg);
    let h0 = grid.min_spacing();
    let mut d = [0.0; MAX_DIM];
    for _sweep in 0..sweeps {
        let count = pts.len();
        let first = if closed { 0 } else { 1 };
        let last = if closed { count } else { count - 1 };
        let mut moved = 0.0f64;
        for idx in first..last {
            let prev = pts[(idx + count - 1) % count].clone();
            let next = pts[(idx + 1) % count].clone();
            let local = |v: &[f64]| -> f64 {
                seg_len(g, &prev, v, &mut [0.0; MAX_DIM]) + seg_len(g, v, &next, &mut [0.0; MAX_DIM])
            };
            let mut v = pts[idx].clone();
            let base = local(&v);
            // numeric gradient
            let mut grad = vec![0.0; n];
            let eps = 0.05 * h0;
            for c in 0..n {
                let mut vp = v.clone();
                vp[c] += eps;
                let mut vm = v.clone();
                vm[c] -= eps;
                grad[c] = (local(&vp) - local(&vm)) / (2.0 * eps);
            }
            let gnorm: f64 = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
            if gnorm < 1e-14 {
                continue;
            }
            let mut alpha = 0.25 * h0 / gnorm.max(1e-30);
            for _bt in 0..6 {
                let cand: Vec<f64> = (0..n).map(|c| v[c] - alpha * grad[c]).collect();
                if local(&cand) < base {
                    v = cand;
                    break;
                }
                alpha *= 0.4;
            }
            grid.wrap_delta(&pts[idx], &v, &mut d);
            moved = moved.max(d[..n].iter().map(|x| x.abs()).fold(0.0, f64::max));
            let mut vw = v;
            grid.wrap_point(&mut vw);
            pts[idx] = vw;
        }
        if moved < 1e-6 * h0 {
            break;
        }
    }
    let len = polyline_length(g, &pts, closed);
    (pts, len)
}

fn seg_len(g: &MetricField, a: &[f64], b: &[f64], scratch: &mut [f64; MAX_DIM]) -> f64 {
    let n = g.dim();
    let grid = g.grid();
    grid.wrap_delta(a, b, scratch);
    let mut mid: Vec<f64> = (0..n).map(|c| a[c] + 0.5 * scratch[c]).collect();
    grid.wrap_point(&mut mid);
    let mut gm = [0.0; MAX_DIM * MAX_DIM];
    g.interpolate(&mid, &mut gm);
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += gm[i * n + j] * scratch[i] * scratch[j];
        }
    }
    s.sqrt()
}

fn resample(g: &MetricField, pts: &[Vec<f64>], closed: bool, target: f64) -> Vec<Vec<f64>> {
    let n = g.dim();
    let grid = g.grid();
    let mut out = vec![pts[0].clone()];
    let count = if closed { pts.len() } else { pts.len() - 1 };
    let mut d = [0.0; MAX_DIM];
    for k in 0..count {
        let a = pts[k].clone();
        let b = &pts[(k + 1) % pts.len()];
        grid.wrap_delta(&a, b, &mut d);
        let chord: f64 = d[..n].iter().map(|x| x * x).sum::<f64>().sqrt();
        let pieces = (chord / target).ceil().max(1.0) as usize;
        for p in 1..=pieces {
            if closed && k == count - 1 && p == pieces {
                break; // do not duplicate the first point
            }
            let f = p as f64 / pieces as f64;
            let mut q: Vec<f64> = (0..n).map(|c| a[c] + f * d[c]).collect();
            grid.wrap_point(&mut q);
            out.push(q);
        }
    }
    out
}

/// Diameter estimate: graph bound plus the relaxed length of the extremal
/// pair's path.
#[derive(Debug, Clone)]
pub struct DiameterEstimate {
    /// Relaxed length of the extremal pair (the reported diameter).
    pub relaxed: f64,
    /// King-graph distance of the extremal pair (upper-biased certificate).
    pub graph_bound: f64,
    pub near_node: usize,
    pub far_node: usize,
}

/// Diameter probe: Dijkstra from a low-discrepancy source sample (plus a
/// two-sweep refinement from the first farthest point), then geodesic
/// relaxation of the maximal pair.
pub fn diameter(g: &MetricField, sample_size: usize, seed: u64) -> Result<DiameterEstimate, ProbeError> {
    let grid = g.grid().clone();
    let mut sources = vec![0usize];
    for p in util::quasi_points(util::sub_seed(seed, "diameter"), sample_size.saturating_sub(1), grid.dim()) {
        let x: Vec<f64> = p.iter().zip(grid.periods()).map(|(u, l)| u * l).collect();
        sources.push(grid.nearest_node(&x));
    }
    sources.dedup();
    let mut best = (0.0f64, 0usize, 0usize);
    let mut first_far = None;
    for (k, &s) in sources.iter().enumerate() {
        let field = dijkstra(g, s);
        let (far, dist) = field
            .dist
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |acc, (i, &d)| {
                if d.is_finite() && d > acc.1 {
                    (i, d)
                } else {
                    acc
                }
            });
        if k == 0 {
            first_far = Some(far);
        }
        if dist > best.0 {
            best = (dist, s, far);
        }
    }
    // Two-sweep: search again from the farthest point of the first sweep.
    if let Some(fp) = first_far {
        let field = dijkstra(g, fp);
        let (far, dist) = field
            .dist
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |acc, (i, &d)| {
                if d.is_finite() && d > acc.1 {
                    (i, d)
                } else {
                    acc
                }
            });
        if dist > best.0 {
            best = (dist, fp, far);
        }
    }
    let field = dijkstra(g, best.1);
    let path = field.path_to(g, best.2);
    let (_, relaxed) = relax_polyline(g, &path, false, 60);
    Ok(DiameterEstimate {
        relaxed,
        graph_bound: best.0,
        near_node: best.1,
        far_node: best.2,
    })
}

/// Relaxed point-to-point distance.
pub fn distance_between(g: &MetricField, a: usize, b: usize) -> f64 {
    let field = dijkstra(g, a);
    let path = field.path_to(g, b);
    if path.len() < 2 {
        return 0.0;
    }
    let (_, relaxed) = relax_polyline(g, &path, false, 60);
    relaxed
}

/// Excess estimate: `min_{p,q} max_x (d(p,x) + d(x,q) - d(p,q))` over
/// sampled pairs, with the three distances of the arg-max point relaxed.
#[derive(Debug, Clone)]
pub struct ExcessEstimate {
    pub value: f64,
    pub pair: (usize, usize),
    pub witness: usize,
}

pub fn excess(g: &MetricField, pair_count: usize, seed: u64) -> Result<ExcessEstimate, ProbeError> {
    let grid = g.grid().clone();
    let mut ps = vec![0usize];
    for p in util::quasi_points(util::sub_seed(seed, "excess"), pair_count.max(1) - 1, grid.dim()) {
        let x: Vec<f64> = p.iter().zip(grid.periods()).map(|(u, l)| u * l).collect();
        ps.push(grid.nearest_node(&x));
    }
    ps.dedup();
    let mut best: Option<ExcessEstimate> = None;
    for &p in &ps {
        let dp = dijkstra(g, p);
        // pair with the farthest point (near-antipodal pairs minimize
        // excess on the model geometries)
        let (q, dpq_graph) = dp
            .dist
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |acc, (i, &d)| {
                if d.is_finite() && d > acc.1 {
                    (i, d)
                } else {
                    acc
                }
            });
        let dq = dijkstra(g, q);
        let mut witness = p;
        let mut emax = f64::NEG_INFINITY;
        for node in 0..grid.node_count() {
            let e = dp.dist[node] + dq.dist[node] - dpq_graph;
            if e.is_finite() && e > emax {
                emax = e;
                witness = node;
            }
        }
        // relax the three legs at the witness
        let d1 = {
            let path = dp.path_to(g, witness);
            if path.len() < 2 { 0.0 } else { relax_polyline(g, &path, false, 40).1 }
        };
        let d2 = {
            let path = dq.path_to(g, witness);
            if path.len() < 2 { 0.0 } else { relax_polyline(g, &path, false, 40).1 }
        };
        let d3 = {
            let path = dp.path_to(g, q);
            if path.len() < 2 { 0.0 } else { relax_polyline(g, &path, false, 40).1 }
        };
        let e = d1 + d2 - d3;
        if best.as_ref().map_or(true, |b| e < b.value) {
            best = Some(ExcessEstimate {
                value: e,
                pair: (p, q),
                witness,
            });
        }
    }
    best.ok_or_else(|| ProbeError::UnsupportedGeometry("no pairs sampled".into()))
}

/// Measures the discrepancy between chart-coordinate balls and geodesic
/// balls at a base node: the relative deviation of the g-distance of
/// chart-sphere points from the chart radius, maximized over sampled
/// directions. Zero on flat charts; reported, never assumed zero.
pub fn lift_discrepancy(
    g: &MetricField,
    center: usize,
    radius: f64,
    directions: usize,
    seed: u64,
) -> Result<f64, ProbeError> {
    let grid = g.grid().clone();
    let n = g.dim();
    let mut cx = [0.0; MAX_DIM];
    grid.position(center, &mut cx);
    let dirs = super::jacobi::frame_and_quasi_directions(n, directions.max(2 * n), seed);
    let mut worst = 0.0f64;
    for dir in dirs {
        let norm: f64 = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let endpoint: Vec<f64> = (0..n).map(|c| cx[c] + radius * dir[c] / norm).collect();
        let mut pts = vec![cx[..n].to_vec()];
        // straight chart segment, later relaxed toward the geodesic
        let pieces = 16;
        for k in 1..=pieces {
            let f = k as f64 / pieces as f64;
            let mut q: Vec<f64> = (0..n).map(|c| cx[c] + f * (endpoint[c] - cx[c])).collect();
            grid.wrap_point(&mut q);
            pts.push(q);
        }
        let (_, len) = relax_polyline(g, &pts, false, 40);
        worst = worst.max((len - radius).abs() / radius);
    }
    Ok(worst)
}
