//! Greedy epsilon-net coverings of metric balls.
//!
//! Centers form a maximal epsilon-separated subset of the ball `B_p(r)`
//! (candidates scanned in order of distance from `p`), so every point of
//! the ball lies within `epsilon` of a center and the epsilon-balls cover.
//! Counts and multiplicities are compared elsewhere against volume
//! comparison bounds.

use crate::error::ProbeError;
use crate::metric::MetricField;

use super::distance::{dijkstra, dijkstra_limited};

/// A covering of `B_p(r)` by `epsilon`-balls.
#[derive(Debug, Clone)]
pub struct EpsilonNet {
    pub centers: Vec<usize>,
    pub count: usize,
    /// Largest number of covering balls containing one node.
    pub multiplicity: usize,
}

/// Greedy maximal separated net in the graph metric. Requires
/// `0 < epsilon <= r` (the degenerate case `epsilon = r` yields the single
/// ball at the center).
pub fn epsilon_net(
    g: &MetricField,
    center: usize,
    r: f64,
    epsilon: f64,
) -> Result<EpsilonNet, ProbeError> {
    if !(epsilon > 0.0) || epsilon > r {
        return Err(ProbeError::BadNetParameters { epsilon, r });
    }
    let from_center = dijkstra(g, center);
    let mut candidates: Vec<usize> = (0..g.grid().node_count())
        .filter(|&n| from_center.dist[n] <= r)
        .collect();
    candidates.sort_by(|&a, &b| {
        from_center.dist[a]
            .partial_cmp(&from_center.dist[b])
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut min_to_centers = vec![f64::INFINITY; g.grid().node_count()];
    let mut centers = Vec::new();
    let mut cover_count = vec![0u32; g.grid().node_count()];
    for &cand in &candidates {
        if min_to_centers[cand] > epsilon {
            let field = dijkstra_limited(g, cand, 1.001 * epsilon);
            for (node, &d) in field.dist.iter().enumerate() {
                if d < min_to_centers[node] {
                    min_to_centers[node] = d;
                }
                if d <= epsilon {
                    cover_count[node] += 1;
                }
            }
            centers.push(cand);
        }
    }
    let multiplicity = candidates
        .iter()
        .map(|&n| cover_count[n])
        .max()
        .unwrap_or(0) as usize;
    // Maximality of the separated set guarantees the cover.
    debug_assert!(candidates.iter().all(|&n| min_to_centers[n] <= epsilon));
    Ok(EpsilonNet {
        count: centers.len(),
        centers,
        multiplicity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ChartGrid;
    use std::sync::Arc;

    fn flat(nodes: usize, len: f64, dim: usize) -> MetricField {
        let grid = Arc::new(ChartGrid::new(&vec![nodes; dim], &vec![len; dim]).unwrap());
        MetricField::euclidean(grid)
    }

    #[test]
    fn r_equal_epsilon_gives_a_single_ball() {
        let g = flat(16, 4.0, 2);
        let net = epsilon_net(&g, 0, 0.8, 0.8).unwrap();
        assert_eq!(net.count, 1);
        assert_eq!(net.centers, vec![0]);
        assert_eq!(net.multiplicity, 1);
    }

    #[test]
    fn bad_parameters_are_rejected() {
        let g = flat(8, 4.0, 2);
        assert!(matches!(
            epsilon_net(&g, 0, 0.5, 0.0),
            Err(ProbeError::BadNetParameters { .. })
        ));
        assert!(matches!(
            epsilon_net(&g, 0, 0.5, 0.6),
            Err(ProbeError::BadNetParameters { .. })
        ));
    }

    #[test]
    fn net_covers_and_centers_are_separated() {
        let g = flat(20, 4.0, 2);
        let (r, eps) = (1.5, 0.5);
        let net = epsilon_net(&g, 0, r, eps).unwrap();
        assert!(net.count >= 2);
        // pairwise separation in the graph metric
        for (i, &a) in net.centers.iter().enumerate() {
            let fa = dijkstra(&g, a);
            for &b in net.centers.iter().skip(i + 1) {
                assert!(fa.dist[b] > eps, "centers {a},{b} at {}", fa.dist[b]);
            }
        }
        // cover: every ball node within eps of some center
        let from_center = dijkstra(&g, 0);
        for node in 0..g.grid().node_count() {
            if from_center.dist[node] <= r {
                let mut best = f64::INFINITY;
                for &c in &net.centers {
                    best = best.min(dijkstra(&g, c).dist[node]);
                }
                assert!(best <= eps + 1e-12);
            }
        }
    }
}
