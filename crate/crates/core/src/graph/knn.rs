use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Distance used to pick neighbours.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[default]
    Euclidean,
    /// Minimum-image distance on a square torus of the given side length.
    Periodic { period: f64 },
}

impl Metric {
    pub fn dist2(&self, a: (f64, f64), b: (f64, f64)) -> f64 {
        let (mut dx, mut dy) = ((b.0 - a.0).abs(), (b.1 - a.1).abs());
        if let Metric::Periodic { period } = *self {
            dx = dx.min(period - dx);
            dy = dy.min(period - dy);
        }
        dx * dx + dy * dy
    }
}

/// Sensor graph: node positions and directed edges `(center, neighbour)`.
///
/// Node ids are positions in `nodes`. Every node has exactly `k_neighbors`
/// outgoing edges, listed contiguously in node order.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialGraph {
    pub nodes: Vec<(f64, f64)>,
    pub edges: Vec<(usize, usize)>,
    pub k_neighbors: usize,
}

impl SpatialGraph {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn sources(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.0).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.1).collect()
    }

    /// Outgoing neighbours of `i`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.0 == i).map(|e| e.1)
    }

    /// Check degree, self-loop and duplicate invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        let mut out_deg = vec![0usize; n];
        let mut seen = std::collections::HashSet::with_capacity(self.edges.len());
        for &(s, d) in &self.edges {
            if s >= n || d >= n {
                return Err(Error::Invalid(format!("edge ({s},{d}) references a missing node")));
            }
            if s == d {
                return Err(Error::Invalid(format!("self-loop at node {s}")));
            }
            if !seen.insert((s, d)) {
                return Err(Error::Invalid(format!("duplicate edge ({s},{d})")));
            }
            out_deg[s] += 1;
        }
        if let Some(i) = out_deg.iter().position(|&d| d != self.k_neighbors) {
            return Err(Error::Invalid(format!(
                "node {i} has {} outgoing edges, expected {}",
                out_deg[i], self.k_neighbors
            )));
        }
        Ok(())
    }
}

/// Directed k-nearest-neighbour graph; ties broken by `(distance, node id)`.
pub fn knn_graph(nodes: &[(f64, f64)], k: usize, metric: Metric) -> Result<SpatialGraph> {
    let n = nodes.len();
    if k >= n {
        return Err(Error::Invalid(format!(
            "k = {k} neighbours requested but only {n} nodes"
        )));
    }
    let mut edges = Vec::with_capacity(n * k);
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (i, &p) in nodes.iter().enumerate() {
        best.clear();
        for (j, &q) in nodes.iter().enumerate() {
            if i == j {
                continue;
            }
            let cand = (metric.dist2(p, q), j);
            if best.len() == k {
                let worst = best[k - 1];
                if (cand.0, cand.1) >= (worst.0, worst.1) {
                    continue;
                }
                best.pop();
            }
            let pos = best.partition_point(|b| (b.0, b.1) < (cand.0, cand.1));
            best.insert(pos, cand);
        }
        edges.extend(best.iter().map(|&(_, j)| (i, j)));
    }
    Ok(SpatialGraph {
        nodes: nodes.to_vec(),
        edges,
        k_neighbors: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_tie_goes_to_lower_id() {
        let g = knn_graph(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)], 1, Metric::Euclidean).unwrap();
        assert_eq!(g.neighbors(1).collect::<Vec<_>>(), [0]);
    }

    #[test]
    fn unit_square_skips_diagonal() {
        let sq = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let g = knn_graph(&sq, 2, Metric::Euclidean).unwrap();
        let mut n0: Vec<_> = g.neighbors(0).collect();
        n0.sort();
        assert_eq!(n0, [1, 3]);
        let mut n2: Vec<_> = g.neighbors(2).collect();
        n2.sort();
        assert_eq!(n2, [1, 3]);
        g.validate().unwrap();
    }

    #[test]
    fn k_must_be_below_node_count() {
        assert!(knn_graph(&[(0.0, 0.0), (1.0, 0.0)], 2, Metric::Euclidean).is_err());
    }

    #[test]
    fn periodic_metric_wraps() {
        let m = Metric::Periodic { period: 10.0 };
        assert_eq!(m.dist2((0.5, 0.0), (9.5, 0.0)), 1.0);
    }
}
