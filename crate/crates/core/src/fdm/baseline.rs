use super::{solve_dense, DerivOp};
use crate::graph::SpatialGraph;
use crate::{Error, Result};

/// Per-node derivative estimates from local least-squares polynomial fits.
#[derive(Clone, Debug, PartialEq)]
pub struct FdmEstimate {
    pub values: Vec<f64>,
    /// Nodes whose local fit was rank-deficient; their estimate is 0.
    pub flagged: Vec<usize>,
}

/// Nodes reachable from `i` within `hops` outgoing edges, excluding `i`.
fn neighborhood(adj: &[Vec<usize>], i: usize, hops: usize) -> Vec<usize> {
    let mut seen = vec![i];
    let mut frontier = vec![i];
    for _ in 0..hops {
        let mut next = Vec::new();
        for &v in &frontier {
            for &w in &adj[v] {
                if !seen.contains(&w) {
                    seen.push(w);
                    next.push(w);
                }
            }
        }
        frontier = next;
    }
    seen.remove(0);
    seen
}

/// Least-squares fit of `u_j − u_i` on the scaled monomials `cols` of the
/// offsets. Returns the coefficients, or `None` when the normal equations
/// are singular.
fn fit(rows: &[(f64, f64, f64)], cols: usize) -> Option<Vec<f64>> {
    let basis = |x: f64, y: f64| -> [f64; 5] { [x, y, x * x, x * y, y * y] };
    let mut ata = vec![0.0; cols * cols];
    let mut atb = vec![0.0; cols];
    for &(x, y, du) in rows {
        let b = basis(x, y);
        for r in 0..cols {
            atb[r] += b[r] * du;
            for c in 0..cols {
                ata[r * cols + c] += b[r] * b[c];
            }
        }
    }
    let diag_max = (0..cols).fold(0.0f64, |m, i| m.max(ata[i * cols + i]));
    if diag_max == 0.0 {
        return None;
    }
    let coef = solve_dense(ata.clone(), atb, cols).ok()?;
    // reject near-singular fits that slipped past pivoting
    let min_diag = (0..cols).fold(f64::INFINITY, |m, i| m.min(ata[i * cols + i]));
    if min_diag < 1e-10 * diag_max {
        return None;
    }
    Some(coef)
}

/// Estimate `op` at every node by fitting a bivariate quadratic in the
/// offsets to `u_j − u_i` over the `hops`-hop neighbourhood and reading off
/// the derivative at the node. First-order operators fall back to a linear
/// fit when fewer than five neighbours are available; nodes where no fit is
/// possible are flagged and get 0.
pub fn graph_fdm_baseline(
    graph: &SpatialGraph,
    signal: &[f64],
    op: DerivOp,
    hops: usize,
) -> Result<FdmEstimate> {
    let n = graph.n_nodes();
    if signal.len() != n {
        return Err(Error::Invalid(format!(
            "signal has {} values for {n} nodes",
            signal.len()
        )));
    }
    let mut adj = vec![Vec::new(); n];
    for &(s, d) in &graph.edges {
        adj[s].push(d);
    }
    let mut values = vec![0.0; n];
    let mut flagged = Vec::new();
    for i in 0..n {
        let nb = neighborhood(&adj, i, hops.max(1));
        let (xi, yi) = graph.nodes[i];
        let scale = nb
            .iter()
            .map(|&j| (graph.nodes[j].0 - xi).hypot(graph.nodes[j].1 - yi))
            .fold(0.0f64, f64::max);
        if scale == 0.0 {
            flagged.push(i);
            continue;
        }
        let rows: Vec<_> = nb
            .iter()
            .map(|&j| {
                let (x, y) = graph.nodes[j];
                ((x - xi) / scale, (y - yi) / scale, signal[j] - signal[i])
            })
            .collect();

        let quad = if rows.len() >= 5 { fit(&rows, 5) } else { None };
        let est = match (quad, op.order()) {
            (Some(c), _) => Some(match op {
                DerivOp::Dx => c[0] / scale,
                DerivOp::Dy => c[1] / scale,
                DerivOp::Dxx => 2.0 * c[2] / (scale * scale),
                DerivOp::Dyy => 2.0 * c[4] / (scale * scale),
            }),
            (None, 1) if rows.len() >= 3 => fit(&rows, 2).map(|c| match op {
                DerivOp::Dx => c[0] / scale,
                _ => c[1] / scale,
            }),
            _ => None,
        };
        match est {
            Some(v) => values[i] = v,
            None => flagged.push(i),
        }
    }
    Ok(FdmEstimate { values, flagged })
}
