//! Exact discrete optimal transport by successive shortest paths on the
//! bipartite transportation network.

use ndarray::Array2;

use crate::error::{Error, Result};

const MASS_EPS: f64 = 1e-15;

/// Solve `min <C, P>` over couplings with row sums `a` and column sums `b`.
pub fn solve(a: &[f64], b: &[f64], cost: &Array2<f64>) -> Result<Array2<f64>> {
    let (n, m) = cost.dim();
    if a.len() != n || b.len() != m {
        return Err(Error::DimensionMismatch {
            expected: n * m,
            got: a.len() * b.len(),
        });
    }
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    let mut flow = Array2::<f64>::zeros((n, m));
    // Relaxations must beat rounding noise, or near-zero residual cycles
    // can loop the predecessor chain.
    let tol = 1e-12 * (1.0 + cost.iter().fold(0.0f64, |acc, c| acc.max(c.abs())));

    // Nodes 0..n are sources, n..n+m sinks.
    let max_rounds = 4 * (n + m) * (n + m) + 16;
    for _ in 0..max_rounds {
        let remaining: f64 = supply.iter().sum();
        if remaining <= MASS_EPS * (n + m) as f64 {
            break;
        }

        let mut dist = vec![f64::INFINITY; n + m];
        let mut prev = vec![usize::MAX; n + m];
        for i in 0..n {
            if supply[i] > MASS_EPS {
                dist[i] = 0.0;
            }
        }
        // Bellman-Ford: forward arcs i -> j always open, backward j -> i
        // where flow is positive.
        for _ in 0..n + m {
            let mut changed = false;
            for i in 0..n {
                if dist[i].is_finite() {
                    for j in 0..m {
                        let d = dist[i] + cost[[i, j]];
                        if d < dist[n + j] - tol {
                            dist[n + j] = d;
                            prev[n + j] = i;
                            changed = true;
                        }
                    }
                }
            }
            for j in 0..m {
                if dist[n + j].is_finite() {
                    for i in 0..n {
                        if flow[[i, j]] > MASS_EPS {
                            let d = dist[n + j] - cost[[i, j]];
                            if d < dist[i] - tol {
                                dist[i] = d;
                                prev[i] = n + j;
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }

        let sink = (0..m)
            .filter(|&j| demand[j] > MASS_EPS && dist[n + j].is_finite())
            .min_by(|&x, &y| dist[n + x].total_cmp(&dist[n + y]).then(x.cmp(&y)))
            .ok_or_else(|| Error::Other("transport: no augmenting path".into()))?;

        // Walk back to a source, collecting the bottleneck.
        let mut path = Vec::new();
        let mut node = n + sink;
        let mut bottleneck = demand[sink];
        loop {
            let p = prev[node];
            if p == usize::MAX {
                bottleneck = bottleneck.min(supply[node]);
                break;
            }
            if path.len() > n + m {
                return Err(Error::Other("transport: cycle in shortest-path tree".into()));
            }
            if node >= n {
                path.push((p, node - n, true));
            } else {
                let j = p - n;
                bottleneck = bottleneck.min(flow[[node, j]]);
                path.push((node, j, false));
            }
            node = p;
        }
        let source = node;

        for (i, j, forward) in path {
            if forward {
                flow[[i, j]] += bottleneck;
            } else {
                flow[[i, j]] -= bottleneck;
            }
        }
        supply[source] -= bottleneck;
        demand[sink] -= bottleneck;
    }

    flow.mapv_inplace(|x| if x < MASS_EPS { 0.0 } else { x });
    Ok(flow)
}
