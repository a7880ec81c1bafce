use nalgebra::DMatrix;

use crate::error::{Error, Result};

const MASS_TOL: f64 = 1e-8;
const EPS: f64 = 1e-15;

/// Strict improvement beyond rounding noise; keeps ties from forming
/// zero-length cycles in the predecessor tree.
fn improves(candidate: f64, current: f64) -> bool {
    candidate < current - 1e-12 * (1.0 + candidate.abs())
}

/// Exact discrete optimal transport by successive shortest augmenting
/// paths on the transportation network.
///
/// Returns the optimal plan and its cost `<plan, c>`.
pub fn exact_ot(u_s: &[f64], u_t: &[f64], c: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let (n, m) = (u_s.len(), u_t.len());
    if c.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, got: c.nrows() });
    }
    if c.ncols() != m {
        return Err(Error::DimensionMismatch { expected: m, got: c.ncols() });
    }
    if u_s.iter().chain(u_t).any(|w| !(*w >= 0.0) || !w.is_finite()) || c.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateInput("transport inputs must be finite and nonnegative".into()));
    }
    let (ss, st): (f64, f64) = (u_s.iter().sum(), u_t.iter().sum());
    if (ss - st).abs() > MASS_TOL {
        return Err(Error::InfeasibleMarginals { source_mass: ss, target_mass: st });
    }
    let mut supply = u_s.to_vec();
    let mut demand = u_t.to_vec();
    let mut flow = DMatrix::<f64>::zeros(n, m);
    let max_rounds = 4 * (n + m) * (n + m) + 16;
    for _ in 0..max_rounds {
        if !supply.iter().any(|s| *s > EPS) || !demand.iter().any(|d| *d > EPS) {
            break;
        }
        // Multi-source Bellman-Ford over rows (0..n) and columns (n..n+m).
        let mut dist = vec![f64::INFINITY; n + m];
        let mut prev = vec![usize::MAX; n + m];
        for i in 0..n {
            if supply[i] > EPS {
                dist[i] = 0.0;
            }
        }
        for _ in 0..n + m {
            let mut changed = false;
            for i in 0..n {
                if dist[i].is_finite() {
                    for j in 0..m {
                        let d = dist[i] + c[(i, j)];
                        if improves(d, dist[n + j]) {
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
                        if flow[(i, j)] > EPS {
                            let d = dist[n + j] - c[(i, j)];
                            if improves(d, dist[i]) {
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
            .filter(|j| demand[*j] > EPS && dist[n + j].is_finite())
            .min_by(|a, b| dist[n + a].total_cmp(&dist[n + b]));
        let Some(jt) = sink else { break };
        let mut path = vec![n + jt];
        let mut node = n + jt;
        while prev[node] != usize::MAX {
            node = prev[node];
            path.push(node);
            if path.len() > n + m + 1 {
                return Err(Error::DegenerateInput("cycle in transport residual graph".into()));
            }
        }
        let source = node;
        let mut delta = supply[source].min(demand[jt]);
        for w in path.windows(2) {
            if w[0] < n {
                // backward edge col w[1] -> row w[0]
                delta = delta.min(flow[(w[0], w[1] - n)]);
            }
        }
        for w in path.windows(2) {
            if w[0] >= n {
                flow[(w[1], w[0] - n)] += delta;
            } else {
                flow[(w[0], w[1] - n)] -= delta;
            }
        }
        supply[source] -= delta;
        demand[jt] -= delta;
    }
    flow.iter_mut().for_each(|f| *f = f.max(0.0));
    let cost = flow.component_mul(c).sum();
    Ok((flow, cost))
}
