//! Min-cost flow on the complete bipartite transportation graph.
//!
//! Successive shortest paths with Johnson potentials; each augmenting path is
//! found by an O(V^2) dense Dijkstra, which suits the fully connected graph.

/// Residual amounts at or below this are treated as exhausted.
const EPS: f64 = 1e-15;

/// Solves `min sum flow[i][j] * cost(i, j)` subject to row sums `supply`
/// and column sums `demand`. Totals must already balance.
///
/// Returns the flow table in row-major order (`supply.len() x demand.len()`).
pub(crate) fn min_cost_transport<C>(supply: &[f64], demand: &[f64], cost: C) -> Vec<f64>
where
    C: Fn(usize, usize) -> f64,
{
    let n1 = supply.len();
    let n2 = demand.len();
    let mut sup = supply.to_vec();
    let mut dem = demand.to_vec();
    let mut flow = vec![0.0; n1 * n2];

    let mut pot_s = vec![0.0f64; n1];
    let mut pot_d = vec![0.0f64; n2];
    let mut pot_t = 0.0f64;

    let mut dist_s = vec![0.0; n1];
    let mut dist_d = vec![0.0; n2];
    // prev_s[i]: demand node the path reached i from (None = source edge).
    let mut prev_s: Vec<Option<usize>> = vec![None; n1];
    let mut prev_d = vec![0usize; n2];
    let mut done_s = vec![false; n1];
    let mut done_d = vec![false; n2];

    loop {
        if sup.iter().all(|&v| v <= EPS) || dem.iter().all(|&v| v <= EPS) {
            break;
        }

        for i in 0..n1 {
            dist_s[i] = if sup[i] > EPS {
                (-pot_s[i]).max(0.0)
            } else {
                f64::INFINITY
            };
            prev_s[i] = None;
            done_s[i] = false;
        }
        dist_d.fill(f64::INFINITY);
        done_d.fill(false);
        let mut dist_t = f64::INFINITY;
        let mut prev_t = usize::MAX;

        loop {
            // Select the closest unsettled node; the sink ends the search.
            let mut best = dist_t;
            let mut pick: Option<(bool, usize)> = None;
            for i in 0..n1 {
                if !done_s[i] && dist_s[i] < best {
                    best = dist_s[i];
                    pick = Some((true, i));
                }
            }
            for j in 0..n2 {
                if !done_d[j] && dist_d[j] < best {
                    best = dist_d[j];
                    pick = Some((false, j));
                }
            }
            let Some((is_supply, v)) = pick else { break };
            if is_supply {
                done_s[v] = true;
                for j in 0..n2 {
                    if done_d[j] {
                        continue;
                    }
                    let nd = dist_s[v] + (cost(v, j) + pot_s[v] - pot_d[j]).max(0.0);
                    if nd < dist_d[j] {
                        dist_d[j] = nd;
                        prev_d[j] = v;
                    }
                }
            } else {
                done_d[v] = true;
                if dem[v] > EPS {
                    let nd = dist_d[v] + (pot_d[v] - pot_t).max(0.0);
                    if nd < dist_t {
                        dist_t = nd;
                        prev_t = v;
                    }
                }
                for i in 0..n1 {
                    if done_s[i] || flow[i * n2 + v] <= EPS {
                        continue;
                    }
                    let nd = dist_d[v] + (-cost(i, v) + pot_d[v] - pot_s[i]).max(0.0);
                    if nd < dist_s[i] {
                        dist_s[i] = nd;
                        prev_s[i] = Some(v);
                    }
                }
            }
        }

        if !dist_t.is_finite() {
            // Unbalanced remainder within tolerance; nothing left to route.
            break;
        }

        for i in 0..n1 {
            pot_s[i] += dist_s[i].min(dist_t);
        }
        for j in 0..n2 {
            pot_d[j] += dist_d[j].min(dist_t);
        }
        pot_t += dist_t;

        // Walk the path back from the sink to find the bottleneck.
        let mut bottleneck = dem[prev_t];
        let mut j = prev_t;
        loop {
            let i = prev_d[j];
            match prev_s[i] {
                Some(jb) => {
                    bottleneck = bottleneck.min(flow[i * n2 + jb]);
                    j = jb;
                }
                None => {
                    bottleneck = bottleneck.min(sup[i]);
                    break;
                }
            }
        }

        dem[prev_t] -= bottleneck;
        if dem[prev_t] <= EPS {
            dem[prev_t] = 0.0;
        }
        let mut j = prev_t;
        loop {
            let i = prev_d[j];
            flow[i * n2 + j] += bottleneck;
            match prev_s[i] {
                Some(jb) => {
                    let f = &mut flow[i * n2 + jb];
                    *f -= bottleneck;
                    if *f <= EPS {
                        *f = 0.0;
                    }
                    j = jb;
                }
                None => {
                    sup[i] -= bottleneck;
                    if sup[i] <= EPS {
                        sup[i] = 0.0;
                    }
                    break;
                }
            }
        }
    }
    flow
}
