//! Exact Earth Mover's Distance via the transportation simplex.
//!
//! The solver operates on the balanced transportation problem: minimize
//! `sum f_ij * c_ij` subject to `f_ij >= 0`, row sums equal to the source
//! weights and column sums equal to the sink weights. For distributions
//! whose weights sum to one the optimal total flow is exactly one, so the
//! objective needs no normalization.

use crate::distribution::{CostMatrix, DiscreteDistribution, Flow};
use crate::error::Result;

/// Entering-variable threshold, relative to the largest ground distance.
/// A basis is accepted as optimal once every reduced cost clears it.
const REDUCED_COST_TOL: f64 = 1e-12;

/// Pivot budget (times `n * m`) for the most-negative-reduced-cost rule
/// before switching to Bland's rule, which cannot cycle.
const DANTZIG_PIVOT_BUDGET: usize = 32;

/// Exact EMD between two distributions over the same space.
///
/// Deterministic: identical inputs always produce the identical value.
pub fn exact_emd(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    let costs = CostMatrix::between(p, q)?;
    let (value, _) = solve_transportation(p.weights(), q.weights(), &costs);
    Ok(value)
}

/// Exact EMD along with an optimal transportation plan certifying it.
pub fn exact_emd_with_flow(
    p: &DiscreteDistribution,
    q: &DiscreteDistribution,
) -> Result<(f64, Flow)> {
    let costs = CostMatrix::between(p, q)?;
    let (value, cells) = solve_transportation(p.weights(), q.weights(), &costs);
    let entries = cells
        .into_iter()
        .filter(|&(_, _, f)| f > 0.0)
        .collect::<Vec<_>>();
    Ok((value, Flow::new(p.len(), q.len(), entries)))
}

/// Transportation simplex over explicit supplies/demands. Demands are
/// rescaled to the supply total so the problem is exactly balanced.
pub(crate) fn solve_transportation(
    supplies: &[f64],
    demands: &[f64],
    costs: &CostMatrix,
) -> (f64, Vec<(usize, usize, f64)>) {
    let n = supplies.len();
    let m = demands.len();
    debug_assert_eq!(costs.rows(), n);
    debug_assert_eq!(costs.cols(), m);

    let supply_total: f64 = supplies.iter().sum();
    let demand_total: f64 = demands.iter().sum();
    let scale = if demand_total > 0.0 {
        supply_total / demand_total
    } else {
        1.0
    };
    let a: Vec<f64> = supplies.to_vec();
    let b: Vec<f64> = demands.iter().map(|d| d * scale).collect();

    let mut basis = northwest_corner(&a, &b);
    let cost_scale = 1.0 + (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .fold(0.0f64, |acc, (i, j)| acc.max(costs.at(i, j)));
    let enter_tol = REDUCED_COST_TOL * cost_scale;

    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m];
    let mut row_cells: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut col_cells: Vec<Vec<usize>> = vec![Vec::new(); m];
    let dantzig_limit = DANTZIG_PIVOT_BUDGET * (n * m + 16);
    let mut pivots = 0usize;

    loop {
        for r in &mut row_cells {
            r.clear();
        }
        for c in &mut col_cells {
            c.clear();
        }
        for (idx, &(i, j, _)) in basis.iter().enumerate() {
            row_cells[i].push(idx);
            col_cells[j].push(idx);
        }
        compute_duals(&basis, &row_cells, &col_cells, costs, &mut u, &mut v);

        // Entering variable: most negative reduced cost (Bland's first-index
        // rule after the budget, to guarantee termination).
        let bland = pivots >= dantzig_limit;
        let mut entering: Option<(usize, usize)> = None;
        let mut best = -enter_tol;
        'scan: for (i, &ui) in u.iter().enumerate() {
            for (j, &vj) in v.iter().enumerate() {
                let reduced = costs.at(i, j) - ui - vj;
                if reduced < best {
                    entering = Some((i, j));
                    if bland {
                        break 'scan;
                    }
                    best = reduced;
                }
            }
        }
        let Some((ei, ej)) = entering else { break };

        // Cycle: the entering cell plus the unique tree path from column
        // `ej` back to row `ei`. Cells at odd cycle positions lose flow.
        let path = tree_path(ei, ej, n, &basis, &row_cells, &col_cells);
        let mut theta = f64::INFINITY;
        let mut leaving = usize::MAX;
        for (pos, &cell_idx) in path.iter().enumerate() {
            if pos % 2 == 0 {
                let flow = basis[cell_idx].2;
                let (ci, cj) = (basis[cell_idx].0, basis[cell_idx].1);
                let better = flow < theta
                    || (flow == theta
                        && leaving != usize::MAX
                        && (ci, cj) < (basis[leaving].0, basis[leaving].1));
                if better {
                    theta = flow;
                    leaving = cell_idx;
                }
            }
        }
        debug_assert!(leaving != usize::MAX, "cycle always has a leaving cell");

        for (pos, &cell_idx) in path.iter().enumerate() {
            if pos % 2 == 0 {
                basis[cell_idx].2 = (basis[cell_idx].2 - theta).max(0.0);
            } else {
                basis[cell_idx].2 += theta;
            }
        }
        basis[leaving] = (ei, ej, theta);
        pivots += 1;
    }

    let value = basis.iter().map(|&(i, j, f)| f * costs.at(i, j)).sum();
    (value, basis)
}

/// Northwest-corner starting basis: exactly `n + m - 1` cells forming a
/// staircase spanning tree (degenerate zero-flow cells included on ties).
fn northwest_corner(a: &[f64], b: &[f64]) -> Vec<(usize, usize, f64)> {
    let (n, m) = (a.len(), b.len());
    let mut cells = Vec::with_capacity(n + m - 1);
    let (mut i, mut j) = (0, 0);
    let mut a_rem = a[0];
    let mut b_rem = b[0];
    loop {
        let x = a_rem.min(b_rem).max(0.0);
        cells.push((i, j, x));
        a_rem -= x;
        b_rem -= x;
        if i == n - 1 && j == m - 1 {
            break;
        }
        if a_rem <= b_rem && i < n - 1 {
            i += 1;
            a_rem = a[i];
        } else if j < m - 1 {
            j += 1;
            b_rem = b[j];
        } else {
            i += 1;
            a_rem = a[i];
        }
    }
    debug_assert_eq!(cells.len(), n + m - 1);
    cells
}

/// Dual prices from the spanning-tree basis: fix `u[0] = 0`, then propagate
/// `u_i + v_j = c_ij` across basis cells.
fn compute_duals(
    basis: &[(usize, usize, f64)],
    row_cells: &[Vec<usize>],
    col_cells: &[Vec<usize>],
    costs: &CostMatrix,
    u: &mut [f64],
    v: &mut [f64],
) {
    let n = u.len();
    let mut u_done = vec![false; n];
    let mut v_done = vec![false; v.len()];
    u[0] = 0.0;
    u_done[0] = true;
    // Node queue over the bipartite tree: rows are 0..n, columns n..n+m.
    let mut queue = Vec::with_capacity(n + v.len());
    queue.push(0usize);
    while let Some(node) = queue.pop() {
        if node < n {
            for &idx in &row_cells[node] {
                let (i, j, _) = basis[idx];
                if !v_done[j] {
                    v[j] = costs.at(i, j) - u[i];
                    v_done[j] = true;
                    queue.push(n + j);
                }
            }
        } else {
            let jn = node - n;
            for &idx in &col_cells[jn] {
                let (i, j, _) = basis[idx];
                if !u_done[i] {
                    u[i] = costs.at(i, j) - v[j];
                    u_done[i] = true;
                    queue.push(i);
                }
            }
        }
    }
    debug_assert!(u_done.iter().all(|&d| d) && v_done.iter().all(|&d| d));
}

/// Basis cells along the unique tree path from column `ej` to row `ei`,
/// ordered so the first cell shares column `ej` with the entering cell.
fn tree_path(
    ei: usize,
    ej: usize,
    n: usize,
    basis: &[(usize, usize, f64)],
    row_cells: &[Vec<usize>],
    col_cells: &[Vec<usize>],
) -> Vec<usize> {
    let total = n + col_cells.len();
    let start = n + ej;
    let goal = ei;
    let mut parent_edge = vec![usize::MAX; total];
    let mut parent_node = vec![usize::MAX; total];
    let mut visited = vec![false; total];
    visited[start] = true;
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(start);
    while let Some(node) = queue.pop_front() {
        if node == goal {
            break;
        }
        let edges = if node < n {
            &row_cells[node]
        } else {
            &col_cells[node - n]
        };
        for &idx in edges {
            let (i, j, _) = basis[idx];
            let next = if node < n { n + j } else { i };
            if !visited[next] {
                visited[next] = true;
                parent_edge[next] = idx;
                parent_node[next] = node;
                queue.push_back(next);
            }
        }
    }
    debug_assert!(visited[goal], "basis must stay a spanning tree");
    let mut path = Vec::new();
    let mut node = goal;
    while node != start {
        path.push(parent_edge[node]);
        node = parent_node[node];
    }
    path.reverse();
    path
}
