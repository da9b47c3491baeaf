use crate::error::{Error, Result};
use crate::nn::Matrix;

const TIE_TOL: f64 = 1e-9;

/// Shortest-augmenting-path Hungarian method on a `rows <= cols` cost
/// matrix. Returns the column assigned to each row.
fn hungarian(cost: &[f64], rows: usize, cols: usize) -> Vec<usize> {
    debug_assert!(rows <= cols);
    if rows == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    // 1-indexed potentials; p[j] = row matched to column j (0 = none)
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * cols + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; rows];
    for j in 1..=cols {
        if p[j] != 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Sum of `m[r][assign[r]]` in row order.
pub fn assignment_value(m: &Matrix, assign: &[usize]) -> f64 {
    assign.iter().enumerate().map(|(r, &c)| m.get(r, c)).sum()
}

/// Minimum-cost injective assignment of rows to columns. Among optimal
/// assignments the lexicographically smallest (row 0's column first) is
/// returned.
pub fn min_cost_assignment(cost: &Matrix) -> Result<Vec<usize>> {
    let (n, m) = (cost.rows(), cost.cols());
    if n > m {
        return Err(Error::Infeasible(format!("{n} responders but only {m} depots")));
    }
    if cost.data().iter().any(|c| !c.is_finite()) {
        return Err(Error::Input("assignment weights must be finite".into()));
    }
    let best = hungarian(cost.data(), n, m);
    let opt = assignment_value(cost, &best);
    let tol = TIE_TOL * (1.0 + opt.abs());

    let mut current = best;
    let mut used = vec![false; m];
    let mut prefix = 0.0;
    for r in 0..n {
        let target = current[r];
        for c in 0..target {
            if used[c] {
                continue;
            }
            // best completion with rows r+1.. on the columns still free
            let free: Vec<usize> = (0..m).filter(|&k| !used[k] && k != c).collect();
            let sub_rows = n - r - 1;
            let mut sub = Vec::with_capacity(sub_rows * free.len());
            for rr in r + 1..n {
                sub.extend(free.iter().map(|&k| cost.get(rr, k)));
            }
            let sub_assign = hungarian(&sub, sub_rows, free.len());
            let sub_val: f64 = sub_assign.iter().enumerate().map(|(i, &k)| sub[i * free.len() + k]).sum();
            if prefix + cost.get(r, c) + sub_val <= opt + tol {
                current[r] = c;
                for (i, &k) in sub_assign.iter().enumerate() {
                    current[r + 1 + i] = free[k];
                }
                break;
            }
        }
        used[current[r]] = true;
        prefix += cost.get(r, current[r]);
    }
    Ok(current)
}

/// Maximum-weight matching of responders (rows) to depots (columns), each
/// responder matched to exactly one depot and each depot to at most one
/// responder. Ties resolve to the lexicographically smallest assignment.
pub fn max_weight_match(likelihoods: &Matrix) -> Result<Vec<usize>> {
    min_cost_assignment(&likelihoods.map(|w| -w))
}
