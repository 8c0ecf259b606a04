//! Exact minimum-cost assignment (Hungarian algorithm, shortest
//! augmenting paths with dual potentials). Used to evaluate exact
//! Wasserstein distances between uniform discrete measures.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Optimal assignment of rows to columns and its total cost.
#[derive(Debug, Clone)]
pub struct Assignment {
    /// `row_to_col[i]` is the column matched to row `i`.
    pub row_to_col: Vec<usize>,
    pub total_cost: f64,
}

/// Solves the square minimum-cost assignment problem exactly.
pub fn solve(cost: &Array2<f64>) -> Result<Assignment> {
    let (rows, cols) = cost.dim();
    if rows != cols {
        return Err(Error::DimensionMismatch {
            expected: rows,
            got: cols,
        });
    }
    if rows == 0 {
        return Err(Error::InvalidParameter {
            name: "assignment_size",
            value: 0.0,
            reason: "cost matrix must be nonempty",
        });
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("assignment costs".into()));
    }
    let n = rows;
    // Dual potentials u (rows), v (columns); p[j] is the row matched to
    // column j, with index 0 as the virtual unmatched marker.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let reduced = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if reduced < minv[j] {
                        minv[j] = reduced;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
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
        // Unwind the augmenting path.
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    let total_cost = row_to_col
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[[i, j]])
        .sum();
    Ok(Assignment {
        row_to_col,
        total_cost,
    })
}
