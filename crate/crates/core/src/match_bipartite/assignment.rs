//! Rectangular linear assignment by shortest augmenting paths.

use crate::distances::DistanceMatrix;
use crate::error::{Error, Result};

/// Optimal injective map from the smaller side of a cost matrix to the larger.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// (row, column) pairs in increasing row order (for tall matrices, in
    /// increasing row order of the matched rows).
    pub pairs: Vec<(usize, usize)>,
    /// Sum of the matched costs, accumulated in `pairs` order.
    pub total: f64,
}

/// Solves min-cost assignment on `costs`; every row is matched when
/// rows ≤ cols, otherwise every column is.
///
/// The solver grows one augmenting path per row with Dijkstra-style label
/// updates, keeping dual potentials so reduced costs stay non-negative. Ties
/// in the path search go to the lowest-index column, which makes the result
/// deterministic for a given matrix.
pub fn solve_assignment(costs: &DistanceMatrix) -> Result<Assignment> {
    if costs.rows == 0 || costs.cols == 0 {
        return Err(Error::Infeasible("assignment on an empty cost matrix".into()));
    }
    if let Some(v) = costs.entries.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("assignment cost {v} is not finite")));
    }
    let transposed = costs.rows > costs.cols;
    let (nr, nc) = if transposed {
        (costs.cols, costs.rows)
    } else {
        (costs.rows, costs.cols)
    };
    let cost = |i: usize, j: usize| {
        if transposed {
            costs.get(j, i)
        } else {
            costs.get(i, j)
        }
    };
    let col4row = shortest_augmenting_path(nr, nc, cost)?;

    let mut pairs: Vec<(usize, usize)> = col4row
        .iter()
        .enumerate()
        .map(|(i, &j)| if transposed { (j, i) } else { (i, j) })
        .collect();
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(i, j)| costs.get(i, j)).sum();
    Ok(Assignment { pairs, total })
}

const NONE: usize = usize::MAX;

fn shortest_augmenting_path(nr: usize, nc: usize, cost: impl Fn(usize, usize) -> f64) -> Result<Vec<usize>> {
    let mut u = vec![0.0; nr];
    let mut v = vec![0.0; nc];
    let mut col4row = vec![NONE; nr];
    let mut row4col = vec![NONE; nc];
    let mut shortest = vec![f64::INFINITY; nc];
    let mut path = vec![NONE; nc];
    let mut in_sr = vec![false; nr];
    let mut in_sc = vec![false; nc];
    let mut remaining: Vec<usize> = Vec::with_capacity(nc);

    for cur_row in 0..nr {
        shortest.fill(f64::INFINITY);
        path.fill(NONE);
        in_sr.fill(false);
        in_sc.fill(false);
        remaining.clear();
        remaining.extend(0..nc);

        let mut min_val = 0.0;
        let mut i = cur_row;
        let sink = loop {
            in_sr[i] = true;
            let mut lowest = f64::INFINITY;
            let mut pick = NONE;
            for (k, &j) in remaining.iter().enumerate() {
                let r = min_val + cost(i, j) - u[i] - v[j];
                if r < shortest[j] {
                    path[j] = i;
                    shortest[j] = r;
                }
                // Lowest index wins ties, except that a free column beats an
                // assigned one so the path ends as early as possible.
                let better = pick == NONE
                    || shortest[j] < lowest
                    || (shortest[j] == lowest && row4col[j] == NONE && row4col[remaining[pick]] != NONE);
                if better {
                    lowest = shortest[j];
                    pick = k;
                }
            }
            if !lowest.is_finite() {
                return Err(Error::Infeasible("no augmenting path".into()));
            }
            min_val = lowest;
            let j = remaining.remove(pick);
            in_sc[j] = true;
            if row4col[j] == NONE {
                break j;
            }
            i = row4col[j];
        };

        u[cur_row] += min_val;
        for r in 0..nr {
            if in_sr[r] && r != cur_row {
                u[r] += min_val - shortest[col4row[r]];
            }
        }
        for c in 0..nc {
            if in_sc[c] {
                v[c] -= min_val - shortest[c];
            }
        }

        let mut j = sink;
        loop {
            let r = path[j];
            row4col[j] = r;
            std::mem::swap(&mut col4row[r], &mut j);
            if r == cur_row {
                break;
            }
        }
    }
    Ok(col4row)
}
