use alloc::vec;
use alloc::vec::Vec;

use super::cost::CostMatrix;
use crate::Result;

/// One-to-one `(prediction, ground truth)` pairs, sorted by prediction index.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
}

impl Assignment {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn total(&self, cost: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(r, c)| cost.at(r, c)).sum()
    }

    /// Ground-truth index matched to prediction `row`, if any.
    pub fn gt_for(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == row).map(|p| p.1)
    }

    pub fn matched_mask(&self, rows: usize) -> Vec<bool> {
        let mut mask = vec![false; rows];
        for &(r, _) in &self.pairs {
            mask[r] = true;
        }
        mask
    }
}

/// Minimum-cost assignment over the rows/cols listed, `rows.len() <=
/// cols.len()`; returns the chosen column (as a position in `cols`) for each
/// row. Shortest augmenting path with potentials.
fn solve(cost: &CostMatrix, rows: &[usize], cols: &[usize]) -> (f64, Vec<usize>) {
    let (n, m) = (rows.len(), cols.len());
    debug_assert!(n <= m);
    let a = |i: usize, j: usize| cost.at(rows[i - 1], cols[j - 1]);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut choice = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            choice[owner[j] - 1] = j - 1;
        }
    }
    let total = (0..n).map(|i| a(i + 1, choice[i] + 1)).sum();
    (total, choice)
}

/// Optimal cost of a full-size assignment between the given index sets.
fn optimum(cost: &CostMatrix, rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() || cols.is_empty() {
        0.0
    } else if rows.len() <= cols.len() {
        solve(cost, rows, cols).0
    } else {
        let t = cost.transposed();
        solve(&t, cols, rows).0
    }
}

/// Minimum-total-cost one-to-one assignment of size `min(rows, cols)`.
/// Among optimal assignments the lexicographically smallest sorted pair
/// list is returned, so ties resolve the same way on every platform.
pub fn hungarian(cost: &CostMatrix) -> Result<Assignment> {
    let (n, m) = (cost.rows, cost.cols);
    let k = n.min(m);
    if k == 0 {
        return Ok(Assignment::default());
    }
    let all_rows: Vec<usize> = (0..n).collect();
    let all_cols: Vec<usize> = (0..m).collect();
    let best = optimum(cost, &all_rows, &all_cols);
    let scale = cost.entries.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let tol = 1e-9 * (1.0 + scale * k as f64);

    // Fix pairs one at a time, taking the smallest (row, col) that still
    // extends to an optimal assignment.
    let mut pairs = Vec::with_capacity(k);
    let mut used_cols = vec![false; m];
    let mut fixed = 0.0;
    let mut next_row = 0;
    while pairs.len() < k {
        let need = k - pairs.len() - 1;
        let mut chosen = None;
        'rows: for i in next_row..n {
            let rest_rows: Vec<usize> = (i + 1..n).collect();
            if rest_rows.len() < need {
                break;
            }
            for j in 0..m {
                if used_cols[j] {
                    continue;
                }
                let rest_cols: Vec<usize> = (0..m).filter(|&c| c != j && !used_cols[c]).collect();
                if rest_cols.len() < need || rest_rows.len().min(rest_cols.len()) != need {
                    continue;
                }
                let total = fixed + cost.at(i, j) + optimum(cost, &rest_rows, &rest_cols);
                if total <= best + tol {
                    chosen = Some((i, j));
                    break 'rows;
                }
            }
        }
        let (i, j) = chosen.expect("an optimal completion always exists");
        fixed += cost.at(i, j);
        used_cols[j] = true;
        next_row = i + 1;
        pairs.push((i, j));
    }
    Ok(Assignment { pairs })
}
