//! Rectangular linear assignment with forbidden pairs.
//!
//! The solver first maximizes the number of feasible pairs and then minimizes
//! their total cost. Infeasible entries are replaced by a penalty larger than
//! any possible spread of feasible totals, and a shortest-augmenting-path
//! Hungarian method (O(n^2 m)) solves the dense problem.

/// Dense cost matrix; `None` marks a forbidden pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Option<f64>>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![None; rows * cols],
        }
    }

    /// Builds a fully feasible matrix from rows of costs.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = Self::new(rows.len(), cols);
        for (r, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), cols, "ragged cost matrix");
            for (c, &v) in row.iter().enumerate() {
                m.set(r, c, Some(v));
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.data[row * self.cols + col]
    }

    /// Panics on a NaN or infinite cost.
    pub fn set(&mut self, row: usize, col: usize, cost: Option<f64>) {
        if let Some(c) = cost {
            assert!(c.is_finite(), "assignment costs must be finite");
        }
        self.data[row * self.cols + col] = cost;
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matching {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
    pub total_cost: f64,
}

pub fn solve_assignment(costs: &CostMatrix) -> Matching {
    let (rows, cols) = (costs.rows, costs.cols);
    let feasible = costs.data.iter().flatten();
    let max_abs = feasible.clone().fold(0.0f64, |m, c| m.max(c.abs()));
    if rows == 0 || cols == 0 || feasible.count() == 0 {
        return Matching {
            pairs: Vec::new(),
            unmatched_rows: (0..rows).collect(),
            unmatched_cols: (0..cols).collect(),
            total_cost: 0.0,
        };
    }
    let penalty = (2.0 * max_abs + 1.0) * (rows.min(cols) as f64 + 1.0);

    // Solve with the shorter side as rows.
    let transpose = rows > cols;
    let (n, m) = if transpose { (cols, rows) } else { (rows, cols) };
    let cost = |i: usize, j: usize| {
        let c = if transpose {
            costs.get(j, i)
        } else {
            costs.get(i, j)
        };
        c.unwrap_or(penalty)
    };
    let col_of_row = hungarian(n, m, cost);

    let mut pairs = Vec::new();
    for (i, &j) in col_of_row.iter().enumerate() {
        let (r, c) = if transpose { (j, i) } else { (i, j) };
        if costs.get(r, c).is_some() {
            pairs.push((r, c));
        }
    }
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(r, c)| costs.get(r, c).unwrap()).sum();
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    for &(r, c) in &pairs {
        row_used[r] = true;
        col_used[c] = true;
    }
    Matching {
        pairs,
        unmatched_rows: (0..rows).filter(|&r| !row_used[r]).collect(),
        unmatched_cols: (0..cols).filter(|&c| !col_used[c]).collect(),
        total_cost,
    }
}

/// Minimum-cost assignment of every row of an `n x m` matrix (`n <= m`).
/// Returns the column assigned to each row.
fn hungarian(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    debug_assert!(n <= m);
    // 1-based potentials and matching; column 0 is a virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of_col = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0; n];
    for j in 1..=m {
        if row_of_col[j] != 0 {
            col_of_row[row_of_col[j] - 1] = j - 1;
        }
    }
    col_of_row
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_zero_gives_identity() {
        let m = CostMatrix::from_rows(&[
            vec![0.0, 5.0, 5.0],
            vec![5.0, 0.0, 5.0],
            vec![5.0, 5.0, 0.0],
        ]);
        let out = solve_assignment(&m);
        assert_eq!(out.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(out.total_cost, 0.0);
    }

    #[test]
    fn two_by_two_anti_diagonal() {
        let out = solve_assignment(&CostMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]));
        assert_eq!(out.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(out.total_cost, 4.0);
    }

    #[test]
    fn all_infeasible() {
        let out = solve_assignment(&CostMatrix::new(2, 3));
        assert!(out.pairs.is_empty());
        assert_eq!(out.unmatched_rows, vec![0, 1]);
        assert_eq!(out.unmatched_cols, vec![0, 1, 2]);
    }

    #[test]
    fn empty_matrix() {
        let out = solve_assignment(&CostMatrix::new(0, 4));
        assert!(out.pairs.is_empty());
        assert_eq!(out.unmatched_cols.len(), 4);
    }

    #[test]
    fn prefers_more_pairs_over_cheaper_ones() {
        // Row 0 alone could take col 0 at cost 0, but then row 1 has nothing.
        let mut m = CostMatrix::new(2, 2);
        m.set(0, 0, Some(0.0));
        m.set(0, 1, Some(0.9));
        m.set(1, 0, Some(0.9));
        let out = solve_assignment(&m);
        assert_eq!(out.pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn tall_matrix_is_transposed() {
        let out = solve_assignment(&CostMatrix::from_rows(&[
            vec![3.0],
            vec![1.0],
            vec![2.0],
        ]));
        assert_eq!(out.pairs, vec![(1, 0)]);
        assert_eq!(out.unmatched_rows, vec![0, 2]);
    }
}
