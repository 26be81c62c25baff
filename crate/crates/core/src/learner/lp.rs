//! Small dense linear programs.
//!
//! [`maximize`] solves `max c.z  s.t.  G z <= h` over free `z` by running a
//! two-phase tableau simplex (Bland's rule) on the dual
//! `min h.y  s.t.  G^T y = c, y >= 0`, then recovering `z` from the rows of
//! `G` that are basic in the optimal dual basis. The dual has one equality
//! row per primal variable, which stays tiny even with thousands of primal
//! constraints.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;
const MAX_PIVOTS: usize = 50_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub z: Vec<f64>,
    pub objective: f64,
}

struct Tableau {
    /// `rows x (cols + 1)`; the last column is the right-hand side.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let piv = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= piv;
        }
        let prow = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(&prow) {
                    *v -= f * p;
                }
            }
        }
        self.basis[r] = c;
    }

    /// Minimize `cost . x` over the current basic feasible solution using
    /// Bland's rule, restricted to columns where `allowed` is true.
    fn optimize(&mut self, cost: &[f64], allowed: &dyn Fn(usize) -> bool) -> Result<()> {
        let rhs = self.cols;
        for _ in 0..MAX_PIVOTS {
            // Reduced costs d_j = c_j - c_B . T_j.
            let mut enter = None;
            for j in 0..self.cols {
                if !allowed(j) || self.basis.contains(&j) {
                    continue;
                }
                let d = cost[j]
                    - self
                        .basis
                        .iter()
                        .enumerate()
                        .map(|(i, &b)| cost[b] * self.t[i][j])
                        .sum::<f64>();
                if d < -1e-10 {
                    enter = Some(j);
                    break;
                }
            }
            let Some(c) = enter else { return Ok(()) };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.t.len() {
                let a = self.t[i][c];
                if a > PIVOT_TOL {
                    let ratio = self.t[i][rhs] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-12
                                || (ratio <= lr + 1e-12 && self.basis[i] < self.basis[li])
                            {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Err(Error::Lp("unbounded".into()));
            };
            self.pivot(r, c);
        }
        Err(Error::Lp("pivot limit reached".into()))
    }
}

/// Solve `min cost.y  s.t.  a y = b, y >= 0`. Returns the optimal basis
/// (column indices, one per row kept) and `y`.
fn standard_form(a: &[Vec<f64>], b: &[f64], cost: &[f64]) -> Result<(Vec<usize>, Vec<f64>)> {
    let m = a.len();
    let n = cost.len();
    let mut t = Vec::with_capacity(m);
    for i in 0..m {
        let s = if b[i] < 0.0 { -1.0 } else { 1.0 };
        let mut row: Vec<f64> = a[i].iter().map(|v| s * v).collect();
        row.extend((0..m).map(|k| if k == i { 1.0 } else { 0.0 }));
        row.push(s * b[i]);
        t.push(row);
    }
    let mut tab = Tableau { t, basis: (n..n + m).collect(), cols: n + m };
    let phase1: Vec<f64> = (0..n + m).map(|j| if j >= n { 1.0 } else { 0.0 }).collect();
    tab.optimize(&phase1, &|_| true)?;
    let infeas: f64 = tab
        .basis
        .iter()
        .enumerate()
        .filter(|(_, &b)| b >= n)
        .map(|(i, _)| tab.t[i][n + m])
        .sum();
    let scale = 1.0 + b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if infeas > 1e-9 * scale {
        return Err(Error::Lp("infeasible".into()));
    }
    // Drive remaining artificials out of the basis.
    let mut r = 0;
    while r < tab.t.len() {
        if tab.basis[r] >= n {
            let col = (0..n)
                .filter(|j| !tab.basis.contains(j))
                .find(|&j| tab.t[r][j].abs() > 1e-9);
            match col {
                Some(c) => tab.pivot(r, c),
                None => {
                    tab.t.remove(r);
                    tab.basis.remove(r);
                    continue;
                }
            }
        }
        r += 1;
    }
    let mut full_cost = cost.to_vec();
    full_cost.extend(std::iter::repeat_n(0.0, m));
    tab.optimize(&full_cost, &|j| j < n)?;
    let mut y = vec![0.0; n];
    for (i, &bv) in tab.basis.iter().enumerate() {
        y[bv] = tab.t[i][n + m];
    }
    Ok((tab.basis, y))
}

/// `max c.z  s.t.  g z <= h` over free `z`. The problem must be feasible
/// and bounded.
pub fn maximize(c: &[f64], g: &[Vec<f64>], h: &[f64]) -> Result<LpSolution> {
    let nz = c.len();
    let ncon = g.len();
    if h.len() != ncon || g.iter().any(|r| r.len() != nz) {
        return Err(Error::Lp("dimension mismatch".into()));
    }
    // Dual: rows are primal variables, columns are primal constraints.
    let a: Vec<Vec<f64>> = (0..nz).map(|j| g.iter().map(|row| row[j]).collect()).collect();
    let (basis, _y) = standard_form(&a, c, h)?;
    if basis.len() != nz {
        return Err(Error::Lp("degenerate dual basis".into()));
    }
    let gb = DMatrix::from_fn(nz, nz, |i, j| g[basis[i]][j]);
    let hb = DVector::from_fn(nz, |i, _| h[basis[i]]);
    let z = gb
        .lu()
        .solve(&hb)
        .ok_or_else(|| Error::Lp("singular active set".into()))?;
    let z: Vec<f64> = z.iter().copied().collect();
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Lp("non-finite solution".into()));
    }
    let objective = c.iter().zip(&z).map(|(a, b)| a * b).sum();
    Ok(LpSolution { z, objective })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_box() {
        // max x + y  s.t.  x <= 1, y <= 2, x + y <= 2.5, -x <= 0, -y <= 0
        let g = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
            vec![-1.0, 0.0],
            vec![0.0, -1.0],
        ];
        let h = vec![1.0, 2.0, 2.5, 0.0, 0.0];
        let s = maximize(&[1.0, 1.0], &g, &h).unwrap();
        assert!((s.objective - 2.5).abs() < 1e-12);
        for (row, hi) in g.iter().zip(&h) {
            let lhs: f64 = row.iter().zip(&s.z).map(|(a, b)| a * b).sum();
            assert!(lhs <= hi + 1e-12);
        }
    }

    #[test]
    fn negative_rhs_and_free_vars() {
        // max -x  s.t.  -x <= -3  (x >= 3), x <= 10
        let s = maximize(&[-1.0], &[vec![-1.0], vec![1.0]], &[-3.0, 10.0]).unwrap();
        assert!((s.z[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn unbounded_is_reported() {
        assert!(maximize(&[1.0], &[vec![-1.0]], &[0.0]).is_err());
    }

    #[test]
    fn degenerate_redundant_constraints() {
        // Many copies of the same constraint.
        let g = vec![vec![1.0]; 6].into_iter().chain([vec![-1.0]]).collect::<Vec<_>>();
        let h = vec![4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 1.0];
        let s = maximize(&[2.0], &g, &h).unwrap();
        assert!((s.objective - 8.0).abs() < 1e-12);
    }
}
