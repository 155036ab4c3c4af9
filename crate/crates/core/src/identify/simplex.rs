//! Dense two-phase primal simplex for `min cᵀx  s.t.  Ax = b, x ≥ 0`.
//!
//! Pivoting follows Bland's rule (lowest-index entering column, lowest-index
//! leaving variable among ratio ties), which rules out cycling on degenerate
//! problems. Phase one is solved once; [`FeasibleBasis::minimize`] then
//! reuses the feasible basis for any number of objectives.

use thiserror::Error;

const PIVOT_EPS: f64 = 1e-11;
/// Phase-one objective above this means the system is infeasible.
pub const FEASIBILITY_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("no feasible point (phase-one objective {0:e})")]
    Infeasible(f64),
    #[error("objective is unbounded below")]
    Unbounded,
    #[error("pivot limit {0} reached")]
    PivotLimit(usize),
    #[error("constraint matrix is {rows}×{cols} but right-hand side has length {rhs}")]
    Dimension {
        rows: usize,
        cols: usize,
        rhs: usize,
    },
}

#[derive(Debug, Clone)]
struct Tableau {
    /// Constraint rows, each `cols` coefficients followed by the rhs.
    rows: Vec<Vec<f64>>,
    cols: usize,
    basis: Vec<usize>,
}

impl Tableau {
    fn pivot(&mut self, costs: &mut [f64], r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
            let rhs = row.last_mut().expect("rhs");
            if rhs.abs() < PIVOT_EPS {
                *rhs = 0.0;
            }
        }
        let f = costs[c];
        if f != 0.0 {
            for (v, pv) in costs.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            costs[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Runs Bland-rule pivots over columns `0..allowed` until optimal.
    /// `costs` holds reduced costs followed by the negated objective value.
    fn optimize(&mut self, costs: &mut [f64], allowed: usize) -> Result<(), LpError> {
        for _ in 0..MAX_PIVOTS {
            let Some(enter) = (0..allowed).find(|&j| costs[j] < -PIVOT_EPS) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                let a = row[enter];
                if a <= PIVOT_EPS {
                    continue;
                }
                let ratio = row[self.cols] / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((best, best_ratio)) => {
                        if ratio < best_ratio - PIVOT_EPS
                            || (ratio <= best_ratio + PIVOT_EPS && self.basis[i] < self.basis[best])
                        {
                            Some((i, ratio))
                        } else {
                            Some((best, best_ratio))
                        }
                    }
                };
            }
            let Some((r, _)) = leave else {
                return Err(LpError::Unbounded);
            };
            self.pivot(costs, r, enter);
        }
        Err(LpError::PivotLimit(MAX_PIVOTS))
    }

    fn solution(&self, n: usize) -> Vec<f64> {
        let mut x = vec![0.0; n];
        for (row, &b) in self.rows.iter().zip(&self.basis) {
            if b < n {
                x[b] = row[self.cols].max(0.0);
            }
        }
        x
    }
}

/// A basic feasible solution of `Ax = b, x ≥ 0` with redundant rows removed.
#[derive(Debug, Clone)]
pub struct FeasibleBasis {
    tableau: Tableau,
    n: usize,
}

impl FeasibleBasis {
    /// Phase one: finds a feasible basis or reports infeasibility.
    /// `a` is given row by row.
    pub fn new(a: &[Vec<f64>], b: &[f64]) -> Result<Self, LpError> {
        let m = a.len();
        let n = a.first().map_or(0, Vec::len);
        if b.len() != m || a.iter().any(|r| r.len() != n) {
            return Err(LpError::Dimension {
                rows: m,
                cols: n,
                rhs: b.len(),
            });
        }
        let cols = n + m;
        let mut rows = Vec::with_capacity(m);
        for (i, (ai, &bi)) in a.iter().zip(b).enumerate() {
            let sign = if bi < 0.0 { -1.0 } else { 1.0 };
            let mut row: Vec<f64> = ai.iter().map(|v| sign * v).collect();
            row.extend((0..m).map(|k| if k == i { 1.0 } else { 0.0 }));
            row.push(sign * bi);
            rows.push(row);
        }
        let mut tableau = Tableau {
            rows,
            cols,
            basis: (n..n + m).collect(),
        };
        // Phase-one costs: 1 on each artificial, reduced against the
        // all-artificial basis.
        let mut costs = vec![0.0; cols + 1];
        for row in &tableau.rows {
            for j in 0..n {
                costs[j] -= row[j];
            }
            costs[cols] -= row[cols];
        }
        tableau.optimize(&mut costs, cols)?;
        let infeasibility = -costs[cols];
        if infeasibility > FEASIBILITY_TOL {
            return Err(LpError::Infeasible(infeasibility));
        }

        // Drive remaining artificials out of the basis; rows where that is
        // impossible are linear combinations of others and are dropped.
        let mut r = 0;
        while r < tableau.rows.len() {
            if tableau.basis[r] >= n {
                if let Some(c) = (0..n).find(|&j| tableau.rows[r][j].abs() > 1e-9) {
                    tableau.pivot(&mut costs, r, c);
                } else {
                    tableau.rows.remove(r);
                    tableau.basis.remove(r);
                    continue;
                }
            }
            r += 1;
        }
        for row in &mut tableau.rows {
            let rhs = row[cols];
            row.truncate(n);
            row.push(rhs);
        }
        tableau.cols = n;
        Ok(Self { tableau, n })
    }

    /// The basic feasible point found by phase one.
    pub fn point(&self) -> Vec<f64> {
        self.tableau.solution(self.n)
    }

    /// Minimizes `cᵀx` over the feasible set; returns the value and a minimizer.
    pub fn minimize(&self, c: &[f64]) -> Result<(f64, Vec<f64>), LpError> {
        assert_eq!(c.len(), self.n, "objective length");
        let mut tableau = self.tableau.clone();
        let mut costs = vec![0.0; self.n + 1];
        costs[..self.n].copy_from_slice(c);
        for (row, &b) in tableau.rows.iter().zip(&tableau.basis) {
            let cb = c[b];
            if cb != 0.0 {
                for (cost, v) in costs.iter_mut().zip(row) {
                    *cost -= cb * v;
                }
            }
        }
        tableau.optimize(&mut costs, self.n)?;
        let x = tableau.solution(self.n);
        let value = c.iter().zip(&x).map(|(a, b)| a * b).sum();
        Ok((value, x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_lp_optimum() {
        // min -x0 - x1  s.t.  x0 + 2x1 + s0 = 4, 3x0 + x1 + s1 = 6
        let a = vec![vec![1.0, 2.0, 1.0, 0.0], vec![3.0, 1.0, 0.0, 1.0]];
        let basis = FeasibleBasis::new(&a, &[4.0, 6.0]).unwrap();
        let (v, x) = basis.minimize(&[-1.0, -1.0, 0.0, 0.0]).unwrap();
        assert!((v + 2.8).abs() < 1e-12, "{v}");
        assert!((x[0] - 1.6).abs() < 1e-12 && (x[1] - 1.2).abs() < 1e-12);
    }

    #[test]
    fn infeasible_system() {
        let a = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert!(matches!(
            FeasibleBasis::new(&a, &[1.0, 2.0]),
            Err(LpError::Infeasible(_))
        ));
        let neg = vec![vec![1.0, 1.0]];
        assert!(matches!(
            FeasibleBasis::new(&neg, &[-1.0]),
            Err(LpError::Infeasible(_))
        ));
    }

    #[test]
    fn redundant_rows_are_dropped() {
        let a = vec![
            vec![1.0, 1.0, 0.0],
            vec![2.0, 2.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let basis = FeasibleBasis::new(&a, &[1.0, 2.0, 0.5]).unwrap();
        let (lo, _) = basis.minimize(&[1.0, 0.0, 0.0]).unwrap();
        let (hi, _) = basis.minimize(&[-1.0, 0.0, 0.0]).unwrap();
        assert_eq!((lo, -hi), (0.0, 1.0));
    }

    #[test]
    fn unbounded_detected() {
        let a = vec![vec![1.0, -1.0]];
        let basis = FeasibleBasis::new(&a, &[0.0]).unwrap();
        assert_eq!(
            basis.minimize(&[-1.0, 0.0]).unwrap_err(),
            LpError::Unbounded
        );
    }

    #[test]
    fn degenerate_problem_terminates() {
        // Beale's classic cycling example under the textbook largest-coefficient rule.
        let a = vec![
            vec![0.25, -8.0, -1.0, 9.0, 1.0, 0.0, 0.0],
            vec![0.5, -12.0, -0.5, 3.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        ];
        let basis = FeasibleBasis::new(&a, &[0.0, 0.0, 1.0]).unwrap();
        let (v, _) = basis
            .minimize(&[-0.75, 20.0, -0.5, 6.0, 0.0, 0.0, 0.0])
            .unwrap();
        assert!((v + 1.25).abs() < 1e-12, "{v}");
    }
}
