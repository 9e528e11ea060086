//! Dense two-phase simplex for the tiny linear programs behind the geometry
//! layer (membership, separation, mixture weights).
//!
//! All problems here have a handful of variables and constraints, so a plain
//! tableau with Bland's anti-cycling rule is the right tool: deterministic,
//! dependency-free and exact within the stated tolerances.

use thiserror::Error;

/// Feasibility / optimality tolerance.
pub const LP_TOL: f64 = 1e-9;
/// Pivot magnitude below which a column entry is treated as zero.
const PIVOT_TOL: f64 = 1e-11;

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("constraint {index} has {got} coefficients, expected {expected}")]
    DimensionMismatch {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("nonneg flags have length {got}, expected {expected}")]
    FlagMismatch { got: usize, expected: usize },
    #[error("simplex did not terminate within {0} pivots")]
    PivotLimit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rel {
    Le,
    Eq,
    Ge,
}

/// `maximize objective · x` subject to the listed constraints; variables with
/// `nonneg[i] == false` are free.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub constraints: Vec<(Vec<f64>, Rel, f64)>,
    pub nonneg: Vec<bool>,
}

impl LpProblem {
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        LpProblem {
            objective,
            constraints: Vec::new(),
            nonneg: vec![true; n],
        }
    }

    pub fn constraint(&mut self, coeffs: Vec<f64>, rel: Rel, rhs: f64) -> &mut Self {
        self.constraints.push((coeffs, rel, rhs));
        self
    }

    pub fn free_var(&mut self, index: usize) -> &mut Self {
        self.nonneg[index] = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    rows: Vec<Vec<f64>>, // m rows of length ncols, plus rhs at the end
    cost: Vec<f64>,      // reduced costs, length ncols + 1 (value in last cell)
    basis: Vec<usize>,
    ncols: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.ncols]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.rows[row][col];
        for v in self.rows[row].iter_mut() {
            *v /= piv;
        }
        let pivot_row = self.rows[row].clone();
        for (i, r) in self.rows.iter_mut().enumerate() {
            if i == row {
                continue;
            }
            let factor = r[col];
            if factor.abs() > 0.0 {
                for (v, p) in r.iter_mut().zip(&pivot_row) {
                    *v -= factor * p;
                }
            }
        }
        let factor = self.cost[col];
        if factor.abs() > 0.0 {
            for (v, p) in self.cost.iter_mut().zip(&pivot_row) {
                *v -= factor * p;
            }
        }
        self.basis[row] = col;
    }

    /// Installs the reduced-cost row for objective `c` under the current
    /// basis: `cost = c − Σ_i c[basis_i]·row_i`.
    fn set_objective(&mut self, c: &[f64]) {
        self.cost = vec![0.0; self.ncols + 1];
        self.cost[..c.len()].copy_from_slice(c);
        for i in 0..self.rows.len() {
            let cb = if self.basis[i] < c.len() {
                c[self.basis[i]]
            } else {
                0.0
            };
            if cb != 0.0 {
                let row = self.rows[i].clone();
                for (v, r) in self.cost.iter_mut().zip(&row) {
                    *v -= cb * r;
                }
            }
        }
    }

    /// One phase of Bland-rule simplex, maximizing. `allowed` limits the
    /// entering columns. Returns false when the problem is unbounded.
    fn run(&mut self, allowed: usize, pivots_left: &mut usize) -> Result<bool, LpError> {
        loop {
            let entering = (0..allowed).find(|&j| self.cost[j] > LP_TOL);
            let Some(col) = entering else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][col];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i) / a;
                    let better = match leave {
                        None => true,
                        Some((best_row, best)) => {
                            ratio < best - PIVOT_TOL
                                || (ratio <= best + PIVOT_TOL
                                    && self.basis[i] < self.basis[best_row])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((row, _)) = leave else {
                return Ok(false);
            };
            if *pivots_left == 0 {
                return Err(LpError::PivotLimit(MAX_PIVOTS));
            }
            *pivots_left -= 1;
            self.pivot(row, col);
        }
    }
}

const MAX_PIVOTS: usize = 100_000;

/// Solves the program with two-phase simplex. Free variables are split into
/// positive and negative parts internally.
pub fn solve_lp(problem: &LpProblem) -> Result<LpOutcome, LpError> {
    let n = problem.objective.len();
    if problem.nonneg.len() != n {
        return Err(LpError::FlagMismatch {
            got: problem.nonneg.len(),
            expected: n,
        });
    }
    for (i, (coeffs, _, _)) in problem.constraints.iter().enumerate() {
        if coeffs.len() != n {
            return Err(LpError::DimensionMismatch {
                index: i,
                got: coeffs.len(),
                expected: n,
            });
        }
    }

    // Column layout: one column per nonnegative variable, two per free
    // variable, then slacks/surpluses, then artificials.
    let mut col_of = Vec::with_capacity(n); // var -> (pos col, Option<neg col>)
    let mut next = 0usize;
    for i in 0..n {
        if problem.nonneg[i] {
            col_of.push((next, None));
            next += 1;
        } else {
            col_of.push((next, Some(next + 1)));
            next += 2;
        }
    }
    let nvars = next;
    let m = problem.constraints.len();
    let n_slack = problem
        .constraints
        .iter()
        .filter(|(_, rel, _)| *rel != Rel::Eq)
        .count();
    let n_art = problem
        .constraints
        .iter()
        .filter(|(_, rel, _)| *rel != Rel::Le)
        .count();
    // A `≤` row with negative rhs flips to `≥` and needs an artificial too,
    // so reserve conservatively.
    let ncols = nvars + n_slack + m.max(n_art);

    let mut rows = vec![vec![0.0; ncols + 1]; m];
    let mut basis = vec![usize::MAX; m];
    let mut slack_cursor = nvars;
    let mut art_cursor = nvars + n_slack;
    let mut artificials = Vec::new();

    for (i, (coeffs, rel, rhs)) in problem.constraints.iter().enumerate() {
        let flip = *rhs < 0.0;
        let sign = if flip { -1.0 } else { 1.0 };
        for (v, &(cp, cn)) in coeffs.iter().zip(&col_of) {
            rows[i][cp] = sign * v;
            if let Some(cn) = cn {
                rows[i][cn] = -sign * v;
            }
        }
        rows[i][ncols] = sign * rhs;
        let rel = match (rel, flip) {
            (Rel::Le, false) | (Rel::Ge, true) => Rel::Le,
            (Rel::Ge, false) | (Rel::Le, true) => Rel::Ge,
            (Rel::Eq, _) => Rel::Eq,
        };
        match rel {
            Rel::Le => {
                rows[i][slack_cursor] = 1.0;
                basis[i] = slack_cursor;
                slack_cursor += 1;
            }
            Rel::Ge => {
                rows[i][slack_cursor] = -1.0;
                slack_cursor += 1;
                rows[i][art_cursor] = 1.0;
                basis[i] = art_cursor;
                artificials.push(art_cursor);
                art_cursor += 1;
            }
            Rel::Eq => {
                rows[i][art_cursor] = 1.0;
                basis[i] = art_cursor;
                artificials.push(art_cursor);
                art_cursor += 1;
            }
        }
    }

    let mut t = Tableau {
        rows,
        cost: Vec::new(),
        basis,
        ncols,
    };
    let mut pivots = MAX_PIVOTS;

    // Phase 1: drive artificials to zero.
    if !artificials.is_empty() {
        let mut c1 = vec![0.0; ncols];
        for &a in &artificials {
            c1[a] = -1.0;
        }
        t.set_objective(&c1);
        let bounded = t.run(ncols, &mut pivots)?;
        debug_assert!(bounded, "phase 1 is bounded by construction");
        // The cost row's value cell holds the negated objective, i.e. the
        // remaining artificial mass.
        if t.cost[ncols] > LP_TOL {
            return Ok(LpOutcome::Infeasible);
        }
        // Pivot leftover artificials out of the basis where possible.
        for i in 0..t.rows.len() {
            if artificials.contains(&t.basis[i]) {
                if let Some(col) =
                    (0..nvars + n_slack).find(|&j| t.rows[i][j].abs() > 1e-7)
                {
                    t.pivot(i, col);
                }
            }
        }
    }

    // Phase 2: artificial columns are never allowed to re-enter.
    let mut c2 = vec![0.0; ncols];
    for (v, &(cp, cn)) in problem.objective.iter().zip(&col_of) {
        c2[cp] = *v;
        if let Some(cn) = cn {
            c2[cn] = -v;
        }
    }
    for &a in &artificials {
        c2[a] = 0.0;
    }
    t.set_objective(&c2);
    if !t.run(nvars + n_slack, &mut pivots)? {
        return Ok(LpOutcome::Unbounded);
    }

    let mut dense = vec![0.0; ncols];
    for (i, &b) in t.basis.iter().enumerate() {
        if b < ncols {
            dense[b] = t.rhs(i);
        }
    }
    let x: Vec<f64> = col_of
        .iter()
        .map(|&(cp, cn)| dense[cp] - cn.map_or(0.0, |c| dense[c]))
        .collect();
    let objective = problem
        .objective
        .iter()
        .zip(&x)
        .map(|(c, v)| c * v)
        .sum();
    Ok(LpOutcome::Optimal { x, objective })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_single_variable() {
        let mut p = LpProblem::new(vec![1.0]);
        p.constraint(vec![1.0], Rel::Le, 1.0);
        match solve_lp(&p).unwrap() {
            LpOutcome::Optimal { x, objective } => {
                assert!((x[0] - 1.0).abs() < 1e-9);
                assert!((objective - 1.0).abs() < 1e-9);
            }
            other => panic!("expected optimal, got {other:?}"),
        }
    }

    #[test]
    fn missing_upper_bound_is_unbounded() {
        let p = LpProblem::new(vec![1.0]);
        assert_eq!(solve_lp(&p).unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let mut p = LpProblem::new(vec![0.0]);
        p.constraint(vec![1.0], Rel::Le, -1.0);
        assert_eq!(solve_lp(&p).unwrap(), LpOutcome::Infeasible);
    }

    #[test]
    fn equality_and_free_variables() {
        // max t  s.t.  x + t = 1, x - t = 0.2, x >= 0, t free -> t = 0.4
        let mut p = LpProblem::new(vec![0.0, 1.0]);
        p.constraint(vec![1.0, 1.0], Rel::Eq, 1.0);
        p.constraint(vec![1.0, -1.0], Rel::Eq, 0.2);
        p.free_var(1);
        match solve_lp(&p).unwrap() {
            LpOutcome::Optimal { x, .. } => {
                assert!((x[0] - 0.6).abs() < 1e-9);
                assert!((x[1] - 0.4).abs() < 1e-9);
            }
            other => panic!("expected optimal, got {other:?}"),
        }
    }

    #[test]
    fn free_variable_can_go_negative() {
        // max -t s.t. t >= -3 (t free) -> t = -3.
        let mut p = LpProblem::new(vec![-1.0]);
        p.free_var(0);
        p.constraint(vec![1.0], Rel::Ge, -3.0);
        match solve_lp(&p).unwrap() {
            LpOutcome::Optimal { x, objective } => {
                assert!((x[0] + 3.0).abs() < 1e-9);
                assert!((objective - 3.0).abs() < 1e-9);
            }
            other => panic!("expected optimal, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut p = LpProblem::new(vec![1.0, 2.0]);
        p.constraint(vec![1.0], Rel::Le, 1.0);
        assert!(matches!(
            solve_lp(&p),
            Err(LpError::DimensionMismatch { index: 0, .. })
        ));
    }

    #[test]
    fn degenerate_problem_terminates() {
        // Classic cycling-prone instance; Bland's rule must terminate.
        let mut p = LpProblem::new(vec![0.75, -150.0, 0.02, -6.0]);
        p.constraint(vec![0.25, -60.0, -0.04, 9.0], Rel::Le, 0.0);
        p.constraint(vec![0.5, -90.0, -0.02, 3.0], Rel::Le, 0.0);
        p.constraint(vec![0.0, 0.0, 1.0, 0.0], Rel::Le, 1.0);
        match solve_lp(&p).unwrap() {
            LpOutcome::Optimal { objective, .. } => {
                assert!((objective - 0.05).abs() < 1e-6);
            }
            other => panic!("expected optimal, got {other:?}"),
        }
    }
}
