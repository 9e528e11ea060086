//! Exact optimisation of a linear function over one interval-distribution
//! feasible set, i.e. the inner `min`/`max` a nature resolves at every
//! Bellman update.
//!
//! The optimum of `Σ p(s')·v(s')` over `{l ≤ p ≤ u, Σp = 1}` is attained by a
//! greedy fill: start every entry at its lower bound and hand the remaining
//! mass to entries in ascending (min) or descending (max) value order, each
//! up to its upper bound. The LP dual would give the same optimum; the greedy
//! is O(k log k) and this is the innermost loop of value iteration.

use thiserror::Error;

use crate::model::IntervalRow;

#[derive(Debug, Error, PartialEq)]
pub enum RobustError {
    #[error("infeasible row: lower sum {lower_sum}, upper sum {upper_sum}")]
    InfeasibleRow { lower_sum: f64, upper_sum: f64 },
    #[error("vertex enumeration supports at most 8 targets, row has {0}")]
    TooManyTargets(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Min,
    Max,
}

/// One concrete distribution inside a row's feasible set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleDistribution {
    /// `(target state, probability)`, in row-entry order; probabilities are
    /// strictly positive because lower bounds are.
    pub probs: Vec<(usize, f64)>,
}

impl FeasibleDistribution {
    pub fn dot(&self, values: &[f64]) -> f64 {
        self.probs.iter().map(|&(t, p)| p * values[t]).sum()
    }

    pub fn total(&self) -> f64 {
        neumaier_sum(self.probs.iter().map(|&(_, p)| p))
    }

    pub fn prob_of(&self, target: usize) -> f64 {
        self.probs
            .iter()
            .find(|&&(t, _)| t == target)
            .map_or(0.0, |&(_, p)| p)
    }
}

/// Compensated (Neumaier) summation.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Exact extremum of `Σ p(s')·values(s')` over the feasible set of `row`,
/// together with the attaining distribution. Ties in value order break by
/// ascending state index so witnesses are deterministic.
pub fn robust_extremum(
    row: &IntervalRow,
    values: &[f64],
    direction: Direction,
) -> Result<(f64, FeasibleDistribution), RobustError> {
    robust_extremum_lex(row, values, &[], direction)
}

/// Like [`robust_extremum`] but with lexicographic tie resolution: among
/// distributions attaining the primary optimum, mass placement prefers
/// entries with smaller `tie_keys[0]`, then `tie_keys[1]`, and so on, then
/// ascending state index. Used by value iteration so that recorded nature
/// witnesses stay adversarial for the individual objectives whenever the
/// weighted value leaves slack.
pub fn robust_extremum_lex(
    row: &IntervalRow,
    values: &[f64],
    tie_keys: &[&[f64]],
    direction: Direction,
) -> Result<(f64, FeasibleDistribution), RobustError> {
    let entries = row.entries();
    let lower_sum = neumaier_sum(entries.iter().map(|e| e.lower));
    let upper_sum = neumaier_sum(entries.iter().map(|e| e.upper));
    if lower_sum > 1.0 + 1e-9 || upper_sum < 1.0 - 1e-9 {
        return Err(RobustError::InfeasibleRow {
            lower_sum,
            upper_sum,
        });
    }

    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&i, &j| {
        let (ti, tj) = (entries[i].target, entries[j].target);
        let primary = match direction {
            Direction::Min => values[ti].total_cmp(&values[tj]),
            Direction::Max => values[tj].total_cmp(&values[ti]),
        };
        primary
            .then_with(|| {
                for key in tie_keys {
                    let c = key[ti].total_cmp(&key[tj]);
                    if c != std::cmp::Ordering::Equal {
                        return c;
                    }
                }
                std::cmp::Ordering::Equal
            })
            .then(ti.cmp(&tj))
    });

    let mut probs: Vec<(usize, f64)> = entries.iter().map(|e| (e.target, e.lower)).collect();
    let mut remaining = 1.0 - lower_sum;
    for &i in &order {
        if remaining <= 0.0 {
            break;
        }
        let take = (entries[i].upper - entries[i].lower).min(remaining);
        probs[i].1 += take;
        remaining -= take;
    }

    let witness = FeasibleDistribution { probs };
    let value = witness.dot(values);
    Ok((value, witness))
}

/// All vertices of the feasible polytope `{l ≤ p ≤ u, Σp = 1}`.
///
/// At a vertex at most one coordinate sits strictly between its bounds, so it
/// suffices to pick the free coordinate and a lower/upper assignment for the
/// rest, keeping combinations where the free coordinate lands inside its
/// interval. Guarded to ≤ 8 targets; this is a test oracle, not a hot path.
pub fn vertex_enumerate(row: &IntervalRow) -> Result<Vec<FeasibleDistribution>, RobustError> {
    let entries = row.entries();
    let k = entries.len();
    if k > 8 {
        return Err(RobustError::TooManyTargets(k));
    }
    let lower_sum = neumaier_sum(entries.iter().map(|e| e.lower));
    let upper_sum = neumaier_sum(entries.iter().map(|e| e.upper));
    if lower_sum > 1.0 + 1e-9 || upper_sum < 1.0 - 1e-9 {
        return Err(RobustError::InfeasibleRow {
            lower_sum,
            upper_sum,
        });
    }

    let mut vertices: Vec<Vec<f64>> = Vec::new();
    for free in 0..k {
        for mask in 0..(1u32 << (k - 1)) {
            let mut p = vec![0.0; k];
            let mut bit = 0;
            for (i, e) in entries.iter().enumerate() {
                if i == free {
                    continue;
                }
                p[i] = if mask >> bit & 1 == 1 { e.upper } else { e.lower };
                bit += 1;
            }
            let rest: f64 = neumaier_sum(p.iter().copied());
            let free_val = 1.0 - rest;
            if free_val >= entries[free].lower - 1e-9 && free_val <= entries[free].upper + 1e-9 {
                p[free] = free_val.clamp(entries[free].lower, entries[free].upper);
                if !vertices
                    .iter()
                    .any(|q| q.iter().zip(&p).all(|(a, b)| (a - b).abs() <= 1e-9))
                {
                    vertices.push(p);
                }
            }
        }
    }
    Ok(vertices
        .into_iter()
        .map(|p| FeasibleDistribution {
            probs: entries
                .iter()
                .zip(p)
                .map(|(e, prob)| (e.target, prob))
                .collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{IntervalRow, RowEntry};

    fn row(entries: &[(usize, f64, f64)]) -> IntervalRow {
        IntervalRow::new(
            entries
                .iter()
                .map(|&(target, lower, upper)| RowEntry {
                    target,
                    lower,
                    upper,
                })
                .collect(),
        )
    }

    // Fig-style row: t=[1/3,2/3], u=[1/10,1] with targets interned as 0, 1.
    fn branch_row() -> IntervalRow {
        row(&[(0, 1.0 / 3.0, 2.0 / 3.0), (1, 0.1, 1.0)])
    }

    #[test]
    fn min_pushes_mass_off_the_valuable_state() {
        let values = [1.0, 0.0];
        let (v, w) = robust_extremum(&branch_row(), &values, Direction::Min).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
        assert!((w.prob_of(0) - 1.0 / 3.0).abs() < 1e-12);
        assert!((w.prob_of(1) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn max_fills_the_valuable_state_first() {
        let r = row(&[(0, 0.4, 0.6), (1, 0.25, 2.0 / 3.0)]);
        let values = [1.0, 0.0];
        let (v, w) = robust_extremum(&r, &values, Direction::Max).unwrap();
        assert!((v - 0.6).abs() < 1e-12);
        assert!((w.prob_of(0) - 0.6).abs() < 1e-12);
        assert!((w.prob_of(1) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn point_intervals_leave_no_choice() {
        let r = row(&[(0, 0.3, 0.3), (1, 0.7, 0.7)]);
        let values = [5.0, -2.0];
        let expected = 0.3 * 5.0 + 0.7 * (-2.0);
        for dir in [Direction::Min, Direction::Max] {
            let (v, _) = robust_extremum(&r, &values, dir).unwrap();
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn infeasible_rows_are_rejected() {
        let r = row(&[(0, 0.7, 0.8), (1, 0.5, 0.9)]);
        assert!(matches!(
            robust_extremum(&r, &[0.0, 0.0], Direction::Min),
            Err(RobustError::InfeasibleRow { .. })
        ));
        let r = row(&[(0, 0.1, 0.4)]);
        assert!(robust_extremum(&r, &[0.0], Direction::Max).is_err());
    }

    #[test]
    fn vertices_of_two_target_row() {
        let vs = vertex_enumerate(&branch_row()).unwrap();
        assert_eq!(vs.len(), 2);
        let mut pts: Vec<(f64, f64)> = vs.iter().map(|v| (v.prob_of(0), v.prob_of(1))).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((pts[0].0 - 1.0 / 3.0).abs() < 1e-12 && (pts[0].1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((pts[1].0 - 2.0 / 3.0).abs() < 1e-12 && (pts[1].1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn point_row_has_one_vertex() {
        let r = row(&[(0, 0.3, 0.3), (1, 0.7, 0.7)]);
        assert_eq!(vertex_enumerate(&r).unwrap().len(), 1);
    }

    #[test]
    fn symmetric_three_target_row_has_six_vertices() {
        let r = row(&[(0, 0.2, 0.5), (1, 0.2, 0.5), (2, 0.2, 0.5)]);
        let vs = vertex_enumerate(&r).unwrap();
        assert_eq!(vs.len(), 6);
        for v in &vs {
            let mut coords: Vec<f64> = v.probs.iter().map(|&(_, p)| p).collect();
            coords.sort_by(f64::total_cmp);
            assert!((coords[0] - 0.2).abs() < 1e-9);
            assert!((coords[1] - 0.3).abs() < 1e-9);
            assert!((coords[2] - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn too_many_targets_guard() {
        let entries: Vec<(usize, f64, f64)> = (0..9).map(|i| (i, 0.01, 1.0)).collect();
        assert!(matches!(
            vertex_enumerate(&row(&entries)),
            Err(RobustError::TooManyTargets(9))
        ));
    }

    #[test]
    fn lexicographic_ties_prefer_smaller_secondary() {
        // Primary values tie; the secondary key should steer mass toward
        // target 1 (smaller secondary) under Min.
        let r = branch_row();
        let primary = [0.0, 0.0];
        let secondary = [1.0, 0.0];
        let (_, w) =
            robust_extremum_lex(&r, &primary, &[&secondary], Direction::Min).unwrap();
        assert!((w.prob_of(1) - 2.0 / 3.0).abs() < 1e-12);
        assert!((w.prob_of(0) - 1.0 / 3.0).abs() < 1e-12);
    }
}
