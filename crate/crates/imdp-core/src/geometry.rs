//! Achievability-set geometry: downward-closure membership, separating
//! weight vectors, mixture weights over achieved points, and the 2-D Pareto
//! frontier bookkeeping used by the query drivers.

use thiserror::Error;

use crate::lp::{solve_lp, LpError, LpOutcome, LpProblem, Rel};

/// Floor used to realise the strict `w[i] > 0` separation constraint.
pub const POSITIVE_COORD_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point has dimension {got}, point set has dimension {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("operation requires dimension 2, point set has dimension {0}")]
    NotTwoDimensional(usize),
    #[error("operation requires a nonempty point set")]
    EmptySet,
    #[error("separation requested for a point inside the closure (margin {0})")]
    InsideClosure(f64),
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// A vector on the probability simplex: every component nonnegative, summing
/// to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Clamps tiny negative components to zero and renormalises, so the
    /// invariants hold exactly even for solver output.
    pub fn new(mut w: Vec<f64>) -> Self {
        for v in &mut w {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let sum: f64 = w.iter().sum();
        if sum > 0.0 {
            for v in &mut w {
                *v /= sum;
            }
        } else if !w.is_empty() {
            let n = w.len() as f64;
            for v in &mut w {
                *v = 1.0 / n;
            }
        }
        WeightVector(w)
    }

    pub fn uniform(dim: usize) -> Self {
        WeightVector(vec![1.0 / dim as f64; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.0.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Achieved reward vectors with per-point strategy handles and the weight
/// vectors that produced each point.
#[derive(Debug, Clone, Default)]
pub struct PointSet {
    dim: usize,
    points: Vec<Vec<f64>>,
    tags: Vec<usize>,
    weights: Vec<Vec<Vec<f64>>>,
}

impl PointSet {
    pub fn new(dim: usize) -> Self {
        PointSet {
            dim,
            points: Vec::new(),
            tags: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn tag(&self, i: usize) -> usize {
        self.tags[i]
    }

    pub fn weights_of(&self, i: usize) -> &[Vec<f64>] {
        &self.weights[i]
    }

    /// Inserts a point, deduplicating within 1e-12 per coordinate; returns
    /// the point's index. The existing tag wins on a duplicate.
    pub fn push(&mut self, point: Vec<f64>, tag: usize) -> usize {
        assert_eq!(point.len(), self.dim, "point dimension mismatch");
        if let Some(i) = self
            .points
            .iter()
            .position(|p| p.iter().zip(&point).all(|(a, b)| (a - b).abs() <= 1e-12))
        {
            return i;
        }
        self.points.push(point);
        self.tags.push(tag);
        self.weights.push(Vec::new());
        self.points.len() - 1
    }

    /// Records `w` as a weight that produced point `index`; returns whether
    /// the weight was new for that point.
    pub fn add_weight(&mut self, index: usize, w: &WeightVector) -> bool {
        let ws = &mut self.weights[index];
        if ws
            .iter()
            .any(|v| v.iter().zip(w.as_slice()).all(|(a, b)| (a - b).abs() <= 1e-12))
        {
            return false;
        }
        ws.push(w.as_slice().to_vec());
        true
    }
}

fn check_dim(set: &PointSet, r: &[f64]) -> Result<(), GeometryError> {
    if r.len() != set.dim() {
        return Err(GeometryError::DimensionMismatch {
            got: r.len(),
            expected: set.dim(),
        });
    }
    Ok(())
}

/// Is `r` dominated by a convex combination of the set? The empty set has an
/// empty closure.
pub fn in_downward_closure(set: &PointSet, r: &[f64]) -> Result<bool, GeometryError> {
    check_dim(set, r)?;
    if set.is_empty() {
        return Ok(false);
    }
    // max t  s.t.  Σλ = 1, λ ≥ 0, Σᵢ λᵢ xᵢⱼ − t ≥ rⱼ; member iff t* ≥ 0.
    let m = set.len();
    let n = set.dim();
    let mut obj = vec![0.0; m + 1];
    obj[m] = 1.0;
    let mut p = LpProblem::new(obj);
    p.free_var(m);
    let mut simplex_row = vec![1.0; m + 1];
    simplex_row[m] = 0.0;
    p.constraint(simplex_row, Rel::Eq, 1.0);
    for j in 0..n {
        let mut row: Vec<f64> = set.points().iter().map(|x| x[j]).collect();
        row.push(-1.0);
        p.constraint(row, Rel::Ge, r[j]);
    }
    match solve_lp(&p)? {
        LpOutcome::Optimal { x, .. } => Ok(x[m] >= -1e-9),
        LpOutcome::Infeasible => Ok(false),
        LpOutcome::Unbounded => Ok(true),
    }
}

/// A separating weight vector for a point outside the closure, maximizing the
/// margin `min_i (w·r − w·xᵢ)`. With `positive_coord` set, that coordinate is
/// floored at 1e-6 (strict inequalities are not expressible in an LP). The
/// empty set separates with uniform weights.
pub fn separating_weight(
    set: &PointSet,
    r: &[f64],
    positive_coord: Option<usize>,
) -> Result<(WeightVector, f64), GeometryError> {
    check_dim(set, r)?;
    let n = set.dim();
    if set.is_empty() {
        return Ok((WeightVector::uniform(n), f64::INFINITY));
    }
    // Variables: w (n, ≥0), t free. max t  s.t. Σw = 1, w·(r − xᵢ) ≥ t.
    let mut obj = vec![0.0; n + 1];
    obj[n] = 1.0;
    let mut p = LpProblem::new(obj);
    p.free_var(n);
    let mut simplex_row = vec![1.0; n + 1];
    simplex_row[n] = 0.0;
    p.constraint(simplex_row, Rel::Eq, 1.0);
    for x in set.points() {
        let mut row: Vec<f64> = r.iter().zip(x).map(|(rj, xj)| rj - xj).collect();
        row.push(-1.0);
        p.constraint(row, Rel::Ge, 0.0);
    }
    if let Some(c) = positive_coord {
        let mut row = vec![0.0; n + 1];
        row[c] = 1.0;
        p.constraint(row, Rel::Ge, POSITIVE_COORD_FLOOR);
    }
    match solve_lp(&p)? {
        LpOutcome::Optimal { x, .. } => {
            let margin = x[n];
            if margin < -1e-9 {
                return Err(GeometryError::InsideClosure(margin));
            }
            Ok((WeightVector::new(x[..n].to_vec()), margin))
        }
        // The positive-coordinate floor can clash with the margin
        // constraints only if r is deep inside the closure.
        LpOutcome::Infeasible => Err(GeometryError::InsideClosure(f64::NEG_INFINITY)),
        LpOutcome::Unbounded => unreachable!("margin is bounded by any fixed w"),
    }
}

/// Probabilities over the set's points whose mixture dominates `r`, or `None`
/// when no mixture does. Among feasible mixtures the minimum componentwise
/// slack is maximized, with each component's slack scaled by the spread of
/// that coordinate across the point set so the tie-break is scale-free.
pub fn mixture_weights(set: &PointSet, r: &[f64]) -> Result<Option<Vec<f64>>, GeometryError> {
    check_dim(set, r)?;
    if set.is_empty() {
        return Ok(None);
    }
    let m = set.len();
    let n = set.dim();
    let mut scale = vec![1.0; n];
    for (j, sc) in scale.iter_mut().enumerate() {
        let lo = set.points().iter().map(|x| x[j]).fold(f64::INFINITY, f64::min);
        let hi = set
            .points()
            .iter()
            .map(|x| x[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if hi - lo > 1e-12 {
            *sc = hi - lo;
        }
    }
    let mut obj = vec![0.0; m + 1];
    obj[m] = 1.0;
    let mut p = LpProblem::new(obj);
    p.free_var(m);
    let mut simplex_row = vec![1.0; m + 1];
    simplex_row[m] = 0.0;
    p.constraint(simplex_row, Rel::Eq, 1.0);
    for j in 0..n {
        let mut row: Vec<f64> = set.points().iter().map(|x| x[j]).collect();
        row.push(-scale[j]);
        p.constraint(row, Rel::Ge, r[j]);
    }
    match solve_lp(&p)? {
        LpOutcome::Optimal { x, .. } => {
            if x[m] < -1e-9 {
                return Ok(None);
            }
            Ok(Some(WeightVector::new(x[..m].to_vec()).as_slice().to_vec()))
        }
        LpOutcome::Infeasible => Ok(None),
        LpOutcome::Unbounded => Ok(Some(WeightVector::uniform(m).as_slice().to_vec())),
    }
}

/// Pareto frontier vertices of a 2-D point set: dominated and chord-interior
/// points removed, sorted ascending in the first coordinate and descending in
/// the second.
pub fn pareto_frontier_2d(set: &PointSet) -> Result<Vec<[f64; 2]>, GeometryError> {
    Ok(pareto_frontier_indices_2d(set)?
        .into_iter()
        .map(|i| [set.point(i)[0], set.point(i)[1]])
        .collect())
}

/// Index variant of [`pareto_frontier_2d`], for callers that need the
/// per-point bookkeeping of the surviving vertices.
pub fn pareto_frontier_indices_2d(set: &PointSet) -> Result<Vec<usize>, GeometryError> {
    if set.dim() != 2 {
        return Err(GeometryError::NotTwoDimensional(set.dim()));
    }
    let pts = set.points();
    let scale = pts
        .iter()
        .flat_map(|p| p.iter().map(|v| v.abs()))
        .fold(1.0f64, f64::max);
    let tol = 1e-9 * scale;

    // Non-dominated points only.
    let mut idx: Vec<usize> = (0..pts.len())
        .filter(|&i| {
            !(0..pts.len()).any(|j| {
                j != i
                    && pts[j][0] >= pts[i][0] - 1e-15
                    && pts[j][1] >= pts[i][1] - 1e-15
                    && (pts[j][0] > pts[i][0] + 1e-15 || pts[j][1] > pts[i][1] + 1e-15)
            })
        })
        .collect();
    idx.sort_by(|&i, &j| {
        pts[i][0]
            .total_cmp(&pts[j][0])
            .then(pts[j][1].total_cmp(&pts[i][1]))
    });
    idx.dedup_by(|&mut i, &mut j| {
        (pts[i][0] - pts[j][0]).abs() <= 1e-15 && (pts[i][1] - pts[j][1]).abs() <= 1e-15
    });

    // Concave-chain filter: drop any vertex on or below the chord of its
    // neighbours.
    let mut out: Vec<usize> = Vec::new();
    for &i in &idx {
        while out.len() >= 2 {
            let a = &pts[out[out.len() - 2]];
            let b = &pts[out[out.len() - 1]];
            let c = &pts[i];
            let cross = (c[0] - a[0]) * (b[1] - a[1]) - (c[1] - a[1]) * (b[0] - a[0]);
            if cross <= tol {
                out.pop();
            } else {
                break;
            }
        }
        out.push(i);
    }
    Ok(out)
}

/// Euclidean distance from `p` to the downward closure of the convex hull of
/// a 2-D point set: zero inside, otherwise the distance to the frontier
/// polyline extended by its two axis-parallel boundary rays.
pub fn distance_to_dwc_2d(set: &PointSet, p: &[f64]) -> Result<f64, GeometryError> {
    if set.dim() != 2 {
        return Err(GeometryError::NotTwoDimensional(set.dim()));
    }
    if set.is_empty() {
        return Err(GeometryError::EmptySet);
    }
    check_dim(set, p)?;
    let front = pareto_frontier_2d(set)?;
    let (px, py) = (p[0], p[1]);

    // Inside test against the upper envelope.
    let first = front[0];
    let last = front[front.len() - 1];
    let envelope = |x: f64| -> f64 {
        if x <= first[0] {
            return first[1];
        }
        for w in front.windows(2) {
            if x <= w[1][0] {
                let t = (x - w[0][0]) / (w[1][0] - w[0][0]);
                return w[0][1] + t * (w[1][1] - w[0][1]);
            }
        }
        f64::NEG_INFINITY
    };
    if px <= last[0] && py <= envelope(px) + 1e-15 {
        return Ok(0.0);
    }

    let seg_dist = |a: [f64; 2], b: [f64; 2]| -> f64 {
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((px - a[0]) * dx + (py - a[1]) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
        ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
    };

    let mut best = f64::INFINITY;
    for w in front.windows(2) {
        best = best.min(seg_dist(w[0], w[1]));
    }
    // Horizontal ray leftward from the first vertex.
    best = best.min(if px <= first[0] {
        (py - first[1]).abs()
    } else {
        seg_dist(first, first)
    });
    // Vertical ray downward from the last vertex.
    best = best.min(if py <= last[1] {
        (px - last[0]).abs()
    } else {
        seg_dist(last, last)
    });
    Ok(best)
}
