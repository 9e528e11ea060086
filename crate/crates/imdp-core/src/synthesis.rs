//! Top-level query drivers: synthesis (is a threshold vector robustly
//! achievable?), quantitative optimisation of one objective under fixed
//! thresholds on the rest, and two-objective Pareto approximation.
//!
//! All three share the same loop shape: separate the target from the
//! downward closure of the achieved points, run one robust weighted value
//! iteration in the separating direction, and add the resulting strategy's
//! guarantee vector to the point set. Points entering the set are re-valued
//! with [`evaluate_strategy`], i.e. each objective under its own worst-case
//! nature, so that a positive answer always comes with strategies whose
//! honest guarantees cover the thresholds. The unachievability test keeps
//! using the weighted optimum itself, which upper-bounds every strategy's
//! weighted guarantee.

use thiserror::Error;

use crate::geometry::{
    distance_to_dwc_2d, in_downward_closure, mixture_weights, pareto_frontier_indices_2d,
    separating_weight, GeometryError, PointSet, WeightVector,
};
use crate::lp::{solve_lp, LpOutcome, LpProblem, Rel};
use crate::model::Imdp;
use crate::query::{
    prepare, BasicQuery, OptDirection, Query, QueryMode, TransformError,
};
use crate::robust::Direction;
use crate::vi::{
    evaluate_strategy, single_objective_extremum, weighted_robust_vi, CountingStrategy,
    NatureRecord, ViConfig, ViError,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Vi(#[from] ViError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Lp(#[from] crate::lp::LpError),
    #[error("pareto queries require exactly 2 objectives, got {0}")]
    NotTwoObjectives(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct EngineConfig {
    pub vi: ViConfig,
    /// Hyperplane budget; past it a query reports undecided, never false.
    pub max_hyperplanes: usize,
    /// Approximation parameter for Pareto queries.
    pub pareto_epsilon: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            vi: ViConfig::default(),
            max_hyperplanes: 500,
            pareto_epsilon: 1e-6,
        }
    }
}

impl EngineConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        EngineConfig {
            vi: ViConfig::with_epsilon(epsilon),
            pareto_epsilon: epsilon,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthesisOutcome {
    Achievable,
    Unachievable,
    /// Hyperplane budget exhausted without a certificate either way.
    Undecided,
}

/// One iterate of the separation loop: the weight vector, the value-iteration
/// point `g` and the robust weighted optimum in that direction.
#[derive(Debug, Clone)]
pub struct TraceEntry {
    pub w: Vec<f64>,
    pub g: Vec<f64>,
    pub weighted_value: f64,
}

#[derive(Debug)]
pub struct SynthesisResult {
    pub outcome: SynthesisOutcome,
    /// Honest per-objective guarantees of the generated strategies; tags
    /// index into `strategies`.
    pub points: PointSet,
    pub strategies: Vec<(CountingStrategy, NatureRecord)>,
    /// Component probabilities over `points` when achievable.
    pub mixture: Option<Vec<f64>>,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug)]
pub struct QuantResult {
    /// Optimised value of the selected objective, `None` when the remaining
    /// thresholds are unachievable (⊥).
    pub value: Option<f64>,
    pub points: PointSet,
    pub strategies: Vec<(CountingStrategy, NatureRecord)>,
    pub mixture: Option<Vec<f64>>,
    pub trace: Vec<TraceEntry>,
    pub undecided: bool,
}

#[derive(Debug)]
pub struct ParetoApprox {
    /// Frontier vertices, ascending in the first coordinate.
    pub vertices: Vec<[f64; 2]>,
    pub epsilon: f64,
    /// Weight vectors supporting each vertex.
    pub supports: Vec<Vec<Vec<f64>>>,
    pub points: PointSet,
    pub strategies: Vec<(CountingStrategy, NatureRecord)>,
    pub undecided: bool,
}

fn small(scale: f64) -> f64 {
    1e-12 * (1.0 + scale.abs())
}

struct Loop<'a> {
    basic: &'a BasicQuery,
    cfg: &'a EngineConfig,
    points: PointSet,
    strategies: Vec<(CountingStrategy, NatureRecord)>,
    trace: Vec<TraceEntry>,
}

impl<'a> Loop<'a> {
    fn new(basic: &'a BasicQuery, cfg: &'a EngineConfig) -> Self {
        Loop {
            basic,
            cfg,
            points: PointSet::new(basic.n_objectives()),
            strategies: Vec::new(),
            trace: Vec::new(),
        }
    }

    /// Runs one VI in direction `w` and inserts the strategy's honest
    /// guarantee vector; returns the literal iterate, whether the point set
    /// grew, and whether the weight was new for its point.
    fn expand(&mut self, w: &WeightVector) -> Result<(TraceEntry, bool, bool), SynthError> {
        let vi = weighted_robust_vi(self.basic, w.as_slice(), &self.cfg.vi)?;
        let entry = TraceEntry {
            w: w.as_slice().to_vec(),
            g: vi.point.clone(),
            weighted_value: vi.weighted_value,
        };
        self.trace.push(entry.clone());
        let honest = evaluate_strategy(self.basic, &vi.strategy, &self.cfg.vi)?;
        let before = self.points.len();
        let idx = self.points.push(honest, self.strategies.len());
        let new_weight = self.points.add_weight(idx, w);
        let grew = self.points.len() > before;
        if grew {
            self.strategies.push((vi.strategy, vi.natures));
        }
        Ok((entry, grew, new_weight))
    }
}

/// Decides whether the basic query's threshold vector is robustly
/// achievable, producing the witness point set, strategies and mixture.
pub fn synthesize(basic: &BasicQuery, cfg: &EngineConfig) -> Result<SynthesisResult, SynthError> {
    let r = basic.thresholds.clone();
    let mut lp = Loop::new(basic, cfg);

    for _ in 0..cfg.max_hyperplanes {
        if in_downward_closure(&lp.points, &r)? {
            let mixture = mixture_weights(&lp.points, &r)?;
            return Ok(SynthesisResult {
                outcome: SynthesisOutcome::Achievable,
                points: lp.points,
                strategies: lp.strategies,
                mixture,
                trace: lp.trace,
            });
        }
        let w = match separating_weight(&lp.points, &r, None) {
            Ok((w, _)) => w,
            Err(GeometryError::InsideClosure(_)) => {
                // Membership and separation disagree within tolerance; trust
                // the mixture if one exists.
                let mixture = mixture_weights(&lp.points, &r)?;
                let outcome = if mixture.is_some() {
                    SynthesisOutcome::Achievable
                } else {
                    SynthesisOutcome::Undecided
                };
                return Ok(SynthesisResult {
                    outcome,
                    points: lp.points,
                    strategies: lp.strategies,
                    mixture,
                    trace: lp.trace,
                });
            }
            Err(e) => return Err(e.into()),
        };
        let (entry, grew, new_weight) = lp.expand(&w)?;
        let wr = w.dot(&r);
        if entry.weighted_value < wr - small(wr) {
            return Ok(SynthesisResult {
                outcome: SynthesisOutcome::Unachievable,
                points: lp.points,
                strategies: lp.strategies,
                mixture: None,
                trace: lp.trace,
            });
        }
        if !grew && !new_weight {
            // The same support point came back: the loop can make no further
            // progress toward r.
            break;
        }
    }
    Ok(SynthesisResult {
        outcome: SynthesisOutcome::Undecided,
        points: lp.points,
        strategies: lp.strategies,
        mixture: None,
        trace: lp.trace,
    })
}

/// Largest value of coordinate `index` on the downward closure of the point
/// set with all other coordinates held at `r`; `None` when the fixed
/// coordinates are not even covered.
fn max_coord_in_dwc(
    points: &PointSet,
    r: &[f64],
    index: usize,
) -> Result<Option<f64>, SynthError> {
    if points.is_empty() {
        return Ok(None);
    }
    let m = points.len();
    let mut p = LpProblem::new(points.points().iter().map(|x| x[index]).collect());
    p.constraint(vec![1.0; m], Rel::Eq, 1.0);
    for j in 0..points.dim() {
        if j == index {
            continue;
        }
        p.constraint(
            points.points().iter().map(|x| x[j]).collect(),
            Rel::Ge,
            r[j],
        );
    }
    match solve_lp(&p)? {
        LpOutcome::Optimal { objective, .. } => Ok(Some(objective)),
        LpOutcome::Infeasible => Ok(None),
        LpOutcome::Unbounded => Ok(Some(f64::INFINITY)),
    }
}

/// Maximises objective `index` subject to the remaining thresholds, walking
/// the frontier with separating weights whose `index` coordinate stays
/// positive. Returns ⊥ (`value: None`) when the fixed thresholds cannot be
/// met.
pub fn quantitative(
    basic: &BasicQuery,
    index: usize,
    cfg: &EngineConfig,
) -> Result<QuantResult, SynthError> {
    let mut r = basic.thresholds.clone();
    // Seed with the least value any strategy can be forced to.
    r[index] = single_objective_extremum(
        basic,
        index,
        Direction::Min,
        Direction::Min,
        &cfg.vi,
    )?;
    let mut lp = Loop::new(basic, cfg);
    let mut last: Option<TraceEntry> = None;
    let mut stall = 0usize;

    for _ in 0..cfg.max_hyperplanes {
        let member = in_downward_closure(&lp.points, &r)?;
        let headroom = match &last {
            None => true,
            Some(entry) => {
                let wr: f64 = entry.w.iter().zip(&r).map(|(a, b)| a * b).sum();
                entry.weighted_value > wr + small(wr)
            }
        };
        if member && !headroom {
            break;
        }
        let w = match separating_weight(&lp.points, &r, Some(index)) {
            Ok((w, _)) => w,
            Err(GeometryError::InsideClosure(_)) => break,
            Err(e) => return Err(e.into()),
        };
        let (entry, grew, _) = lp.expand(&w)?;
        let wr = w.dot(&r);
        if entry.weighted_value < wr - small(wr) {
            return Ok(QuantResult {
                value: None,
                points: lp.points,
                strategies: lp.strategies,
                mixture: None,
                trace: lp.trace,
                undecided: false,
            });
        }
        let old = r[index];
        if let Some(best) = max_coord_in_dwc(&lp.points, &r, index)? {
            r[index] = r[index].max(best);
        }
        last = Some(entry);
        if !grew && r[index] <= old + small(old) {
            stall += 1;
            if stall >= 2 {
                return Ok(QuantResult {
                    value: Some(r[index]),
                    mixture: mixture_weights(&lp.points, &r)?,
                    points: lp.points,
                    strategies: lp.strategies,
                    trace: lp.trace,
                    undecided: true,
                });
            }
        } else {
            stall = 0;
        }
    }
    let undecided = !in_downward_closure(&lp.points, &r)?;
    Ok(QuantResult {
        value: Some(r[index]),
        mixture: mixture_weights(&lp.points, &r)?,
        points: lp.points,
        strategies: lp.strategies,
        trace: lp.trace,
        undecided,
    })
}

/// ε-approximation of the two-objective Pareto curve: seed with the axis
/// weights, then repeatedly intersect the supporting lines of adjacent
/// frontier vertices and refine wherever the intersection point is at least
/// ε away from the current closure.
pub fn pareto_2d(basic: &BasicQuery, cfg: &EngineConfig) -> Result<ParetoApprox, SynthError> {
    if basic.n_objectives() != 2 {
        return Err(SynthError::NotTwoObjectives(basic.n_objectives()));
    }
    let epsilon = cfg.pareto_epsilon;
    let mut lp = Loop::new(basic, cfg);
    for w in [[1.0, 0.0], [0.0, 1.0]] {
        lp.expand(&WeightVector::new(w.to_vec()))?;
    }


    let mut undecided = false;
    let mut budget = cfg.max_hyperplanes;
    loop {
        if budget == 0 {
            undecided = true;
            break;
        }
        budget -= 1;

        let frontier = pareto_frontier_indices_2d(&lp.points)?;
        let mut candidate: Option<[f64; 2]> = None;
        for pair in frontier.windows(2) {
            let (i, j) = (pair[0], pair[1]);
            let u = lp.points.weights_of(i)
                .iter()
                .max_by(|a, b| a[0].total_cmp(&b[0]))
                .expect("every point has a generating weight")
                .clone();
            let v = lp.points.weights_of(j)
                .iter()
                .min_by(|a, b| a[0].total_cmp(&b[0]))
                .expect("every point has a generating weight")
                .clone();
            let det = u[0] * v[1] - u[1] * v[0];
            if det.abs() < 1e-12 {
                // Parallel supporting lines: no corner to probe.
                continue;
            }
            let bu = u[0] * lp.points.point(i)[0] + u[1] * lp.points.point(i)[1];
            let bv = v[0] * lp.points.point(j)[0] + v[1] * lp.points.point(j)[1];
            let p = [(bu * v[1] - u[1] * bv) / det, (u[0] * bv - bu * v[0]) / det];
            if distance_to_dwc_2d(&lp.points, &p)? >= epsilon {
                candidate = Some(p);
                break;
            }
        }
        let Some(p) = candidate else {
            break;
        };
        let w = match separating_weight(&lp.points, &p, None) {
            Ok((w, _)) => w,
            Err(GeometryError::InsideClosure(_)) => break,
            Err(e) => return Err(e.into()),
        };
        let (_, grew, new_weight) = lp.expand(&w)?;
        if !grew && !new_weight {
            // Neither a new point nor a new supporting weight: no further
            // progress is possible toward this corner.
            undecided = true;
            break;
        }
    }

    let frontier = pareto_frontier_indices_2d(&lp.points)?;
    let vertices: Vec<[f64; 2]> = frontier
        .iter()
        .map(|&i| [lp.points.point(i)[0], lp.points.point(i)[1]])
        .collect();
    let supports: Vec<Vec<Vec<f64>>> = frontier
        .iter()
        .map(|&i| lp.points.weights_of(i).to_vec())
        .collect();
    Ok(ParetoApprox {
        vertices,
        epsilon,
        supports,
        points: lp.points,
        strategies: lp.strategies,
        undecided,
    })
}

/// Answer of a full query run, in the user's objective orientation.
#[derive(Debug)]
pub enum QueryAnswer {
    Synth(SynthesisResult),
    Qnt(QuantResult),
    Pareto(ParetoApprox),
}

/// Runs a query end to end: normalises optimisation directions into
/// relational operators, preprocesses the model, dispatches on the mode and
/// maps values back into the user's orientation (minimised objectives are
/// solved on negated rewards and re-negated on output).
pub fn run_query(
    model: &Imdp,
    query: &Query,
    cfg: &EngineConfig,
) -> Result<QueryAnswer, SynthError> {
    let mut normalized = query.clone();
    match &query.mode {
        QueryMode::Synth => {}
        QueryMode::Qnt { index, direction } => {
            let obj = &mut normalized.objectives[*index];
            obj.op = match direction {
                OptDirection::Max => crate::query::RelOp::Ge,
                OptDirection::Min => crate::query::RelOp::Le,
            };
            obj.threshold = 0.0;
        }
        QueryMode::Pareto { directions } => {
            for (obj, dir) in normalized.objectives.iter_mut().zip(directions) {
                obj.op = match dir {
                    OptDirection::Max => crate::query::RelOp::Ge,
                    OptDirection::Min => crate::query::RelOp::Le,
                };
                obj.threshold = 0.0;
            }
        }
    }
    let basic = prepare(model, &normalized)?;
    match &query.mode {
        QueryMode::Synth => Ok(QueryAnswer::Synth(synthesize(&basic, cfg)?)),
        QueryMode::Qnt { index, direction } => {
            let mut res = quantitative(&basic, *index, cfg)?;
            if *direction == OptDirection::Min {
                res.value = res.value.map(|v| -v);
            }
            Ok(QueryAnswer::Qnt(res))
        }
        QueryMode::Pareto { directions } => {
            let mut res = pareto_2d(&basic, cfg)?;
            let flip = [
                directions[0] == OptDirection::Min,
                directions[1] == OptDirection::Min,
            ];
            for v in &mut res.vertices {
                for (c, f) in v.iter_mut().zip(flip) {
                    if f {
                        *c = -*c;
                    }
                }
            }
            // Keep the presentation order ascending in coordinate 1.
            let mut order: Vec<usize> = (0..res.vertices.len()).collect();
            order.sort_by(|&a, &b| res.vertices[a][0].total_cmp(&res.vertices[b][0]));
            res.vertices = order.iter().map(|&i| res.vertices[i]).collect();
            res.supports = order.iter().map(|&i| res.supports[i].clone()).collect();
            Ok(QueryAnswer::Pareto(res))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::running_example;
    use crate::query::{running_example_query, to_basic_form};

    fn basic_for(thresholds: Option<(f64, f64)>) -> BasicQuery {
        let m = running_example();
        let mut q = running_example_query(&m);
        if let Some((p, r)) = thresholds {
            q.objectives[0].threshold = p;
            q.objectives[1].threshold = r;
        }
        to_basic_form(&m, &q).unwrap()
    }

    #[test]
    fn example_query_is_achievable() {
        let basic = basic_for(None);
        let res = synthesize(&basic, &EngineConfig::default()).unwrap();
        assert_eq!(res.outcome, SynthesisOutcome::Achievable);
        let mix = res.mixture.expect("achievable results carry a mixture");
        // The mixture must dominate the thresholds.
        let mut covered = vec![0.0; 2];
        for (p, point) in mix.iter().zip(res.points.points()) {
            for (c, v) in covered.iter_mut().zip(point) {
                *c += p * v;
            }
        }
        assert!(covered[0] >= 1.0 / 3.0 - 1e-9);
        assert!(covered[1] >= 0.25 - 1e-9);
    }

    #[test]
    fn high_reach_threshold_is_unachievable() {
        let basic = basic_for(Some((0.41, 0.0)));
        let res = synthesize(&basic, &EngineConfig::default()).unwrap();
        assert_eq!(res.outcome, SynthesisOutcome::Unachievable);
    }

    #[test]
    fn zero_thresholds_achievable_in_one_round() {
        let basic = basic_for(Some((0.0, 0.0)));
        let res = synthesize(&basic, &EngineConfig::default()).unwrap();
        assert_eq!(res.outcome, SynthesisOutcome::Achievable);
        assert_eq!(res.trace.len(), 1);
    }

    #[test]
    fn quantitative_reward_subject_to_reach() {
        // Maximise the reward objective (index 1) with reach >= 1/3 fixed.
        let basic = basic_for(Some((1.0 / 3.0, 0.0)));
        let res = quantitative(&basic, 1, &EngineConfig::default()).unwrap();
        assert!((res.value.unwrap() - 3.0).abs() < 1e-6, "{:?}", res.value);

        let basic = basic_for(Some((0.4, 0.0)));
        let res = quantitative(&basic, 1, &EngineConfig::default()).unwrap();
        assert!((res.value.unwrap() - 1.0).abs() < 1e-6, "{:?}", res.value);

        let basic = basic_for(Some((0.5, 0.0)));
        let res = quantitative(&basic, 1, &EngineConfig::default()).unwrap();
        assert_eq!(res.value, None, "reach 0.5 is impossible");
    }

    #[test]
    fn pareto_curve_of_running_example() {
        let basic = basic_for(None);
        let res = pareto_2d(&basic, &EngineConfig::default()).unwrap();
        assert!(!res.undecided);
        assert_eq!(res.vertices.len(), 2, "vertices: {:?}", res.vertices);
        assert!((res.vertices[0][0] - 1.0 / 3.0).abs() < 1e-6);
        assert!((res.vertices[0][1] - 3.0).abs() < 1e-6);
        assert!((res.vertices[1][0] - 0.4).abs() < 1e-6);
        assert!((res.vertices[1][1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn progress_along_the_trace() {
        let basic = basic_for(Some((0.38, 2.0)));
        let res = synthesize(&basic, &EngineConfig::default()).unwrap();
        // Every iterate supports the prior point set from above.
        for (k, entry) in res.trace.iter().enumerate() {
            for point in res.points.points().iter().take(k) {
                let wg: f64 = entry.w.iter().zip(point).map(|(a, b)| a * b).sum();
                assert!(entry.weighted_value >= wg - 1e-9);
            }
        }
    }
}
