//! Predicates over IMDPs and the reduction of a general query to its basic
//! form: a vector of lower-bounded expected-total-reward objectives over a
//! product model whose states remember which target sets have been visited.
//!
//! Also hosts the reward-finiteness checks and the pruning of actions that
//! would let a maximising objective diverge inside a strong end-component.

use std::collections::{BTreeSet, HashMap, VecDeque};

use thiserror::Error;

use crate::model::{Imdp, RewardStructure};

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("invalid query: {0:?}")]
    InvalidQuery(Vec<String>),
    #[error("assumption violated: {0:?}")]
    AssumptionViolated(Vec<String>),
    #[error("initial state pruned away: the query is unsatisfiable with finite reward")]
    InitialPruned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelOp {
    Ge,
    Le,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptDirection {
    Max,
    Min,
}

/// Step bound of an objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Finite(u32),
    Infinite,
}

impl Bound {
    pub fn is_infinite(self) -> bool {
        matches!(self, Bound::Infinite)
    }

    pub fn at_least(self, j: u32) -> bool {
        match self {
            Bound::Infinite => true,
            Bound::Finite(k) => k >= j,
        }
    }

    /// The `k + 1` bound the reduction assigns to reachability objectives.
    pub fn plus_one(self) -> Bound {
        match self {
            Bound::Infinite => Bound::Infinite,
            Bound::Finite(k) => Bound::Finite(k + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveKind {
    /// Probability of reaching any state in `target` within the bound.
    Reach { target: BTreeSet<usize> },
    /// Expected total reward of the named structure within the bound.
    Reward { structure: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub kind: ObjectiveKind,
    pub op: RelOp,
    pub threshold: f64,
    pub bound: Bound,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QueryMode {
    Synth,
    Qnt {
        index: usize,
        direction: OptDirection,
    },
    Pareto {
        directions: Vec<OptDirection>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub mode: QueryMode,
    pub objectives: Vec<Objective>,
}

/// Structural checks on a query against its model; empty means valid.
pub fn validate_query(model: &Imdp, query: &Query) -> Vec<String> {
    let mut out = Vec::new();
    if query.objectives.is_empty() {
        out.push("query has no objectives".into());
    }
    for (i, obj) in query.objectives.iter().enumerate() {
        match &obj.kind {
            ObjectiveKind::Reach { target } => {
                if target.is_empty() {
                    out.push(format!("objective {i}: empty target set"));
                }
                for &t in target {
                    if t >= model.n_states() {
                        out.push(format!("objective {i}: target state {t} out of range"));
                    }
                }
                if !(0.0..=1.0).contains(&obj.threshold) {
                    out.push(format!(
                        "objective {i}: reachability threshold {} outside [0,1]",
                        obj.threshold
                    ));
                }
            }
            ObjectiveKind::Reward { structure } => {
                if model.reward(structure).is_none() {
                    out.push(format!(
                        "objective {i}: unknown reward structure `{structure}`"
                    ));
                }
                if !obj.threshold.is_finite() {
                    out.push(format!("objective {i}: threshold must be finite"));
                }
            }
        }
    }
    match &query.mode {
        QueryMode::Qnt { index, .. } => {
            if *index >= query.objectives.len() {
                out.push(format!("qnt index {index} out of range"));
            }
        }
        QueryMode::Pareto { directions } => {
            if query.objectives.len() != 2 || directions.len() != 2 {
                out.push("pareto queries take exactly 2 objectives".into());
            }
        }
        QueryMode::Synth => {}
    }
    out
}

/// Checks the soundness assumptions: original reward structures used by the
/// query are non-negative, infinite-horizon reward objectives agree on
/// direction, and no reachable strong end-component carries positive reward
/// under a maximising infinite-horizon structure. Violations are data, the
/// caller decides whether to prune or abort.
pub fn check_assumptions(model: &Imdp, query: &Query) -> Vec<String> {
    let mut out = Vec::new();
    let mut inf_dirs = BTreeSet::new();
    for (i, obj) in query.objectives.iter().enumerate() {
        if let ObjectiveKind::Reward { structure } = &obj.kind {
            if let Some(st) = model.reward(structure) {
                if !st.is_nonnegative() {
                    out.push(format!(
                        "objective {i}: reward structure `{structure}` assigns negative values"
                    ));
                }
            }
            if obj.bound.is_infinite() {
                inf_dirs.insert(obj.op);
            }
        }
    }
    if inf_dirs.len() > 1 {
        out.push("mixed infinite-horizon directions".into());
    }

    let divergent = divergent_pairs(model, query);
    if !divergent.is_empty() {
        let reachable = model.reachable_states(model.initial());
        for (s, a, structure) in divergent {
            if reachable.contains(&s) {
                out.push(format!(
                    "positive reward inside SEC ({}, {}) for structure `{structure}`",
                    model.state_name(s),
                    model.action_name(a)
                ));
            }
        }
    }
    out
}

/// SEC-internal pairs with positive reward under a maximising (`≥`,
/// infinite-horizon) reward structure of the query.
fn divergent_pairs(model: &Imdp, query: &Query) -> Vec<(usize, usize, String)> {
    let maximizing: Vec<&str> = query
        .objectives
        .iter()
        .filter_map(|obj| match &obj.kind {
            ObjectiveKind::Reward { structure }
                if obj.op == RelOp::Ge && obj.bound.is_infinite() =>
            {
                Some(structure.as_str())
            }
            _ => None,
        })
        .collect();
    if maximizing.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    for sec in model.strong_end_components() {
        for (&s, actions) in &sec.actions {
            for &a in actions {
                for name in &maximizing {
                    let st = model.reward(name).expect("validated structure");
                    if st.get(s, a) > 0.0 {
                        out.push((s, a, name.to_string()));
                    }
                }
            }
        }
    }
    out
}

/// Removes every SEC-internal action with positive reward under a maximising
/// infinite-horizon structure, then runs the fixpoint removal of states
/// without actions and of rows that lost feasibility. Value-preserving for
/// the query.
pub fn prune_reward_divergent(model: &Imdp, query: &Query) -> Result<Imdp, TransformError> {
    let offending: BTreeSet<(usize, usize)> = divergent_pairs(model, query)
        .into_iter()
        .map(|(s, a, _)| (s, a))
        .collect();
    if offending.is_empty() {
        return Ok(model.clone());
    }

    let n = model.n_states();
    let mut state_alive = vec![true; n];
    let mut pair_alive: Vec<Vec<bool>> = (0..n)
        .map(|s| {
            model
                .enabled(s)
                .iter()
                .map(|&a| !offending.contains(&(s, a)))
                .collect()
        })
        .collect();

    loop {
        let mut changed = false;
        for s in 0..n {
            if !state_alive[s] {
                continue;
            }
            for (slot, alive) in pair_alive[s].iter_mut().enumerate() {
                if !*alive {
                    continue;
                }
                let row = model.row(s, slot);
                let live_upper: f64 = row
                    .entries()
                    .iter()
                    .filter(|e| state_alive[e.target])
                    .map(|e| e.upper)
                    .sum();
                // A row that lost targets may no longer reach probability 1.
                if live_upper < 1.0 - crate::model::SUM_TOL {
                    *alive = false;
                    changed = true;
                }
            }
            if pair_alive[s].iter().all(|&alive| !alive) {
                state_alive[s] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if !state_alive[model.initial()] {
        return Err(TransformError::InitialPruned);
    }

    let mut b = Imdp::builder();
    b.initial(model.state_name(model.initial()));
    for s in 0..n {
        if !state_alive[s] {
            continue;
        }
        for (slot, &a) in model.enabled(s).iter().enumerate() {
            if !pair_alive[s][slot] {
                continue;
            }
            for e in model.row(s, slot).entries() {
                if state_alive[e.target] {
                    b.transition(
                        model.state_name(s),
                        model.action_name(a),
                        model.state_name(e.target),
                        e.lower,
                        e.upper,
                    );
                }
            }
        }
    }
    let mut pruned = b.build().expect("pruned model keeps its initial state");
    for name in model.reward_names().map(str::to_owned).collect::<Vec<_>>() {
        let src = model.reward(&name).unwrap();
        let mut st = RewardStructure::new();
        for (s, a, v) in src.iter() {
            if !state_alive[s] {
                continue;
            }
            let Some(slot) = model.slot_of(s, a) else {
                continue;
            };
            if !pair_alive[s][slot] {
                continue;
            }
            let ns = pruned.state_id(model.state_name(s)).unwrap();
            let na = pruned.action_id(model.action_name(a)).unwrap();
            st.set(ns, na, v);
        }
        pruned.add_reward(name, st);
    }
    Ok(pruned)
}

/// The reduced, uniformly maximising form of a query: a product model, one
/// reward structure per objective, finite or infinite step bounds and
/// lower-bound thresholds.
#[derive(Debug, Clone)]
pub struct BasicQuery {
    pub model: Imdp,
    pub structures: Vec<String>,
    pub bounds: Vec<Bound>,
    pub thresholds: Vec<f64>,
    /// product state -> (original state, bitmask of visited reach objectives)
    pub back_map: Vec<(usize, u32)>,
    /// Dense reward cache: `[objective][state][action slot]`.
    rewards: Vec<Vec<Vec<f64>>>,
}

impl BasicQuery {
    pub fn n_objectives(&self) -> usize {
        self.structures.len()
    }

    #[inline]
    pub fn reward(&self, objective: usize, state: usize, slot: usize) -> f64 {
        self.rewards[objective][state][slot]
    }

    pub fn reward_row(&self, objective: usize, state: usize) -> &[f64] {
        &self.rewards[objective][state]
    }

    /// Largest finite bound, or `None` when every objective is unbounded.
    pub fn k_max(&self) -> Option<u32> {
        self.bounds
            .iter()
            .filter_map(|b| match b {
                Bound::Finite(k) => Some(*k),
                Bound::Infinite => None,
            })
            .max()
    }

    /// A copy with every reward structure and threshold negated; used to
    /// drive minimising directions through the maximise-only engine.
    pub fn negated_objective(&self, objective: usize) -> BasicQuery {
        let mut out = self.clone();
        let name = format!("negated:{}", out.structures[objective]);
        let st = out
            .model
            .reward(&out.structures[objective])
            .expect("structure exists")
            .negated();
        out.model.add_reward(name.clone(), st);
        out.structures[objective] = name;
        out.thresholds[objective] = -out.thresholds[objective];
        for row in &mut out.rewards[objective] {
            for v in row.iter_mut() {
                *v = -*v;
            }
        }
        out
    }

    fn build_cache(&mut self) {
        let m = &self.model;
        self.rewards = self
            .structures
            .iter()
            .map(|name| {
                let st = m.reward(name).expect("structure exists in product");
                (0..m.n_states())
                    .map(|s| {
                        m.enabled(s)
                            .iter()
                            .map(|&a| st.get(s, a))
                            .collect::<Vec<f64>>()
                    })
                    .collect()
            })
            .collect();
    }
}

fn subset_name(model: &Imdp, s: usize, mask: u32) -> String {
    let bits: Vec<String> = (0..32)
        .filter(|&i| mask >> i & 1 == 1)
        .map(|i| i.to_string())
        .collect();
    format!("{}@{}", model.state_name(s), bits.join(","))
}

/// Reduction to basic form.
///
/// The product replaces each reachability objective `i` by a reward structure
/// paying ±1 on the unique transition that first leaves a target state of
/// `T_i`, with threshold ±pᵢ and bound kᵢ+1; reward objectives keep their
/// structure (negated for upper bounds, materialised under a `neg:` name) and
/// bound. Only the fragment reachable from the initial product state is
/// constructed, and intervals are copied bit-exactly.
pub fn to_basic_form(model: &Imdp, query: &Query) -> Result<BasicQuery, TransformError> {
    let issues = validate_query(model, query);
    if !issues.is_empty() {
        return Err(TransformError::InvalidQuery(issues));
    }
    let reach_targets: Vec<(usize, &BTreeSet<usize>)> = query
        .objectives
        .iter()
        .enumerate()
        .filter_map(|(i, o)| match &o.kind {
            ObjectiveKind::Reach { target } => Some((i, target)),
            ObjectiveKind::Reward { .. } => None,
        })
        .collect();

    // v' is a function of the source product state alone.
    let fresh = |s: usize, mask: u32| -> u32 {
        let mut v = 0u32;
        for &(i, target) in &reach_targets {
            if target.contains(&s) && mask >> i & 1 == 0 {
                v |= 1 << i;
            }
        }
        v
    };

    // BFS over the reachable product fragment.
    let mut b = Imdp::builder();
    let mut index: HashMap<(usize, u32), usize> = HashMap::new();
    let mut back_map: Vec<(usize, u32)> = Vec::new();
    let mut queue = VecDeque::new();
    let root = (model.initial(), 0u32);
    index.insert(root, 0);
    back_map.push(root);
    queue.push_back(root);
    b.initial(&subset_name(model, root.0, root.1));

    while let Some((s, mask)) = queue.pop_front() {
        let next_mask = mask | fresh(s, mask);
        let from = subset_name(model, s, mask);
        for (slot, &a) in model.enabled(s).iter().enumerate() {
            for e in model.row(s, slot).entries() {
                let succ = (e.target, next_mask);
                if !index.contains_key(&succ) {
                    index.insert(succ, back_map.len());
                    back_map.push(succ);
                    queue.push_back(succ);
                }
                b.transition(
                    &from,
                    model.action_name(a),
                    &subset_name(model, succ.0, succ.1),
                    e.lower,
                    e.upper,
                );
            }
        }
    }
    let mut product = b.build().expect("product has an initial state");

    // Re-key back_map to the product's interned state order.
    let mut ordered_back = vec![(0usize, 0u32); product.n_states()];
    for &(s, mask) in index.keys() {
        let id = product
            .state_id(&subset_name(model, s, mask))
            .expect("state was inserted");
        ordered_back[id] = (s, mask);
    }

    let n = query.objectives.len();
    let mut structures = Vec::with_capacity(n);
    let mut bounds = Vec::with_capacity(n);
    let mut thresholds = Vec::with_capacity(n);
    for (i, obj) in query.objectives.iter().enumerate() {
        let sign = match obj.op {
            RelOp::Ge => 1.0,
            RelOp::Le => -1.0,
        };
        match &obj.kind {
            ObjectiveKind::Reach { .. } => {
                let name = format!("reach_{i}");
                let mut st = RewardStructure::new();
                for (ps, &(s, mask)) in ordered_back.iter().enumerate() {
                    if fresh(s, mask) >> i & 1 == 1 {
                        for &a in product.enabled(ps) {
                            st.set(ps, a, sign);
                        }
                    }
                }
                product.add_reward(name.clone(), st);
                structures.push(name);
                bounds.push(obj.bound.plus_one());
                thresholds.push(sign * obj.threshold);
            }
            ObjectiveKind::Reward { structure } => {
                let src = model.reward(structure).expect("validated structure");
                let name = if obj.op == RelOp::Le {
                    format!("neg:{structure}")
                } else {
                    structure.clone()
                };
                let mut st = RewardStructure::new();
                for (ps, &(s, _)) in ordered_back.iter().enumerate() {
                    for &a in product.enabled(ps) {
                        let v = src.get(s, a);
                        if v != 0.0 {
                            st.set(ps, a, sign * v);
                        }
                    }
                }
                product.add_reward(name.clone(), st);
                structures.push(name);
                bounds.push(obj.bound);
                thresholds.push(sign * obj.threshold);
            }
        }
    }

    let mut basic = BasicQuery {
        model: product,
        structures,
        bounds,
        thresholds,
        back_map: ordered_back,
        rewards: Vec::new(),
    };
    basic.build_cache();
    Ok(basic)
}

/// Full preprocessing pipeline: validate, check the non-prunable assumptions
/// (hard failures), prune divergent actions, reduce to basic form.
pub fn prepare(model: &Imdp, query: &Query) -> Result<BasicQuery, TransformError> {
    let issues = validate_query(model, query);
    if !issues.is_empty() {
        return Err(TransformError::InvalidQuery(issues));
    }
    let hard: Vec<String> = check_assumptions(model, query)
        .into_iter()
        .filter(|v| !v.starts_with("positive reward inside SEC"))
        .collect();
    if !hard.is_empty() {
        return Err(TransformError::AssumptionViolated(hard));
    }
    let pruned = prune_reward_divergent(model, query)?;
    to_basic_form(&pruned, query)
}

/// Example query on the running example: reach `t` within one step with
/// probability at least 1/3 while collecting reward at least 1/4 in one step.
pub fn running_example_query(model: &Imdp) -> Query {
    let t = model.state_id("t").expect("running example has state t");
    Query {
        mode: QueryMode::Synth,
        objectives: vec![
            Objective {
                kind: ObjectiveKind::Reach {
                    target: BTreeSet::from([t]),
                },
                op: RelOp::Ge,
                threshold: 1.0 / 3.0,
                bound: Bound::Finite(1),
            },
            Objective {
                kind: ObjectiveKind::Reward {
                    structure: "r".into(),
                },
                op: RelOp::Ge,
                threshold: 0.25,
                bound: Bound::Finite(1),
            },
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::running_example;

    #[test]
    fn running_example_product_shape() {
        let m = running_example();
        let q = running_example_query(&m);
        let basic = to_basic_form(&m, &q).unwrap();
        // Reachable fragment: (s,{}), (t,{}), (u,{}), (t,{0}). The state
        // (u,{0}) of the full product is unreachable because t is absorbing.
        assert_eq!(basic.model.n_states(), 4);
        assert_eq!(basic.bounds, vec![Bound::Finite(2), Bound::Finite(1)]);
        assert!((basic.thresholds[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((basic.thresholds[1] - 0.25).abs() < 1e-15);

        // The r_T structure pays exactly on the first-entry action at (t,{}).
        let t_empty = basic.model.state_id("t@").unwrap();
        assert_eq!(basic.reward(0, t_empty, 0), 1.0);
        let s_empty = basic.model.state_id("s@").unwrap();
        assert_eq!(basic.reward(0, s_empty, 0), 0.0);
        let t_visited = basic.model.state_id("t@0").unwrap();
        assert_eq!(basic.reward(0, t_visited, 0), 0.0);
        // r-bar copies the source rewards.
        assert_eq!(basic.reward(1, s_empty, 0), 3.0);
        assert_eq!(basic.reward(1, s_empty, 1), 1.0);
    }

    #[test]
    fn product_intervals_are_bitwise_identical() {
        let m = running_example();
        let q = running_example_query(&m);
        let basic = to_basic_form(&m, &q).unwrap();
        let s_empty = basic.model.state_id("s@").unwrap();
        let (orig, _) = basic.back_map[s_empty];
        for slot in 0..2 {
            let orig_row = m.row(orig, slot);
            let prod_row = basic.model.row(s_empty, slot);
            assert_eq!(orig_row.len(), prod_row.len());
            for (oe, pe) in orig_row.entries().iter().zip(prod_row.entries()) {
                assert_eq!(oe.lower.to_bits(), pe.lower.to_bits());
                assert_eq!(oe.upper.to_bits(), pe.upper.to_bits());
            }
        }
    }

    #[test]
    fn no_reach_objectives_leaves_model_structurally_unchanged() {
        let m = running_example();
        let q = Query {
            mode: QueryMode::Synth,
            objectives: vec![Objective {
                kind: ObjectiveKind::Reward {
                    structure: "r".into(),
                },
                op: RelOp::Ge,
                threshold: 1.0,
                bound: Bound::Finite(2),
            }],
        };
        let basic = to_basic_form(&m, &q).unwrap();
        assert_eq!(basic.model.n_states(), m.n_states());
        for (ps, &(s, mask)) in basic.back_map.iter().enumerate() {
            assert_eq!(mask, 0);
            assert_eq!(basic.model.enabled(ps).len(), m.enabled(s).len());
        }
    }

    #[test]
    fn upper_bounded_reward_is_negated() {
        let m = running_example();
        let q = Query {
            mode: QueryMode::Synth,
            objectives: vec![Objective {
                kind: ObjectiveKind::Reward {
                    structure: "r".into(),
                },
                op: RelOp::Le,
                threshold: 5.0,
                bound: Bound::Infinite,
            }],
        };
        let basic = to_basic_form(&m, &q).unwrap();
        assert_eq!(basic.structures[0], "neg:r");
        assert_eq!(basic.thresholds[0], -5.0);
        let s = basic.model.state_id("s@").unwrap();
        assert_eq!(basic.reward(0, s, 0), -3.0);
    }

    #[test]
    fn assumptions_hold_on_running_example() {
        let m = running_example();
        let q = running_example_query(&m);
        assert!(check_assumptions(&m, &q).is_empty());
    }

    #[test]
    fn positive_sec_reward_is_flagged() {
        let mut m = running_example();
        let t = m.state_id("t").unwrap();
        let a = m.action_id("a").unwrap();
        let mut st = RewardStructure::new();
        st.set(t, a, 1.0);
        m.add_reward("loopy", st);
        let q = Query {
            mode: QueryMode::Synth,
            objectives: vec![Objective {
                kind: ObjectiveKind::Reward {
                    structure: "loopy".into(),
                },
                op: RelOp::Ge,
                threshold: 1.0,
                bound: Bound::Infinite,
            }],
        };
        let v = check_assumptions(&m, &q);
        assert!(
            v.iter().any(|s| s.contains("positive reward inside SEC")),
            "{v:?}"
        );
    }

    #[test]
    fn mixed_infinite_directions_are_flagged() {
        let m = running_example();
        let obj = |op| Objective {
            kind: ObjectiveKind::Reward {
                structure: "r".into(),
            },
            op,
            threshold: 1.0,
            bound: Bound::Infinite,
        };
        let q = Query {
            mode: QueryMode::Synth,
            objectives: vec![obj(RelOp::Ge), obj(RelOp::Le)],
        };
        let v = check_assumptions(&m, &q);
        assert!(v.iter().any(|s| s == "mixed infinite-horizon directions"));
    }

    fn divergent_query() -> Query {
        Query {
            mode: QueryMode::Synth,
            objectives: vec![Objective {
                kind: ObjectiveKind::Reward {
                    structure: "r".into(),
                },
                op: RelOp::Ge,
                threshold: 0.5,
                bound: Bound::Infinite,
            }],
        }
    }

    #[test]
    fn pruning_removes_divergent_loop() {
        // t loops with reward 1 under a, but also has a zero-reward exit
        // action b to an absorbing sink.
        let mut b = Imdp::builder();
        b.initial("s");
        b.transition("s", "a", "t", 1.0, 1.0);
        b.transition("t", "a", "t", 1.0, 1.0);
        b.transition("t", "b", "z", 1.0, 1.0);
        b.transition("z", "a", "z", 1.0, 1.0);
        b.reward("r", "t", "a", 1.0);
        let m = b.build().unwrap();
        let pruned = prune_reward_divergent(&m, &divergent_query()).unwrap();
        let t = pruned.state_id("t").unwrap();
        assert_eq!(pruned.enabled(t).len(), 1, "only the exit action survives");
        assert_eq!(pruned.action_name(pruned.enabled(t)[0]), "b");
    }

    #[test]
    fn pruning_cascades_to_unsupported_states() {
        // t's only action is the divergent loop, so t disappears entirely and
        // s loses the action leading to it.
        let mut b = Imdp::builder();
        b.initial("s");
        b.transition("s", "a", "t", 1.0, 1.0);
        b.transition("s", "b", "z", 1.0, 1.0);
        b.transition("t", "a", "t", 1.0, 1.0);
        b.transition("z", "a", "z", 1.0, 1.0);
        b.reward("r", "t", "a", 1.0);
        let m = b.build().unwrap();
        let pruned = prune_reward_divergent(&m, &divergent_query()).unwrap();
        assert!(pruned.state_id("t").is_none());
        let s = pruned.state_id("s").unwrap();
        assert_eq!(pruned.enabled(s).len(), 1);

        // If even the initial state falls, the query is hopeless.
        let mut b = Imdp::builder();
        b.initial("t");
        b.transition("t", "a", "t", 1.0, 1.0);
        b.reward("r", "t", "a", 1.0);
        let m = b.build().unwrap();
        assert!(matches!(
            prune_reward_divergent(&m, &divergent_query()),
            Err(TransformError::InitialPruned)
        ));
    }

    #[test]
    fn pruning_is_identity_without_divergence() {
        let m = running_example();
        let pruned = prune_reward_divergent(&m, &divergent_query()).unwrap();
        assert_eq!(pruned.n_states(), m.n_states());
        assert_eq!(
            pruned.reachable_states(pruned.initial()).len(),
            m.reachable_states(m.initial()).len()
        );
    }

    #[test]
    fn product_state_count_is_bounded_and_reachable() {
        let m = running_example();
        let q = running_example_query(&m);
        let basic = to_basic_form(&m, &q).unwrap();
        let n_reach = 1u32;
        assert!(basic.model.n_states() <= m.n_states() * (1 << n_reach));
        let reach = basic.model.reachable_states(basic.model.initial());
        assert_eq!(reach.len(), basic.model.n_states());
    }
}
