//! IMDP data model, validation and graph-level analyses.
//!
//! States and actions are interned to dense indices at construction time;
//! every numeric routine in the crate addresses states by `usize`. Transition
//! rows are sparse: only targets with a positive upper bound are stored, and
//! an absent entry means probability exactly zero.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use thiserror::Error;

/// Slack allowed when checking interval sums against 1.
pub const SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown state id `{0}`")]
    UnknownState(String),
    #[error("unknown action id `{0}`")]
    UnknownAction(String),
    #[error("no initial state was declared")]
    MissingInitial,
    #[error("model has no states")]
    Empty,
}

/// One sparse transition row entry: `target` is reached with a probability
/// inside `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowEntry {
    pub target: usize,
    pub lower: f64,
    pub upper: f64,
}

/// Interval distribution over successor states for one `(state, action)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntervalRow {
    entries: Vec<RowEntry>,
}

impl IntervalRow {
    pub fn new(mut entries: Vec<RowEntry>) -> Self {
        entries.sort_by_key(|e| e.target);
        IntervalRow { entries }
    }

    pub fn entries(&self) -> &[RowEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lower_sum(&self) -> f64 {
        self.entries.iter().map(|e| e.lower).sum()
    }

    pub fn upper_sum(&self) -> f64 {
        self.entries.iter().map(|e| e.upper).sum()
    }

    /// A row admits a feasible distribution iff `Σ lower ≤ 1 ≤ Σ upper`.
    pub fn is_feasible(&self) -> bool {
        self.lower_sum() <= 1.0 + SUM_TOL && self.upper_sum() >= 1.0 - SUM_TOL
    }

    /// Remaps targets through `map`, dropping entries whose target maps to
    /// `None`. Interval endpoints are copied bit-exactly.
    pub fn remap(&self, map: impl Fn(usize) -> Option<usize>) -> IntervalRow {
        IntervalRow::new(
            self.entries
                .iter()
                .filter_map(|e| {
                    map(e.target).map(|t| RowEntry {
                        target: t,
                        lower: e.lower,
                        upper: e.upper,
                    })
                })
                .collect(),
        )
    }
}

/// Reward per state-action pair; missing entries read as 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewardStructure {
    values: HashMap<(usize, usize), f64>,
}

impl RewardStructure {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, state: usize, action: usize, value: f64) {
        self.values.insert((state, action), value);
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values.get(&(state, action)).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.values.iter().map(|(&(s, a), &v)| (s, a, v))
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.values().all(|&v| v >= 0.0)
    }

    pub fn negated(&self) -> RewardStructure {
        RewardStructure {
            values: self.values.iter().map(|(&k, &v)| (k, -v)).collect(),
        }
    }
}

/// A validation finding. Violations are data, not errors: a parser can load
/// a broken model and report everything wrong with it in one pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub state: Option<String>,
    pub action: Option<String>,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.state, &self.action) {
            (Some(s), Some(a)) => write!(f, "state `{s}`, action `{a}`: {}", self.rule),
            (Some(s), None) => write!(f, "state `{s}`: {}", self.rule),
            _ => write!(f, "{}", self.rule),
        }
    }
}

/// A strong end-component: a set of states plus, per state, the actions that
/// keep every feasible distribution inside the set, strongly connected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sec {
    pub states: BTreeSet<usize>,
    /// state -> global action indices staying inside the component
    pub actions: BTreeMap<usize, Vec<usize>>,
}

impl Sec {
    pub fn contains_pair(&self, state: usize, action: usize) -> bool {
        self.actions
            .get(&state)
            .is_some_and(|acts| acts.contains(&action))
    }
}

/// Interval Markov decision process.
#[derive(Debug, Clone, PartialEq)]
pub struct Imdp {
    states: Vec<String>,
    state_index: HashMap<String, usize>,
    initial: usize,
    actions: Vec<String>,
    action_index: HashMap<String, usize>,
    /// Per state, the enabled global action indices in ascending order.
    enabled: Vec<Vec<usize>>,
    /// Rows aligned with `enabled`.
    rows: Vec<Vec<IntervalRow>>,
    rewards: BTreeMap<String, RewardStructure>,
}

impl Imdp {
    pub fn builder() -> ImdpBuilder {
        ImdpBuilder::default()
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn state_name(&self, s: usize) -> &str {
        &self.states[s]
    }

    pub fn state_names(&self) -> &[String] {
        &self.states
    }

    pub fn state_id(&self, name: &str) -> Option<usize> {
        self.state_index.get(name).copied()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn action_name(&self, a: usize) -> &str {
        &self.actions[a]
    }

    pub fn action_names(&self) -> &[String] {
        &self.actions
    }

    pub fn action_id(&self, name: &str) -> Option<usize> {
        self.action_index.get(name).copied()
    }

    /// Enabled global action indices at `s`, ascending.
    pub fn enabled(&self, s: usize) -> &[usize] {
        &self.enabled[s]
    }

    /// Row for the `slot`-th enabled action at `s`.
    pub fn row(&self, s: usize, slot: usize) -> &IntervalRow {
        &self.rows[s][slot]
    }

    pub fn slot_of(&self, s: usize, action: usize) -> Option<usize> {
        self.enabled[s].iter().position(|&a| a == action)
    }

    pub fn reward_names(&self) -> impl Iterator<Item = &str> {
        self.rewards.keys().map(|s| s.as_str())
    }

    pub fn reward(&self, name: &str) -> Option<&RewardStructure> {
        self.rewards.get(name)
    }

    pub fn add_reward(&mut self, name: impl Into<String>, structure: RewardStructure) {
        self.rewards.insert(name.into(), structure);
    }

    /// Checks every structural invariant and returns the list of violations;
    /// an empty list means the model is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |state: Option<usize>, action: Option<usize>, rule: String| {
            out.push(Violation {
                state: state.map(|s| self.states[s].clone()),
                action: action.map(|a| self.actions[a].clone()),
                rule,
            });
        };
        for s in 0..self.n_states() {
            for (slot, &a) in self.enabled[s].iter().enumerate() {
                let row = &self.rows[s][slot];
                if row.is_empty() {
                    push(Some(s), Some(a), "transition row is empty".into());
                    continue;
                }
                let mut seen = BTreeSet::new();
                for e in row.entries() {
                    if !seen.insert(e.target) {
                        push(
                            Some(s),
                            Some(a),
                            format!(
                                "duplicate entries for target `{}`",
                                self.states[e.target]
                            ),
                        );
                    }
                    if !(e.lower > 0.0) {
                        push(
                            Some(s),
                            Some(a),
                            format!(
                                "lower bound must be > 0 on transition to `{}`",
                                self.states[e.target]
                            ),
                        );
                    }
                    if e.lower > e.upper {
                        push(
                            Some(s),
                            Some(a),
                            format!(
                                "lower bound exceeds upper bound on transition to `{}`",
                                self.states[e.target]
                            ),
                        );
                    }
                    if e.upper > 1.0 {
                        push(
                            Some(s),
                            Some(a),
                            format!(
                                "upper bound must be <= 1 on transition to `{}`",
                                self.states[e.target]
                            ),
                        );
                    }
                }
                if row.lower_sum() > 1.0 + SUM_TOL {
                    push(Some(s), Some(a), "lower bounds exceed 1".into());
                }
                if row.upper_sum() < 1.0 - SUM_TOL {
                    push(Some(s), Some(a), "upper bounds below 1".into());
                }
            }
            if self.enabled[s].is_empty() {
                push(Some(s), None, "state has no enabled action".into());
            }
        }
        for (name, structure) in &self.rewards {
            for (s, a, _) in structure.iter() {
                if s >= self.n_states() || !self.enabled[s].contains(&a) {
                    let state = (s < self.n_states()).then_some(s);
                    push(
                        state,
                        None,
                        format!("reward `{name}` defined on a pair that is not enabled"),
                    );
                }
            }
        }
        out
    }

    /// States reachable from `from` through positive-upper-bound edges
    /// (every stored entry qualifies).
    pub fn reachable_states(&self, from: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::new();
        seen.insert(from);
        queue.push_back(from);
        while let Some(s) = queue.pop_front() {
            for row in &self.rows[s] {
                for e in row.entries() {
                    if seen.insert(e.target) {
                        queue.push_back(e.target);
                    }
                }
            }
        }
        seen
    }

    /// Name-keyed variant of [`Imdp::reachable_states`].
    pub fn reachable_from(&self, from: &str) -> Result<BTreeSet<usize>, ModelError> {
        let s = self
            .state_id(from)
            .ok_or_else(|| ModelError::UnknownState(from.to_owned()))?;
        Ok(self.reachable_states(s))
    }

    /// All maximal strong end-components.
    ///
    /// Because lower bounds are strictly positive wherever upper bounds are,
    /// the closure condition coincides with graph closure: a pair `(s, a)`
    /// belongs to a component iff every listed successor stays inside it. The
    /// classic MDP maximal-end-component fixpoint therefore applies verbatim
    /// on the underlying graph.
    pub fn strong_end_components(&self) -> Vec<Sec> {
        let n = self.n_states();
        let mut live_state = vec![true; n];
        // live[s] = set of live slots of s
        let mut live: Vec<Vec<usize>> = (0..n).map(|s| (0..self.rows[s].len()).collect()).collect();

        loop {
            let comp = scc(n, |s| {
                if !live_state[s] {
                    return Vec::new();
                }
                let mut succs = Vec::new();
                for &slot in &live[s] {
                    for e in self.rows[s][slot].entries() {
                        if live_state[e.target] {
                            succs.push(e.target);
                        }
                    }
                }
                succs
            });
            let mut changed = false;
            for s in 0..n {
                if !live_state[s] {
                    continue;
                }
                live[s].retain(|&slot| {
                    let keep = self.rows[s][slot]
                        .entries()
                        .iter()
                        .all(|e| live_state[e.target] && comp[e.target] == comp[s]);
                    if !keep {
                        changed = true;
                    }
                    keep
                });
                if live[s].is_empty() {
                    live_state[s] = false;
                    changed = true;
                }
            }
            if !changed {
                let mut by_comp: BTreeMap<usize, Sec> = BTreeMap::new();
                for s in 0..n {
                    if !live_state[s] {
                        continue;
                    }
                    let sec = by_comp.entry(comp[s]).or_insert_with(|| Sec {
                        states: BTreeSet::new(),
                        actions: BTreeMap::new(),
                    });
                    sec.states.insert(s);
                    sec.actions
                        .insert(s, live[s].iter().map(|&slot| self.enabled[s][slot]).collect());
                }
                return by_comp.into_values().collect();
            }
        }
    }
}

/// Tarjan strongly-connected components over an implicit graph; returns the
/// component index per node (nodes with no edges form singleton components).
fn scc(n: usize, succs: impl Fn(usize) -> Vec<usize>) -> Vec<usize> {
    const UNSET: usize = usize::MAX;
    let mut index = vec![UNSET; n];
    let mut lowlink = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comp = vec![UNSET; n];
    let mut next_index = 0usize;
    let mut next_comp = 0usize;

    // Iterative Tarjan: frame = (node, successor list, cursor).
    for root in 0..n {
        if index[root] != UNSET {
            continue;
        }
        let mut frames: Vec<(usize, Vec<usize>, usize)> = vec![(root, succs(root), 0)];
        index[root] = next_index;
        lowlink[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(frame) = frames.last_mut() {
            let v = frame.0;
            if frame.2 < frame.1.len() {
                let w = frame.1[frame.2];
                frame.2 += 1;
                if index[w] == UNSET {
                    index[w] = next_index;
                    lowlink[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    frames.push((w, succs(w), 0));
                } else if on_stack[w] {
                    lowlink[v] = lowlink[v].min(index[w]);
                }
            } else {
                if lowlink[v] == index[v] {
                    loop {
                        let w = stack.pop().expect("tarjan stack underflow");
                        on_stack[w] = false;
                        comp[w] = next_comp;
                        if w == v {
                            break;
                        }
                    }
                    next_comp += 1;
                }
                let done = frames.pop().expect("frame stack underflow").0;
                if let Some(parent) = frames.last() {
                    let p = parent.0;
                    lowlink[p] = lowlink[p].min(lowlink[done]);
                }
            }
        }
    }
    comp
}

/// Incremental construction of an [`Imdp`]; ids are interned on first use.
#[derive(Debug, Default)]
pub struct ImdpBuilder {
    states: Vec<String>,
    state_index: HashMap<String, usize>,
    actions: Vec<String>,
    action_index: HashMap<String, usize>,
    initial: Option<String>,
    transitions: BTreeMap<(usize, usize), Vec<RowEntry>>,
    rewards: BTreeMap<String, Vec<(usize, usize, f64)>>,
}

impl ImdpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&mut self, name: &str) -> usize {
        if let Some(&i) = self.state_index.get(name) {
            return i;
        }
        let i = self.states.len();
        self.states.push(name.to_owned());
        self.state_index.insert(name.to_owned(), i);
        i
    }

    pub fn action(&mut self, name: &str) -> usize {
        if let Some(&i) = self.action_index.get(name) {
            return i;
        }
        let i = self.actions.len();
        self.actions.push(name.to_owned());
        self.action_index.insert(name.to_owned(), i);
        i
    }

    pub fn initial(&mut self, name: &str) -> &mut Self {
        self.state(name);
        self.initial = Some(name.to_owned());
        self
    }

    pub fn transition(
        &mut self,
        from: &str,
        action: &str,
        to: &str,
        lower: f64,
        upper: f64,
    ) -> &mut Self {
        let s = self.state(from);
        let a = self.action(action);
        let t = self.state(to);
        self.transitions.entry((s, a)).or_default().push(RowEntry {
            target: t,
            lower,
            upper,
        });
        self
    }

    pub fn reward(&mut self, name: &str, state: &str, action: &str, value: f64) -> &mut Self {
        let s = self.state(state);
        let a = self.action(action);
        self.rewards
            .entry(name.to_owned())
            .or_default()
            .push((s, a, value));
        self
    }

    /// Declares a reward structure even if it has no entries.
    pub fn reward_structure(&mut self, name: &str) -> &mut Self {
        self.rewards.entry(name.to_owned()).or_default();
        self
    }

    pub fn build(self) -> Result<Imdp, ModelError> {
        if self.states.is_empty() {
            return Err(ModelError::Empty);
        }
        let initial_name = self.initial.ok_or(ModelError::MissingInitial)?;
        let initial = *self
            .state_index
            .get(&initial_name)
            .ok_or(ModelError::UnknownState(initial_name))?;

        let n = self.states.len();
        let mut enabled: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(s, a) in self.transitions.keys() {
            enabled[s].push(a);
        }
        for acts in &mut enabled {
            acts.sort_unstable();
            acts.dedup();
        }
        let rows = (0..n)
            .map(|s| {
                enabled[s]
                    .iter()
                    .map(|&a| IntervalRow::new(self.transitions[&(s, a)].clone()))
                    .collect()
            })
            .collect();
        let rewards = self
            .rewards
            .into_iter()
            .map(|(name, triples)| {
                let mut st = RewardStructure::new();
                for (s, a, v) in triples {
                    st.set(s, a, v);
                }
                (name, st)
            })
            .collect();
        Ok(Imdp {
            states: self.states,
            state_index: self.state_index,
            initial,
            actions: self.actions,
            action_index: self.action_index,
            enabled,
            rows,
            rewards,
        })
    }
}

/// Five-state chain demonstrating that re-drawing a mixture component at
/// every step is not a faithful execution of the mixture: both deterministic
/// strategies collect reward 1, the per-step remix only 0.75.
pub fn remix_example() -> Imdp {
    let mut b = Imdp::builder();
    b.initial("s");
    b.transition("s", "a", "t", 1.0, 1.0);
    b.transition("s", "b", "u", 1.0, 1.0);
    b.transition("u", "a", "v", 1.0, 1.0);
    b.transition("u", "b", "w", 1.0, 1.0);
    for absorbing in ["t", "v", "w"] {
        b.transition(absorbing, "a", absorbing, 1.0, 1.0);
        b.transition(absorbing, "b", absorbing, 1.0, 1.0);
    }
    b.reward("r", "s", "a", 1.0);
    b.reward("r", "u", "b", 1.0);
    b.build().expect("remix example is well-formed")
}

/// The three-state model used throughout the crate's tests: `s` branches to
/// `t` and `u` under actions `a` (reward 3) and `b` (reward 1), both of which
/// are absorbing.
pub fn running_example() -> Imdp {
    let mut b = Imdp::builder();
    b.initial("s");
    b.transition("s", "a", "t", 1.0 / 3.0, 2.0 / 3.0);
    b.transition("s", "a", "u", 1.0 / 10.0, 1.0);
    b.transition("s", "b", "t", 2.0 / 5.0, 3.0 / 5.0);
    b.transition("s", "b", "u", 1.0 / 4.0, 2.0 / 3.0);
    b.transition("t", "a", "t", 1.0, 1.0);
    b.transition("u", "b", "u", 1.0, 1.0);
    b.reward("r", "s", "a", 3.0);
    b.reward("r", "s", "b", 1.0);
    b.reward("r", "t", "a", 0.0);
    b.reward("r", "u", "b", 0.0);
    b.build().expect("running example is well-formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_example_is_valid() {
        let m = running_example();
        assert_eq!(m.validate(), Vec::new());
        assert_eq!(m.n_states(), 3);
        assert_eq!(m.enabled(m.state_id("s").unwrap()).len(), 2);
    }

    #[test]
    fn lower_sum_above_one_is_flagged() {
        let mut b = Imdp::builder();
        b.initial("s");
        b.transition("s", "a", "t", 0.7, 0.8);
        b.transition("s", "a", "u", 0.5, 0.9);
        b.transition("t", "a", "t", 1.0, 1.0);
        b.transition("u", "a", "u", 1.0, 1.0);
        let m = b.build().unwrap();
        let v = m.validate();
        assert!(v.iter().any(|v| v.rule == "lower bounds exceed 1"), "{v:?}");
    }

    #[test]
    fn zero_lower_bound_is_flagged() {
        let mut b = Imdp::builder();
        b.initial("s");
        b.transition("s", "a", "t", 0.0, 0.5);
        b.transition("s", "a", "s", 0.5, 1.0);
        b.transition("t", "a", "t", 1.0, 1.0);
        let m = b.build().unwrap();
        let v = m.validate();
        assert!(v.iter().any(|v| v.rule.contains("lower bound must be > 0")));
    }

    #[test]
    fn upper_sum_below_one_is_flagged() {
        let mut b = Imdp::builder();
        b.initial("s");
        b.transition("s", "a", "t", 0.1, 0.4);
        b.transition("t", "a", "t", 1.0, 1.0);
        let m = b.build().unwrap();
        let v = m.validate();
        assert!(v.iter().any(|v| v.rule == "upper bounds below 1"));
    }

    #[test]
    fn reachability_on_running_example() {
        let m = running_example();
        let s = m.state_id("s").unwrap();
        let t = m.state_id("t").unwrap();
        assert_eq!(m.reachable_states(s).len(), 3);
        assert_eq!(
            m.reachable_states(t),
            BTreeSet::from([t]),
            "t only has a self-loop"
        );
    }

    #[test]
    fn disconnected_state_is_not_reachable() {
        let mut b = Imdp::builder();
        b.initial("s");
        b.transition("s", "a", "s", 1.0, 1.0);
        b.transition("z", "a", "z", 1.0, 1.0);
        let m = b.build().unwrap();
        let reach = m.reachable_from("s").unwrap();
        assert!(!reach.contains(&m.state_id("z").unwrap()));
        assert!(m.reachable_from("nope").is_err());
    }

    #[test]
    fn secs_of_running_example() {
        let m = running_example();
        let secs = m.strong_end_components();
        assert_eq!(secs.len(), 2);
        let t = m.state_id("t").unwrap();
        let u = m.state_id("u").unwrap();
        let states: Vec<BTreeSet<usize>> = secs.iter().map(|sec| sec.states.clone()).collect();
        assert!(states.contains(&BTreeSet::from([t])));
        assert!(states.contains(&BTreeSet::from([u])));
        for sec in &secs {
            for acts in sec.actions.values() {
                assert_eq!(acts.len(), 1);
            }
        }
    }

    #[test]
    fn two_state_cycle_is_one_sec() {
        let mut b = Imdp::builder();
        b.initial("s");
        b.transition("s", "a", "t", 1.0, 1.0);
        b.transition("t", "a", "s", 1.0, 1.0);
        let m = b.build().unwrap();
        let secs = m.strong_end_components();
        assert_eq!(secs.len(), 1);
        assert_eq!(secs[0].states.len(), 2);
    }

    #[test]
    fn secs_are_pairwise_disjoint() {
        let mut b = Imdp::builder();
        b.initial("s");
        b.transition("s", "a", "t", 0.5, 0.7);
        b.transition("s", "a", "u", 0.3, 0.5);
        b.transition("s", "b", "s", 1.0, 1.0);
        b.transition("t", "a", "t", 1.0, 1.0);
        b.transition("u", "a", "u", 0.4, 0.6);
        b.transition("u", "a", "t", 0.4, 0.6);
        b.transition("u", "b", "u", 1.0, 1.0);
        let m = b.build().unwrap();
        let secs = m.strong_end_components();
        let mut seen = BTreeSet::new();
        for sec in &secs {
            for &s in &sec.states {
                assert!(seen.insert(s), "state {s} in two SECs");
            }
        }
    }
}
