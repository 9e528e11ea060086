//! Executable strategies: state-action frequencies, conversion of strategy
//! mixtures into randomised (counting) strategies, unrolled models for the
//! step-bounded case, Monte-Carlo simulation, and small-instance brute-force
//! oracles.
//!
//! A mixture draws one deterministic strategy at path start and sticks with
//! it; that single draw is the only randomisation needed. Collapsing the
//! mixture into a memoryless randomised strategy instead requires the
//! expected visit counts of every state-action pair: normalising those
//! frequencies row by row yields a randomised strategy with the same value.
//! Re-drawing the component at every step does not (see
//! [`per_step_remix_rows`], kept as the counterexample).

use std::collections::HashMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{Imdp, RewardStructure};
use crate::query::{BasicQuery, Bound};
use crate::robust::{vertex_enumerate, FeasibleDistribution};
use crate::vi::{CountingStrategy, NatureRecord, ViConfig};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("transient mass {residual:.3e} failed to decay within {steps} steps; \
             the strategy does not absorb under this nature")]
    NonAbsorbing { residual: f64, steps: usize },
    #[error("adversarial nature policy has no record for component {0}")]
    MissingNatureRecord(usize),
    #[error("mixture probabilities must form a distribution (sum {0})")]
    BadMixture(f64),
    #[error("mixture components disagree on the step horizon")]
    MixedHorizons,
    #[error("instance too large for the brute-force oracle: {0}")]
    OracleGuard(String),
    #[error("unrolling k_max={k_max} over {states} states exceeds the size guard")]
    UnrolledTooLarge { k_max: u32, states: usize },
    #[error("policy evaluation did not converge (residual {0:.3e})")]
    EvaluationDiverged(f64),
    #[error(transparent)]
    Robust(#[from] crate::robust::RobustError),
}

/// The canonical interior point of a row: every entry at
/// `lower + t·(upper − lower)` with the single `t` that makes the row sum to
/// one.
pub fn midpoint_distribution(row: &crate::model::IntervalRow) -> FeasibleDistribution {
    let lower_sum = row.lower_sum();
    let upper_sum = row.upper_sum();
    let t = if upper_sum - lower_sum > 1e-15 {
        ((1.0 - lower_sum) / (upper_sum - lower_sum)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    FeasibleDistribution {
        probs: row
            .entries()
            .iter()
            .map(|e| (e.target, e.lower + t * (e.upper - e.lower)))
            .collect(),
    }
}

/// A deterministic pseudo-random vertex of the row's feasible polytope,
/// keyed by `(seed, state, action)`: lower bounds first, then the remaining
/// mass handed out in a seeded shuffle order up to each upper bound.
pub fn seeded_vertex(
    row: &crate::model::IntervalRow,
    seed: u64,
    state: usize,
    action: usize,
) -> FeasibleDistribution {
    let key = seed
        ^ (state as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (action as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.shuffle(&mut rng);
    let mut probs: Vec<(usize, f64)> = row
        .entries()
        .iter()
        .map(|e| (e.target, e.lower))
        .collect();
    let mut remaining = 1.0 - row.lower_sum();
    for i in order {
        if remaining <= 0.0 {
            break;
        }
        let e = &row.entries()[i];
        let take = (e.upper - e.lower).min(remaining);
        probs[i].1 += take;
        remaining -= take;
    }
    FeasibleDistribution { probs }
}

/// How interval uncertainty is resolved when a strategy is executed.
#[derive(Debug, Clone)]
pub enum NaturePolicy {
    /// Worst-case witnesses recorded by value iteration, one record per
    /// mixture component. Only meaningful when the executed actions are the
    /// recorded strategy's own.
    Adversarial(Vec<NatureRecord>),
    /// One pseudo-random vertex per (state, action), fixed for the run.
    FixedVertex { seed: u64 },
    /// The canonical interior point of every row.
    Midpoint,
}

impl NaturePolicy {
    fn resolve(
        &self,
        model: &Imdp,
        state: usize,
        slot: usize,
        bucket: usize,
        component: usize,
    ) -> Result<FeasibleDistribution, RuntimeError> {
        match self {
            NaturePolicy::Adversarial(records) => records
                .get(component)
                .map(|r| r.at_bucket(state, bucket).clone())
                .ok_or(RuntimeError::MissingNatureRecord(component)),
            NaturePolicy::FixedVertex { seed } => Ok(seeded_vertex(
                model.row(state, slot),
                *seed,
                state,
                model.enabled(state)[slot],
            )),
            NaturePolicy::Midpoint => Ok(midpoint_distribution(model.row(state, slot))),
        }
    }
}

/// A distribution over deterministic counting strategies, drawn once at path
/// start.
#[derive(Debug, Clone)]
pub struct MixtureStrategy {
    pub components: Vec<(CountingStrategy, f64)>,
}

impl MixtureStrategy {
    pub fn new(components: Vec<(CountingStrategy, f64)>) -> Result<Self, RuntimeError> {
        let total: f64 = components.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 || components.iter().any(|(_, p)| *p < 0.0) {
            return Err(RuntimeError::BadMixture(total));
        }
        let k = components.first().map(|(c, _)| c.k_max());
        if components.iter().any(|(c, _)| Some(c.k_max()) != k) {
            return Err(RuntimeError::MixedHorizons);
        }
        Ok(MixtureStrategy { components })
    }

    pub fn k_max(&self) -> u32 {
        self.components.first().map_or(0, |(c, _)| c.k_max())
    }
}

/// Step-indexed state-action occupation measures: buckets `0..k_max` hold
/// one execution step each, bucket `k_max` aggregates every later step.
#[derive(Debug, Clone)]
pub struct FrequencyTable {
    /// `[bucket][state][action slot]`
    pub buckets: Vec<Vec<Vec<f64>>>,
    /// Transient mass recorded per bucket (for conservation checks).
    pub bucket_mass: Vec<f64>,
}

impl FrequencyTable {
    pub fn k_max(&self) -> usize {
        self.buckets.len() - 1
    }

    fn zeros(model: &Imdp, k_max: usize) -> Self {
        let shape: Vec<Vec<f64>> = (0..model.n_states())
            .map(|s| vec![0.0; model.enabled(s).len()])
            .collect();
        FrequencyTable {
            buckets: vec![shape; k_max + 1],
            bucket_mass: vec![0.0; k_max + 1],
        }
    }

    fn weighted_add(&mut self, other: &FrequencyTable, p: f64) {
        for (b, bucket) in other.buckets.iter().enumerate() {
            for (s, row) in bucket.iter().enumerate() {
                for (slot, v) in row.iter().enumerate() {
                    self.buckets[b][s][slot] += p * v;
                }
            }
            self.bucket_mass[b] += p * other.bucket_mass[b];
        }
    }
}

const FREQ_STEP_CAP: usize = 1_000_000;

/// Forward-propagated expected visit counts of a deterministic counting
/// strategy under a fixed nature. Mass that reaches a state whose tail
/// dynamics are a guaranteed self-loop is treated as absorbed and dropped;
/// the iteration stops once the remaining transient mass falls below
/// `tolerance` and errors if it never does.
pub fn state_action_frequencies(
    model: &Imdp,
    strategy: &CountingStrategy,
    nature: &NaturePolicy,
    tolerance: f64,
) -> Result<FrequencyTable, RuntimeError> {
    frequencies_for_component(model, strategy, nature, 0, tolerance)
}

/// Mixture frequencies: the probability-weighted average of the component
/// frequencies (component `j` resolves adversarial natures with record `j`).
pub fn mixture_frequencies(
    model: &Imdp,
    mixture: &MixtureStrategy,
    nature: &NaturePolicy,
    tolerance: f64,
) -> Result<FrequencyTable, RuntimeError> {
    let k_max = mixture.k_max() as usize;
    let mut out = FrequencyTable::zeros(model, k_max);
    for (j, (component, p)) in mixture.components.iter().enumerate() {
        if *p == 0.0 {
            continue;
        }
        let table = frequencies_for_component(model, component, nature, j, tolerance)?;
        out.weighted_add(&table, *p);
    }
    Ok(out)
}

fn frequencies_for_component(
    model: &Imdp,
    strategy: &CountingStrategy,
    nature: &NaturePolicy,
    component: usize,
    tolerance: f64,
) -> Result<FrequencyTable, RuntimeError> {
    let ns = model.n_states();
    let k_max = strategy.k_max() as usize;
    let mut table = FrequencyTable::zeros(model, k_max);

    // Absorption under the tail: the chosen tail action loops back with
    // probability one.
    let mut absorbing = vec![false; ns];
    for s in 0..ns {
        let slot = strategy.tail[s];
        let d = nature.resolve(model, s, slot, k_max, component)?;
        absorbing[s] =
            d.probs.len() == 1 && d.probs[0].0 == s && (d.probs[0].1 - 1.0).abs() < 1e-12;
    }

    let mut x = vec![0.0; ns];
    x[model.initial()] = 1.0;
    for step in 0..FREQ_STEP_CAP {
        let bucket = step.min(k_max);
        let tail_phase = step >= k_max;
        let mut transient = 0.0;
        for s in 0..ns {
            if x[s] == 0.0 || (tail_phase && absorbing[s]) {
                continue;
            }
            transient += x[s];
        }
        if tail_phase && transient < tolerance {
            return Ok(table);
        }

        let mut next = vec![0.0; ns];
        for s in 0..ns {
            let mass = x[s];
            if mass == 0.0 || (tail_phase && absorbing[s]) {
                continue;
            }
            let slot = strategy.slot_at_bucket(s, bucket);
            table.buckets[bucket][s][slot] += mass;
            let d = nature.resolve(model, s, slot, bucket, component)?;
            for &(t, p) in &d.probs {
                next[t] += mass * p;
            }
        }
        table.bucket_mass[bucket] += transient;
        x = next;
    }
    let residual: f64 = (0..ns)
        .filter(|&s| !absorbing[s])
        .map(|s| x[s])
        .sum();
    Err(RuntimeError::NonAbsorbing {
        residual,
        steps: FREQ_STEP_CAP,
    })
}

/// Randomised counting strategy: a distribution over enabled actions per
/// (state, step bucket); steps at or past `k_max` use the last bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomisedCountingStrategy {
    /// `[bucket][state][action slot]`
    pub probs: Vec<Vec<Vec<f64>>>,
}

impl RandomisedCountingStrategy {
    pub fn k_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn row(&self, state: usize, bucket: usize) -> &[f64] {
        &self.probs[bucket.min(self.probs.len() - 1)][state]
    }
}

/// Row-normalises a frequency table into a randomised strategy. Rows that
/// were never visited get the uniform distribution over enabled actions (the
/// normalisation is 0/0 there, and uniform is the least committal total
/// extension).
pub fn randomise(model: &Imdp, frequencies: &FrequencyTable) -> RandomisedCountingStrategy {
    let probs = frequencies
        .buckets
        .iter()
        .map(|bucket| {
            (0..model.n_states())
                .map(|s| {
                    let row = &bucket[s];
                    let total: f64 = row.iter().sum();
                    if total > 0.0 {
                        row.iter().map(|v| v / total).collect()
                    } else {
                        let k = row.len().max(1);
                        vec![1.0 / k as f64; row.len()]
                    }
                })
                .collect()
        })
        .collect();
    RandomisedCountingStrategy { probs }
}

/// The memoryless strategy that re-draws a mixture component at every step:
/// each row is the probability-weighted blend of the component choices. This
/// is the *wrong* way to execute a mixture and exists to demonstrate it.
pub fn per_step_remix_rows(model: &Imdp, mixture: &MixtureStrategy) -> RandomisedCountingStrategy {
    let k_max = mixture.k_max() as usize;
    let probs = (0..=k_max)
        .map(|bucket| {
            (0..model.n_states())
                .map(|s| {
                    let mut row = vec![0.0; model.enabled(s).len()];
                    for (component, p) in &mixture.components {
                        row[component.slot_at_bucket(s, bucket)] += p;
                    }
                    row
                })
                .collect()
        })
        .collect();
    RandomisedCountingStrategy { probs }
}

/// A step-layered copy of a model: layer `i < k_max` feeds layer `i+1`,
/// layer `k_max` keeps the original dynamics. Reward structures are zeroed on
/// layers at or past their bound.
#[derive(Debug)]
pub struct Unrolled {
    pub model: Imdp,
    /// unrolled state index -> (original state, layer)
    pub layer_map: Vec<(usize, usize)>,
}

const UNROLLED_STATE_GUARD: usize = 5_000_000;

pub fn build_unrolled(
    model: &Imdp,
    k_max: u32,
    structures: &[(String, Bound)],
) -> Result<Unrolled, RuntimeError> {
    let layers = k_max as usize + 1;
    if layers.saturating_mul(model.n_states()) > UNROLLED_STATE_GUARD {
        return Err(RuntimeError::UnrolledTooLarge {
            k_max,
            states: model.n_states(),
        });
    }
    let name = |s: usize, layer: usize| format!("{}#{layer}", model.state_name(s));
    let mut b = Imdp::builder();
    b.initial(&name(model.initial(), 0));
    for layer in 0..layers {
        let next = (layer + 1).min(k_max as usize);
        for s in 0..model.n_states() {
            for (slot, &a) in model.enabled(s).iter().enumerate() {
                for e in model.row(s, slot).entries() {
                    b.transition(
                        &name(s, layer),
                        model.action_name(a),
                        &name(e.target, next),
                        e.lower,
                        e.upper,
                    );
                }
            }
        }
    }
    let mut unrolled = b.build().expect("unrolled model has an initial state");
    for (st_name, bound) in structures {
        let src = model
            .reward(st_name)
            .expect("structure exists on the source model");
        let mut st = RewardStructure::new();
        for layer in 0..layers {
            if !bound.at_least(layer as u32 + 1) {
                continue;
            }
            for (s, a, v) in src.iter() {
                if v != 0.0 {
                    let us = unrolled.state_id(&name(s, layer)).unwrap();
                    let ua = unrolled.action_id(model.action_name(a)).unwrap();
                    st.set(us, ua, v);
                }
            }
        }
        unrolled.add_reward(st_name.clone(), st);
    }
    let mut layer_map = vec![(0usize, 0usize); unrolled.n_states()];
    for s in 0..model.n_states() {
        for layer in 0..layers {
            if let Some(us) = unrolled.state_id(&name(s, layer)) {
                layer_map[us] = (s, layer);
            }
        }
    }
    Ok(Unrolled {
        model: unrolled,
        layer_map,
    })
}

/// Strategy forms the simulator can execute.
#[derive(Debug, Clone, Copy)]
pub enum ExecutableStrategy<'a> {
    Counting(&'a CountingStrategy),
    Mixture(&'a MixtureStrategy),
    Randomised(&'a RandomisedCountingStrategy),
    /// Deliberately re-draws the mixture component at every step.
    PerStepRemix(&'a MixtureStrategy),
}

#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    pub runs: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Run the batch sequentially even with the `parallel` feature on.
    pub sequential: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            runs: 10_000,
            horizon: 1_000,
            seed: 0xD1CE,
            sequential: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimReport {
    /// Per-objective sample means of the accumulated rewards.
    pub means: Vec<f64>,
    /// 95% normal-approximation confidence half-widths.
    pub half_widths: Vec<f64>,
    pub runs: usize,
}

fn sample(d: &FeasibleDistribution, rng: &mut ChaCha8Rng) -> usize {
    let mut u: f64 = rng.gen();
    for &(t, p) in &d.probs {
        if u < p {
            return t;
        }
        u -= p;
    }
    d.probs.last().map(|&(t, _)| t).expect("nonempty row")
}

fn sample_slot(row: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let mut u: f64 = rng.gen();
    for (slot, &p) in row.iter().enumerate() {
        if u < p {
            return slot;
        }
        u -= p;
    }
    row.len() - 1
}

/// Monte-Carlo estimate of the per-objective accumulated rewards under the
/// given strategy and nature. Runs are seeded independently from the master
/// seed, so reports are reproducible and independent of the execution order.
pub fn simulate(
    basic: &BasicQuery,
    strategy: ExecutableStrategy<'_>,
    nature: &NaturePolicy,
    cfg: &SimConfig,
) -> Result<SimReport, RuntimeError> {
    let n = basic.n_objectives();
    let run_one = |run: usize| -> Result<Vec<f64>, RuntimeError> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(run as u64 + 1);
        let model = &basic.model;
        let mut state = model.initial();
        let mut acc = vec![0.0; n];
        // The component is drawn once, before the walk.
        let (mode_component, k_strat): (usize, usize) = match strategy {
            ExecutableStrategy::Counting(c) => (0, c.k_max() as usize),
            ExecutableStrategy::Mixture(m) => {
                let mut u: f64 = rng.gen();
                let mut chosen = m.components.len() - 1;
                for (j, (_, p)) in m.components.iter().enumerate() {
                    if u < *p {
                        chosen = j;
                        break;
                    }
                    u -= p;
                }
                (chosen, m.k_max() as usize)
            }
            ExecutableStrategy::Randomised(r) => (0, r.k_max()),
            ExecutableStrategy::PerStepRemix(m) => (0, m.k_max() as usize),
        };
        for step in 1..=cfg.horizon {
            let bucket = (step - 1).min(k_strat);
            let (slot, component) = match strategy {
                ExecutableStrategy::Counting(c) => (c.slot_at_bucket(state, bucket), 0),
                ExecutableStrategy::Mixture(m) => (
                    m.components[mode_component].0.slot_at_bucket(state, bucket),
                    mode_component,
                ),
                ExecutableStrategy::Randomised(r) => {
                    (sample_slot(r.row(state, bucket), &mut rng), 0)
                }
                ExecutableStrategy::PerStepRemix(m) => {
                    let mut u: f64 = rng.gen();
                    let mut chosen = m.components.len() - 1;
                    for (j, (_, p)) in m.components.iter().enumerate() {
                        if u < *p {
                            chosen = j;
                            break;
                        }
                        u -= p;
                    }
                    (m.components[chosen].0.slot_at_bucket(state, bucket), chosen)
                }
            };
            for i in 0..n {
                if basic.bounds[i].at_least(step as u32) {
                    acc[i] += basic.reward(i, state, slot);
                }
            }
            let d = nature.resolve(model, state, slot, bucket, component)?;
            state = sample(&d, &mut rng);
        }
        Ok(acc)
    };

    let samples: Vec<Result<Vec<f64>, RuntimeError>> = {
        #[cfg(feature = "parallel")]
        {
            if !cfg.sequential {
                (0..cfg.runs).into_par_iter().map(run_one).collect()
            } else {
                (0..cfg.runs).map(run_one).collect()
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..cfg.runs).map(run_one).collect()
        }
    };
    let mut sums = vec![0.0; n];
    let mut sq = vec![0.0; n];
    for sample in samples {
        let acc = sample?;
        for i in 0..n {
            sums[i] += acc[i];
            sq[i] += acc[i] * acc[i];
        }
    }
    let runs = cfg.runs as f64;
    let means: Vec<f64> = sums.iter().map(|s| s / runs).collect();
    let half_widths = (0..n)
        .map(|i| {
            let var = (sq[i] / runs - means[i] * means[i]).max(0.0);
            1.96 * (var / runs).sqrt()
        })
        .collect();
    Ok(SimReport {
        means,
        half_widths,
        runs: cfg.runs,
    })
}

/// Exact per-objective value of a randomised counting strategy under a fixed
/// nature, by policy evaluation: a fixpoint for the tail rows followed by a
/// backward pass over the step buckets.
pub fn evaluate_randomised(
    basic: &BasicQuery,
    strategy: &RandomisedCountingStrategy,
    nature: &NaturePolicy,
    cfg: &ViConfig,
) -> Result<Vec<f64>, RuntimeError> {
    let model = &basic.model;
    let ns = model.n_states();
    let n = basic.n_objectives();
    let k_strat = strategy.k_max();
    let horizon = (basic.k_max().unwrap_or(0) as usize).max(k_strat);

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = vec![0.0; ns];
        if basic.bounds[i].is_infinite() {
            let mut iters = 0usize;
            loop {
                let mut y = vec![0.0; ns];
                let mut delta = 0.0f64;
                for s in 0..ns {
                    let row = strategy.row(s, k_strat);
                    let mut v = 0.0;
                    for (slot, &p) in row.iter().enumerate() {
                        if p == 0.0 {
                            continue;
                        }
                        let d = nature.resolve(model, s, slot, k_strat, 0)?;
                        v += p * (basic.reward(i, s, slot) + d.dot(&x));
                    }
                    y[s] = v;
                    delta = delta.max((y[s] - x[s]).abs());
                }
                x = y;
                if delta <= cfg.epsilon {
                    break;
                }
                iters += 1;
                if iters >= cfg.max_iters {
                    return Err(RuntimeError::EvaluationDiverged(delta));
                }
            }
        }
        for j in (1..=horizon).rev() {
            if !basic.bounds[i].at_least(j as u32) {
                continue;
            }
            let bucket = j - 1;
            let mut y = vec![0.0; ns];
            for s in 0..ns {
                let row = strategy.row(s, bucket);
                let mut v = 0.0;
                for (slot, &p) in row.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let d = nature.resolve(model, s, slot, bucket, 0)?;
                    v += p * (basic.reward(i, s, slot) + d.dot(&x));
                }
                y[s] = v;
            }
            x = y;
        }
        out.push(x[model.initial()]);
    }
    Ok(out)
}

/// Size guard for the exhaustive oracle.
#[derive(Debug, Clone, Copy)]
pub struct OracleGuard {
    pub max_assignments: u64,
    pub max_states: usize,
}

impl Default for OracleGuard {
    fn default() -> Self {
        OracleGuard {
            max_assignments: 1 << 21,
            max_states: 16,
        }
    }
}

/// Reachable (state, step) pairs for steps `1..=k_max`, over all actions.
fn reachable_pairs(model: &Imdp, k_max: u32) -> Vec<Vec<bool>> {
    let ns = model.n_states();
    let mut layers: Vec<Vec<bool>> = Vec::with_capacity(k_max as usize);
    let mut current = vec![false; ns];
    current[model.initial()] = true;
    for _ in 0..k_max {
        layers.push(current.clone());
        let mut next = vec![false; ns];
        for s in 0..ns {
            if !current[s] {
                continue;
            }
            for slot in 0..model.enabled(s).len() {
                for e in model.row(s, slot).entries() {
                    next[e.target] = true;
                }
            }
        }
        current = next;
    }
    layers
}

struct StrategySpace {
    /// (state, 1-based step) pairs being enumerated, with slot counts.
    pairs: Vec<(usize, u32, usize)>,
    total: u64,
}

fn strategy_space(
    basic: &BasicQuery,
    guard: &OracleGuard,
) -> Result<StrategySpace, RuntimeError> {
    let model = &basic.model;
    if basic.bounds.iter().any(|b| b.is_infinite()) {
        return Err(RuntimeError::OracleGuard(
            "all bounds must be finite".into(),
        ));
    }
    if model.n_states() > guard.max_states {
        return Err(RuntimeError::OracleGuard(format!(
            "{} states exceeds the {}-state cap",
            model.n_states(),
            guard.max_states
        )));
    }
    let k_max = basic.k_max().unwrap_or(0);
    let layers = reachable_pairs(model, k_max);
    let mut pairs = Vec::new();
    let mut total: u64 = 1;
    for (j0, layer) in layers.iter().enumerate() {
        for (s, &reachable) in layer.iter().enumerate() {
            if !reachable {
                continue;
            }
            let slots = model.enabled(s).len();
            if slots > 1 {
                pairs.push((s, j0 as u32 + 1, slots));
                total = total.saturating_mul(slots as u64);
                if total > guard.max_assignments {
                    return Err(RuntimeError::OracleGuard(format!(
                        "more than {} strategy assignments",
                        guard.max_assignments
                    )));
                }
            }
        }
    }
    Ok(StrategySpace { pairs, total })
}

fn vertex_cache(model: &Imdp) -> Result<Vec<Vec<Vec<FeasibleDistribution>>>, RuntimeError> {
    (0..model.n_states())
        .map(|s| {
            (0..model.enabled(s).len())
                .map(|slot| Ok(vertex_enumerate(model.row(s, slot))?))
                .collect()
        })
        .collect()
}

/// Exhaustive oracle: enumerates every counting deterministic strategy on
/// the reachable (state, step) pairs and computes, per strategy, the exact
/// per-objective worst case over vertex natures by backward induction. The
/// result is the oracle's achievable point set (componentwise-dominated
/// entries pruned); `r` is achievable iff it lies in the downward closure of
/// the convex hull of these points.
pub fn brute_force_achievable(
    basic: &BasicQuery,
    guard: &OracleGuard,
) -> Result<Vec<Vec<f64>>, RuntimeError> {
    let model = &basic.model;
    let space = strategy_space(basic, guard)?;
    let verts = vertex_cache(model)?;
    let k_max = basic.k_max().unwrap_or(0);
    let n = basic.n_objectives();
    let ns = model.n_states();

    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut assignment = vec![0usize; space.pairs.len()];
    for _ in 0..space.total {
        let slot_of = |s: usize, j: u32| -> usize {
            space
                .pairs
                .iter()
                .position(|&(ps, pj, _)| ps == s && pj == j)
                .map(|k| assignment[k])
                .unwrap_or(0)
        };
        let mut point = Vec::with_capacity(n);
        for i in 0..n {
            let mut v = vec![0.0; ns];
            for j in (1..=k_max).rev() {
                if !basic.bounds[i].at_least(j) {
                    continue;
                }
                let mut y = vec![0.0; ns];
                for s in 0..ns {
                    let slot = slot_of(s, j);
                    let worst = verts[s][slot]
                        .iter()
                        .map(|d| d.dot(&v))
                        .fold(f64::INFINITY, f64::min);
                    y[s] = basic.reward(i, s, slot) + worst;
                }
                v = y;
            }
            point.push(v[model.initial()]);
        }
        if !points
            .iter()
            .any(|q| q.iter().zip(&point).all(|(a, b)| (a - b).abs() <= 1e-12))
        {
            points.push(point);
        }
        // Odometer.
        for k in 0..assignment.len() {
            assignment[k] += 1;
            if assignment[k] < space.pairs[k].2 {
                break;
            }
            assignment[k] = 0;
        }
    }
    // Keep only componentwise-undominated points; the hull is unchanged.
    let kept: Vec<Vec<f64>> = points
        .iter()
        .filter(|p| {
            !points.iter().any(|q| {
                q.iter().zip(p.iter()).all(|(a, b)| a >= b)
                    && q.iter().zip(p.iter()).any(|(a, b)| *a > b + 1e-12)
            })
        })
        .cloned()
        .collect();
    Ok(kept)
}

/// Exhaustive robust weighted optimum `max_σ min_π E[w·r]`, same enumeration
/// as [`brute_force_achievable`] but with the step-dependent weighted reward
/// as the single objective.
pub fn brute_force_weighted_value(
    basic: &BasicQuery,
    w: &[f64],
    guard: &OracleGuard,
) -> Result<f64, RuntimeError> {
    let model = &basic.model;
    let space = strategy_space(basic, guard)?;
    let verts = vertex_cache(model)?;
    let k_max = basic.k_max().unwrap_or(0);
    let ns = model.n_states();

    let mut best = f64::NEG_INFINITY;
    let mut assignment = vec![0usize; space.pairs.len()];
    for _ in 0..space.total {
        let slot_of = |s: usize, j: u32| -> usize {
            space
                .pairs
                .iter()
                .position(|&(ps, pj, _)| ps == s && pj == j)
                .map(|k| assignment[k])
                .unwrap_or(0)
        };
        let mut v = vec![0.0; ns];
        for j in (1..=k_max).rev() {
            let mut y = vec![0.0; ns];
            for s in 0..ns {
                let slot = slot_of(s, j);
                let step_reward: f64 = (0..basic.n_objectives())
                    .filter(|&i| basic.bounds[i].at_least(j))
                    .map(|i| w[i] * basic.reward(i, s, slot))
                    .sum();
                let worst = verts[s][slot]
                    .iter()
                    .map(|d| d.dot(&v))
                    .fold(f64::INFINITY, f64::min);
                y[s] = step_reward + worst;
            }
            v = y;
        }
        best = best.max(v[model.initial()]);
        for k in 0..assignment.len() {
            assignment[k] += 1;
            if assignment[k] < space.pairs[k].2 {
                break;
            }
            assignment[k] = 0;
        }
    }
    Ok(best)
}

/// Membership of `r` in the downward closure of the convex hull of 2-D
/// points, by direct frontier arithmetic (no LP involved; this is the
/// oracle-side membership test).
pub fn dwc_contains_2d(points: &[Vec<f64>], r: &[f64], tol: f64) -> bool {
    assert!(!points.is_empty());
    // Non-dominated points sorted by x ascending, y descending.
    let mut frontier: Vec<&Vec<f64>> = points
        .iter()
        .filter(|p| {
            !points.iter().any(|q| {
                q[0] >= p[0] && q[1] >= p[1] && (q[0] > p[0] || q[1] > p[1])
            })
        })
        .collect();
    frontier.sort_by(|a, b| a[0].total_cmp(&b[0]).then(b[1].total_cmp(&a[1])));
    frontier.dedup_by(|a, b| a[0] == b[0] && a[1] == b[1]);
    let mut chain: Vec<&Vec<f64>> = Vec::new();
    for p in frontier {
        while chain.len() >= 2 {
            let a = chain[chain.len() - 2];
            let b = chain[chain.len() - 1];
            let cross = (p[0] - a[0]) * (b[1] - a[1]) - (p[1] - a[1]) * (b[0] - a[0]);
            if cross <= 0.0 {
                chain.pop();
            } else {
                break;
            }
        }
        chain.push(p);
    }
    let last = chain[chain.len() - 1];
    if r[0] > last[0] + tol {
        return false;
    }
    let first = chain[0];
    if r[0] <= first[0] {
        return r[1] <= first[1] + tol;
    }
    for w in chain.windows(2) {
        if r[0] <= w[1][0] {
            let t = (r[0] - w[0][0]) / (w[1][0] - w[0][0]);
            let y = w[0][1] + t * (w[1][1] - w[0][1]);
            return r[1] <= y + tol;
        }
    }
    r[1] <= last[1] + tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::remix_example;
    use crate::query::{Objective, ObjectiveKind, Query, QueryMode, RelOp};

    fn remix_basic() -> BasicQuery {
        let m = remix_example();
        let q = Query {
            mode: QueryMode::Synth,
            objectives: vec![Objective {
                kind: ObjectiveKind::Reward {
                    structure: "r".into(),
                },
                op: RelOp::Ge,
                threshold: 1.0,
                bound: Bound::Infinite,
            }],
        };
        crate::query::to_basic_form(&m, &q).unwrap()
    }

    fn always(model: &Imdp, action: &str) -> CountingStrategy {
        let tail = (0..model.n_states())
            .map(|s| {
                model
                    .enabled(s)
                    .iter()
                    .position(|&a| model.action_name(a) == action)
                    .unwrap_or(0)
            })
            .collect();
        CountingStrategy {
            per_step: Vec::new(),
            tail,
        }
    }

    #[test]
    fn component_frequencies_match_the_chain() {
        let basic = remix_basic();
        let m = &basic.model;
        let s = m.state_id("s@").unwrap();
        let u = m.state_id("u@").unwrap();
        let sa = always(m, "a");
        let sb = always(m, "b");
        let fa = state_action_frequencies(m, &sa, &NaturePolicy::Midpoint, 1e-12).unwrap();
        assert!((fa.buckets[0][s][0] - 1.0).abs() < 1e-12);
        assert_eq!(fa.buckets[0][u][0], 0.0);
        let fb = state_action_frequencies(m, &sb, &NaturePolicy::Midpoint, 1e-12).unwrap();
        assert!((fb.buckets[0][s][1] - 1.0).abs() < 1e-12);
        assert!((fb.buckets[0][u][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixture_frequencies_and_randomisation() {
        let basic = remix_basic();
        let m = &basic.model;
        let mix = MixtureStrategy::new(vec![(always(m, "a"), 0.5), (always(m, "b"), 0.5)])
            .unwrap();
        let table = mixture_frequencies(m, &mix, &NaturePolicy::Midpoint, 1e-12).unwrap();
        let s = m.state_id("s@").unwrap();
        let u = m.state_id("u@").unwrap();
        assert!((table.buckets[0][s][0] - 0.5).abs() < 1e-12);
        assert!((table.buckets[0][s][1] - 0.5).abs() < 1e-12);
        assert!((table.buckets[0][u][1] - 0.5).abs() < 1e-12);

        let sigma = randomise(m, &table);
        assert!((sigma.row(s, 0)[0] - 0.5).abs() < 1e-12);
        assert!((sigma.row(s, 0)[1] - 0.5).abs() < 1e-12);
        assert_eq!(sigma.row(u, 0)[0], 0.0);
        assert_eq!(sigma.row(u, 0)[1], 1.0);

        // Exact value of the frequency-randomised strategy is 1.
        let v = evaluate_randomised(
            &basic,
            &sigma,
            &NaturePolicy::Midpoint,
            &ViConfig::default(),
        )
        .unwrap();
        assert_eq!(v, vec![1.0]);

        // The naive per-step remix loses a quarter of the value, exactly.
        let remix = per_step_remix_rows(m, &mix);
        let v = evaluate_randomised(
            &basic,
            &remix,
            &NaturePolicy::Midpoint,
            &ViConfig::default(),
        )
        .unwrap();
        assert_eq!(v, vec![0.75]);
    }

    #[test]
    fn deterministic_chain_simulates_with_zero_variance() {
        let basic = remix_basic();
        let m = &basic.model;
        let sa = always(m, "a");
        let report = simulate(
            &basic,
            ExecutableStrategy::Counting(&sa),
            &NaturePolicy::Midpoint,
            &SimConfig {
                runs: 200,
                horizon: 10,
                seed: 7,
                sequential: false,
            },
        )
        .unwrap();
        assert_eq!(report.means, vec![1.0]);
        assert_eq!(report.half_widths, vec![0.0]);
    }

    #[test]
    fn unrolled_shape() {
        let m = crate::model::running_example();
        let u = build_unrolled(&m, 2, &[("r".into(), Bound::Finite(1))]).unwrap();
        assert_eq!(u.model.n_states(), 3 * m.n_states());
        // Reward only in layer 0.
        let r = u.model.reward("r").unwrap();
        let s0 = u.model.state_id("s#0").unwrap();
        let s1 = u.model.state_id("s#1").unwrap();
        let a = u.model.action_id("a").unwrap();
        assert_eq!(r.get(s0, a), 3.0);
        assert_eq!(r.get(s1, a), 0.0);
    }

    #[test]
    fn non_absorbing_strategy_reports_divergence() {
        // Two-state cycle: mass never decays.
        let mut b = Imdp::builder();
        b.initial("p");
        b.transition("p", "a", "q", 1.0, 1.0);
        b.transition("q", "a", "p", 1.0, 1.0);
        let m = b.build().unwrap();
        let sigma = CountingStrategy {
            per_step: Vec::new(),
            tail: vec![0, 0],
        };
        let err = state_action_frequencies(&m, &sigma, &NaturePolicy::Midpoint, 1e-9);
        assert!(matches!(err, Err(RuntimeError::NonAbsorbing { .. })));
    }

    #[test]
    fn oracle_on_the_running_example() {
        let m = crate::model::running_example();
        let q = crate::query::running_example_query(&m);
        let basic = crate::query::to_basic_form(&m, &q).unwrap();
        let points = brute_force_achievable(&basic, &OracleGuard::default()).unwrap();
        // Extreme points among strategy values.
        let has = |x: f64, y: f64| {
            points
                .iter()
                .any(|p| (p[0] - x).abs() < 1e-9 && (p[1] - y).abs() < 1e-9)
        };
        assert!(has(1.0 / 3.0, 3.0), "{points:?}");
        assert!(has(0.4, 1.0), "{points:?}");
        assert!(dwc_contains_2d(&points, &[1.0 / 3.0, 0.25], 1e-9));
        assert!(!dwc_contains_2d(&points, &[0.41, 0.0], 1e-9));
    }

    #[test]
    fn midpoint_and_vertex_natures_are_feasible() {
        let m = crate::model::running_example();
        for s in 0..m.n_states() {
            for slot in 0..m.enabled(s).len() {
                let row = m.row(s, slot);
                for d in [
                    midpoint_distribution(row),
                    seeded_vertex(row, 42, s, m.enabled(s)[slot]),
                ] {
                    assert!((d.total() - 1.0).abs() < 1e-12);
                    for (e, &(t, p)) in row.entries().iter().zip(&d.probs) {
                        assert_eq!(e.target, t);
                        assert!(p >= e.lower - 1e-12 && p <= e.upper + 1e-12);
                    }
                }
            }
        }
    }
}
