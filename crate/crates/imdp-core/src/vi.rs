//! Robust weighted value iteration.
//!
//! Given a basic query and a weight vector `w`, the three-phase sweep
//! computes a deterministic counting strategy maximising the expected
//! `w`-weighted total reward against an adversarial nature:
//!
//! 1. infinite-horizon weighted iteration recording the memoryless tail
//!    choices and their worst-case natures,
//! 2. per-objective policy evaluation of the tail under the recorded
//!    natures,
//! 3. a backward pass over the finite horizon recording per-step choices.
//!
//! State sweeps are Jacobi-style (each update reads the previous vector), so
//! they parallelise over states; with the `parallel` feature they run on
//! rayon.

use thiserror::Error;

use crate::query::BasicQuery;
use crate::robust::{robust_extremum_lex, Direction, FeasibleDistribution};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Error)]
pub enum ViError {
    #[error("value iteration phase {phase} did not converge (residual {residual:.3e}); \
             reward divergence that preprocessing missed?")]
    NonConvergence { phase: u8, residual: f64 },
    #[error("infeasible transition row at state `{state}`, action `{action}`")]
    InfeasibleModel { state: String, action: String },
}

#[derive(Debug, Clone, Copy)]
pub struct ViConfig {
    /// Convergence threshold on the residual.
    pub epsilon: f64,
    /// Iteration cap for the convergent phases.
    pub max_iters: usize,
    /// Use a relative residual `|y-x| / max(1,|y|)` instead of the absolute
    /// one.
    pub relative: bool,
    /// Run state sweeps sequentially even when the `parallel` feature is
    /// enabled; the benchmarks use this to compare both paths.
    pub sequential: bool,
}

impl Default for ViConfig {
    fn default() -> Self {
        ViConfig {
            epsilon: 1e-6,
            max_iters: 1_000_000,
            relative: false,
            sequential: false,
        }
    }
}

impl ViConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        ViConfig {
            epsilon,
            ..Default::default()
        }
    }
}

/// Deterministic counting strategy: per-step choices for execution steps
/// `1..=k_max` and a memoryless tail for every later step. Entries are
/// action slots into the model's per-state enabled list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountingStrategy {
    pub per_step: Vec<Vec<usize>>,
    pub tail: Vec<usize>,
}

impl CountingStrategy {
    pub fn k_max(&self) -> u32 {
        self.per_step.len() as u32
    }

    /// Action slot taken at 1-based execution step `step`.
    pub fn slot_at(&self, state: usize, step: u32) -> usize {
        if step >= 1 && (step as usize) <= self.per_step.len() {
            self.per_step[step as usize - 1][state]
        } else {
            self.tail[state]
        }
    }

    /// Action slot for a 0-based step bucket (buckets `0..k_max` are the
    /// per-step rows, bucket `k_max` and beyond the tail).
    pub fn slot_at_bucket(&self, state: usize, bucket: usize) -> usize {
        if bucket < self.per_step.len() {
            self.per_step[bucket][state]
        } else {
            self.tail[state]
        }
    }
}

/// Worst-case nature witnesses recorded alongside a strategy, one
/// distribution per (state, phase).
#[derive(Debug, Clone)]
pub struct NatureRecord {
    pub per_step: Vec<Vec<FeasibleDistribution>>,
    pub tail: Vec<FeasibleDistribution>,
}

impl NatureRecord {
    pub fn at_bucket(&self, state: usize, bucket: usize) -> &FeasibleDistribution {
        if bucket < self.per_step.len() {
            &self.per_step[bucket][state]
        } else {
            &self.tail[state]
        }
    }
}

#[derive(Debug, Clone)]
pub struct ViOutcome {
    pub strategy: CountingStrategy,
    pub natures: NatureRecord,
    /// Per-objective values at the initial state under the recorded strategy
    /// and natures (the point `g`).
    pub point: Vec<f64>,
    /// Robust weighted value at the initial state.
    pub weighted_value: f64,
}

/// Strategy maximising `E[w·r]` against adversarial natures, its recorded
/// worst-case natures, the per-objective value vector `g`, and the weighted
/// value itself.
pub fn weighted_robust_vi(
    basic: &BasicQuery,
    w: &[f64],
    cfg: &ViConfig,
) -> Result<ViOutcome, ViError> {
    run_weighted(basic, w, cfg, Direction::Max, Direction::Min)
}

/// Extremal single-objective value with explicit optimisation senses for the
/// strategy and the nature; `(Min, Min)` seeds quantitative queries with the
/// smallest value any strategy can be forced to.
pub fn single_objective_extremum(
    basic: &BasicQuery,
    objective: usize,
    strategy_dir: Direction,
    nature_dir: Direction,
    cfg: &ViConfig,
) -> Result<f64, ViError> {
    let mut w = vec![0.0; basic.n_objectives()];
    w[objective] = 1.0;
    Ok(run_weighted(basic, &w, cfg, strategy_dir, nature_dir)?.weighted_value)
}

fn check_rows(basic: &BasicQuery) -> Result<(), ViError> {
    let m = &basic.model;
    for s in 0..m.n_states() {
        for (slot, &a) in m.enabled(s).iter().enumerate() {
            if !m.row(s, slot).is_feasible() {
                return Err(ViError::InfeasibleModel {
                    state: m.state_name(s).to_owned(),
                    action: m.action_name(a).to_owned(),
                });
            }
        }
    }
    Ok(())
}

fn residual(old: &[f64], new: &[f64], relative: bool) -> f64 {
    old.iter()
        .zip(new)
        .map(|(x, y)| {
            let d = (y - x).abs();
            if relative {
                d / f64::max(1.0, y.abs())
            } else {
                d
            }
        })
        .fold(0.0, f64::max)
}

fn sweep_states<R: Send>(
    n: usize,
    sequential: bool,
    f: impl Fn(usize) -> R + Send + Sync,
) -> Vec<R> {
    #[cfg(feature = "parallel")]
    if !sequential {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = sequential;
    (0..n).map(f).collect()
}

fn better(dir: Direction, candidate: f64, incumbent: f64) -> bool {
    match dir {
        Direction::Max => candidate > incumbent,
        Direction::Min => candidate < incumbent,
    }
}

fn run_weighted(
    basic: &BasicQuery,
    w: &[f64],
    cfg: &ViConfig,
    strategy_dir: Direction,
    nature_dir: Direction,
) -> Result<ViOutcome, ViError> {
    assert_eq!(w.len(), basic.n_objectives(), "weight dimension mismatch");
    check_rows(basic)?;
    let m = &basic.model;
    let ns = m.n_states();
    let n = basic.n_objectives();

    // Weighted rewards over the infinite-horizon objectives only.
    let inf_reward: Vec<Vec<f64>> = (0..ns)
        .map(|s| {
            (0..m.enabled(s).len())
                .map(|slot| {
                    (0..n)
                        .filter(|&i| basic.bounds[i].is_infinite())
                        .map(|i| w[i] * basic.reward(i, s, slot))
                        .sum()
                })
                .collect()
        })
        .collect();

    // Phase 1: infinite-horizon weighted iteration.
    let mut x = vec![0.0; ns];
    let mut sigma_inf: Vec<usize>;
    let mut nature_inf: Vec<FeasibleDistribution>;
    let mut iters = 0usize;
    loop {
        let swept = sweep_states(ns, cfg.sequential, |s| {
            let mut best: Option<(f64, usize, FeasibleDistribution)> = None;
            for slot in 0..m.enabled(s).len() {
                let (inner, witness) = robust_extremum_lex(m.row(s, slot), &x, &[], nature_dir)
                    .expect("rows checked feasible");
                let q = inf_reward[s][slot] + inner;
                if best
                    .as_ref()
                    .is_none_or(|(b, _, _)| better(strategy_dir, q, *b))
                {
                    best = Some((q, slot, witness));
                }
            }
            best.expect("validated states have at least one action")
        });
        let y: Vec<f64> = swept.iter().map(|(q, _, _)| *q).collect();
        let delta = residual(&x, &y, cfg.relative);
        sigma_inf = swept.iter().map(|(_, slot, _)| *slot).collect();
        nature_inf = swept.into_iter().map(|(_, _, nat)| nat).collect();
        x = y;
        if delta <= cfg.epsilon {
            break;
        }
        iters += 1;
        if iters >= cfg.max_iters {
            return Err(ViError::NonConvergence {
                phase: 1,
                residual: delta,
            });
        }
    }

    // Phase 2: per-objective evaluation of the tail under the recorded
    // natures, for the unbounded objectives.
    let mut x_obj: Vec<Vec<f64>> = vec![vec![0.0; ns]; n];
    if basic.bounds.iter().any(|b| b.is_infinite()) {
        let inf_objs: Vec<usize> = (0..n)
            .filter(|&i| basic.bounds[i].is_infinite())
            .collect();
        let mut iters = 0usize;
        loop {
            let swept: Vec<Vec<f64>> = sweep_states(ns, cfg.sequential, |s| {
                let slot = sigma_inf[s];
                inf_objs
                    .iter()
                    .map(|&i| basic.reward(i, s, slot) + nature_inf[s].dot(&x_obj[i]))
                    .collect()
            });
            let mut delta = 0.0f64;
            for (pos, &i) in inf_objs.iter().enumerate() {
                for s in 0..ns {
                    let y = swept[s][pos];
                    let d = (y - x_obj[i][s]).abs();
                    let d = if cfg.relative {
                        d / f64::max(1.0, y.abs())
                    } else {
                        d
                    };
                    delta = delta.max(d);
                    x_obj[i][s] = y;
                }
            }
            if delta <= cfg.epsilon {
                break;
            }
            iters += 1;
            if iters >= cfg.max_iters {
                return Err(ViError::NonConvergence {
                    phase: 2,
                    residual: delta,
                });
            }
        }
    }

    // Phase 3: backward induction over the finite horizon. Nature ties are
    // resolved lexicographically against the per-objective values so the
    // recorded witnesses stay adversarial for the individual objectives.
    let k_max = basic.k_max().unwrap_or(0);
    let mut per_step_sigma: Vec<Vec<usize>> = vec![Vec::new(); k_max as usize];
    let mut per_step_nature: Vec<Vec<FeasibleDistribution>> = vec![Vec::new(); k_max as usize];
    for j in (1..=k_max).rev() {
        let step_reward: Vec<Vec<f64>> = (0..ns)
            .map(|s| {
                (0..m.enabled(s).len())
                    .map(|slot| {
                        (0..n)
                            .filter(|&i| basic.bounds[i].at_least(j))
                            .map(|i| w[i] * basic.reward(i, s, slot))
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let tie_keys: Vec<&[f64]> = x_obj.iter().map(|v| v.as_slice()).collect();
        let swept = sweep_states(ns, cfg.sequential, |s| {
            let mut best: Option<(f64, usize, FeasibleDistribution)> = None;
            for slot in 0..m.enabled(s).len() {
                let (inner, witness) =
                    robust_extremum_lex(m.row(s, slot), &x, &tie_keys, nature_dir)
                        .expect("rows checked feasible");
                let q = step_reward[s][slot] + inner;
                if best
                    .as_ref()
                    .is_none_or(|(b, _, _)| better(strategy_dir, q, *b))
                {
                    best = Some((q, slot, witness));
                }
            }
            let (q, slot, witness) = best.expect("validated states have at least one action");
            let objs: Vec<f64> = (0..n)
                .map(|i| {
                    if basic.bounds[i].at_least(j) {
                        basic.reward(i, s, slot) + witness.dot(&x_obj[i])
                    } else {
                        x_obj[i][s]
                    }
                })
                .collect();
            (q, slot, witness, objs)
        });
        let mut y = vec![0.0; ns];
        let mut sigmas = vec![0usize; ns];
        let mut natures = Vec::with_capacity(ns);
        for (s, (q, slot, witness, objs)) in swept.into_iter().enumerate() {
            y[s] = q;
            sigmas[s] = slot;
            natures.push(witness);
            for i in 0..n {
                x_obj[i][s] = objs[i];
            }
        }
        x = y;
        per_step_sigma[j as usize - 1] = sigmas;
        per_step_nature[j as usize - 1] = natures;
    }

    let init = m.initial();
    Ok(ViOutcome {
        strategy: CountingStrategy {
            per_step: per_step_sigma,
            tail: sigma_inf,
        },
        natures: NatureRecord {
            per_step: per_step_nature,
            tail: nature_inf,
        },
        point: (0..n).map(|i| x_obj[i][init]).collect(),
        weighted_value: x[init],
    })
}

/// Robust per-objective value vector of a fixed strategy: every objective is
/// evaluated under its own worst-case nature (the honest guarantee the
/// strategy gives, objective by objective).
pub fn evaluate_strategy(
    basic: &BasicQuery,
    strategy: &CountingStrategy,
    cfg: &ViConfig,
) -> Result<Vec<f64>, ViError> {
    check_rows(basic)?;
    let m = &basic.model;
    let ns = m.n_states();
    let n = basic.n_objectives();
    let horizon = basic.k_max().unwrap_or(0).max(strategy.k_max());

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = vec![0.0; ns];
        if basic.bounds[i].is_infinite() {
            let mut iters = 0usize;
            loop {
                let y = sweep_states(ns, cfg.sequential, |s| {
                    let slot = strategy.tail[s];
                    let (inner, _) =
                        robust_extremum_lex(m.row(s, slot), &x, &[], Direction::Min)
                            .expect("rows checked feasible");
                    basic.reward(i, s, slot) + inner
                });
                let delta = residual(&x, &y, cfg.relative);
                x = y;
                if delta <= cfg.epsilon {
                    break;
                }
                iters += 1;
                if iters >= cfg.max_iters {
                    return Err(ViError::NonConvergence {
                        phase: 2,
                        residual: delta,
                    });
                }
            }
        }
        for j in (1..=horizon).rev() {
            if !basic.bounds[i].at_least(j) {
                continue;
            }
            let y = sweep_states(ns, cfg.sequential, |s| {
                let slot = strategy.slot_at(s, j);
                let (inner, _) = robust_extremum_lex(m.row(s, slot), &x, &[], Direction::Min)
                    .expect("rows checked feasible");
                basic.reward(i, s, slot) + inner
            });
            x = y;
        }
        out.push(x[m.initial()]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::running_example;
    use crate::query::{running_example_query, to_basic_form, Bound};

    fn basic() -> BasicQuery {
        let m = running_example();
        let q = running_example_query(&m);
        to_basic_form(&m, &q).unwrap()
    }

    #[test]
    fn reward_weight_picks_action_a() {
        let b = basic();
        let cfg = ViConfig::default();
        let out = weighted_robust_vi(&b, &[0.0, 1.0], &cfg).unwrap();
        let s = b.model.state_id("s@").unwrap();
        let slot = out.strategy.slot_at(s, 1);
        assert_eq!(b.model.action_name(b.model.enabled(s)[slot]), "a");
        assert!((out.point[0] - 1.0 / 3.0).abs() < 1e-9, "{:?}", out.point);
        assert!((out.point[1] - 3.0).abs() < 1e-9);
        assert!((out.weighted_value - 3.0).abs() < 1e-9);
    }

    #[test]
    fn reach_weight_picks_action_b() {
        let b = basic();
        let cfg = ViConfig::default();
        let out = weighted_robust_vi(&b, &[1.0, 0.0], &cfg).unwrap();
        let s = b.model.state_id("s@").unwrap();
        let slot = out.strategy.slot_at(s, 1);
        assert_eq!(b.model.action_name(b.model.enabled(s)[slot]), "b");
        assert!((out.point[0] - 2.0 / 5.0).abs() < 1e-9, "{:?}", out.point);
        assert!((out.point[1] - 1.0).abs() < 1e-9);
        assert!((out.weighted_value - 2.0 / 5.0).abs() < 1e-9);
    }

    #[test]
    fn zero_rewards_give_zero_values() {
        let mut b = crate::model::Imdp::builder();
        b.initial("s");
        b.transition("s", "a", "t", 0.4, 0.8);
        b.transition("s", "a", "u", 0.2, 0.6);
        b.transition("t", "a", "t", 1.0, 1.0);
        b.transition("u", "a", "u", 1.0, 1.0);
        b.reward_structure("z");
        let m = b.build().unwrap();
        let q = crate::query::Query {
            mode: crate::query::QueryMode::Synth,
            objectives: vec![crate::query::Objective {
                kind: crate::query::ObjectiveKind::Reward {
                    structure: "z".into(),
                },
                op: crate::query::RelOp::Ge,
                threshold: 0.0,
                bound: Bound::Finite(3),
            }],
        };
        let basic = to_basic_form(&m, &q).unwrap();
        let out = weighted_robust_vi(&basic, &[1.0], &ViConfig::default()).unwrap();
        assert_eq!(out.point, vec![0.0]);
        assert_eq!(out.weighted_value, 0.0);
    }

    #[test]
    fn evaluate_fixed_strategies() {
        let b = basic();
        let cfg = ViConfig::default();
        // Strategy "always slot 0" corresponds to action a everywhere.
        let always_a = CountingStrategy {
            per_step: vec![vec![0; b.model.n_states()]; 2],
            tail: vec![0; b.model.n_states()],
        };
        let g = evaluate_strategy(&b, &always_a, &cfg).unwrap();
        assert!((g[0] - 1.0 / 3.0).abs() < 1e-9);
        assert!((g[1] - 3.0).abs() < 1e-9);

        // Strategy picking slot 1 (action b) at the branching state.
        let s = b.model.state_id("s@").unwrap();
        let mut tail = vec![0; b.model.n_states()];
        tail[s] = 1;
        let always_b = CountingStrategy {
            per_step: vec![tail.clone(); 2],
            tail,
        };
        let g = evaluate_strategy(&b, &always_b, &cfg).unwrap();
        assert!((g[0] - 2.0 / 5.0).abs() < 1e-9);
        assert!((g[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn weighted_value_is_consistent_with_point() {
        let b = basic();
        let cfg = ViConfig::default();
        for w in [[0.3, 0.7], [0.9, 0.1], [0.5, 0.5]] {
            let out = weighted_robust_vi(&b, &w, &cfg).unwrap();
            let dot: f64 = w.iter().zip(&out.point).map(|(a, g)| a * g).sum();
            assert!(
                (dot - out.weighted_value).abs() <= 2.0 * cfg.epsilon + 1e-9,
                "w={w:?} point={:?} value={}",
                out.point,
                out.weighted_value
            );
        }
    }

    #[test]
    fn scale_equivariance_of_choices() {
        let b = basic();
        let cfg = ViConfig::default();
        let a = weighted_robust_vi(&b, &[0.2, 0.8], &cfg).unwrap();
        let bb = weighted_robust_vi(&b, &[0.1, 0.4], &cfg).unwrap();
        assert_eq!(a.strategy, bb.strategy);
    }

    #[test]
    fn cooperative_minimum_for_seeding() {
        let b = basic();
        let cfg = ViConfig::default();
        // Smallest reward any strategy can be forced to within 1 step: pick b
        // (reward 1), nature irrelevant.
        let v = single_objective_extremum(&b, 1, Direction::Min, Direction::Min, &cfg).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
        // Smallest reach value: action a with nature pushing mass off t.
        let v = single_objective_extremum(&b, 0, Direction::Min, Direction::Min, &cfg).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-9);
    }
}
