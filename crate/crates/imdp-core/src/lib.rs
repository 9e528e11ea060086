//! Multi-objective robust strategy synthesis for interval Markov decision
//! processes (IMDPs).
//!
//! An IMDP is a finite MDP whose transition probabilities are only known to
//! lie inside closed intervals; at every step an adversarial "nature" picks a
//! concrete feasible distribution. This crate decides whether a mixed vector
//! of reachability and expected-total-reward predicates is robustly
//! achievable, approximates two-objective Pareto curves, and turns the
//! synthesised deterministic strategies into executable randomised ones.
//!
//! The pipeline is:
//!
//! 1. [`model`] — the IMDP data model, validation and graph analyses,
//! 2. [`query`] — predicates and the reduction to a basic maximising form on
//!    a product model,
//! 3. [`vi`] — robust weighted value iteration over the basic form,
//! 4. [`synthesis`] — the synthesis / quantitative / Pareto query drivers,
//! 5. [`runtime`] — state-action frequencies, randomised strategies,
//!    Monte-Carlo simulation and small-instance brute-force oracles,
//! 6. [`io`] / [`gen`] — JSON formats and case-study model generators.
//!
//! With the default `parallel` feature the value-iteration state sweeps and
//! simulation batches run on rayon; disabling it yields a fully sequential
//! build with identical results.

pub mod gen;
pub mod geometry;
pub mod io;
pub mod lp;
pub mod model;
pub mod query;
pub mod robust;
pub mod runtime;
pub mod synthesis;
pub mod vi;

pub use model::{Imdp, IntervalRow, RewardStructure, Sec, Violation};
pub use query::{BasicQuery, Bound, Objective, ObjectiveKind, Query, QueryMode, RelOp};
pub use synthesis::{ParetoApprox, QuantResult, SynthesisOutcome, SynthesisResult};
pub use vi::{CountingStrategy, ViConfig};
