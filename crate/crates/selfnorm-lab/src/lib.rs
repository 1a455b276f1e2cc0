//! Monte Carlo laboratory for tail asymptotics of self-normalized statistics.
//!
//! The crate simulates martingale-type data (i.i.d. increments, a bounded
//! martingale difference sequence, and supercritical branching processes in
//! an i.i.d. random environment), evaluates self-normalized statistics on the
//! simulated paths, and compares empirical tail probabilities against the
//! standard normal tail. The point of comparison is the Cramer-type relative
//! error regime: for moderate x the ratio P(W >= x) / (1 - Phi(x)) stays
//! close to 1, with a deviation bounded by an explicit envelope built from
//! moment and variance-concentration scales.
//!
//! Modules:
//!
//! * [`gauss`]: standard normal tail, log tail, and quantile to near machine
//!   precision on |x| <= 40, validated against a 30-digit oracle fixture.
//! * [`stats_core`]: the statistics themselves (self-normalized sum, Student
//!   t, block self-normalization) plus the deviation envelopes.
//! * [`models`]: data generators with deterministic per-replication RNG
//!   streams and exact moment oracles.
//! * [`bpre_infer`]: offspring-mean inference for branching processes in
//!   random environment (Lotka-Nagaev estimator, confidence intervals,
//!   Bernstein-condition checks).
//! * [`mc_lab`]: the replication engine and the empirical diagnostics (tail
//!   curves, log-ratio curves, MDP rates, Kolmogorov distance, coverage).
//! * [`config`] and [`report`]: run configuration parsing, CSV/SVG/run-log
//!   emission for the `selfnorm-lab` binary.
//!
//! Every stochastic routine takes an explicit seed and derives one counter
//! RNG stream per replication, so results are bit-identical for any worker
//! count.

pub mod bpre_infer;
pub mod config;
pub mod error;
pub mod gauss;
pub mod mc_lab;
pub mod models;
pub mod report;
pub mod stats_core;

pub use error::{LabError, Result};
