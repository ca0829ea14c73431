//! Index-free finite-sum optimization.
//!
//! Algorithms here never see which individual function answered a query.
//! Sampled gradients (or whole functions) are grouped by exact bit equality
//! and re-weighted with quantized counts, which recovers the full gradient
//! (or the whole sum) exactly with high probability. On top of that sit
//! Q-SVRG, a Catalyst-accelerated variant, and the naive-estimator
//! baselines that fail to converge.
//!
//! The crate is `no_std` with `alloc`.
#![no_std]

extern crate alloc;

pub mod categorical;
pub mod global_solver;
pub mod grad_estimators;
pub mod oracles;
pub mod problems;
pub mod rng;
pub mod solvers;

pub use categorical::{required_samples, required_samples_batch, rnd, CategoryTable};
pub use global_solver::{minimize_reconstructed, recover_finite_sum, Reconstruction};
pub use grad_estimators::{naive_full_gradient, quantized_full_gradient, GradientEstimate};
pub use oracles::{OracleKind, OracleSession, StochasticGradientOracle};
pub use problems::{make_counterexample, make_random_quadratic_sum, FiniteSumProblem, QuadraticIndividual, RandomQuadraticSpec};
pub use solvers::{run_catalyst_qsvrg, run_qsvrg, RunRecord, SolverConfig};
