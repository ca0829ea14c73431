//! Full-gradient estimators over a stochastic first-order oracle.
//!
//! The quantized estimator groups sampled gradients by bit pattern and
//! weights each distinct gradient by its rounded count, which recovers
//! `∇F(w)` exactly with high probability. The naive estimator is the plain
//! empirical average.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DVector;
use thiserror::Error;

use crate::categorical::{required_samples, required_samples_batch, CategoricalError, CategoryTable, Payload};
use crate::oracles::{FirstOrderResponse, OracleError, StochasticGradientOracle};
use crate::problems::{weighted_mean, FiniteSumProblem};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Categorical(#[from] CategoricalError),
    #[error("an estimate needs at least one sample")]
    NoSamples,
    #[error("batch estimation needs at least one point")]
    NoPoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Quantized,
    NaiveEmpirical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub gradient: DVector<f64>,
    pub oracle_calls_spent: u64,
    pub method: EstimatorKind,
    /// Set only by [`GradientEstimate::probe`]; solvers never read it.
    pub exactness_probe: Option<bool>,
    /// Distinct gradients observed (quantized estimates only).
    pub categories_seen: usize,
}

impl GradientEstimate {
    /// Compares against the problem's category-ordered gradient at `w`
    /// bit for bit and records the outcome.
    pub fn probe(&mut self, problem: &FiniteSumProblem, w: &DVector<f64>) -> bool {
        let exact = self.gradient.key() == problem.category_gradient(w).key();
        self.exactness_probe = Some(exact);
        exact
    }
}

/// Quantized estimate of `∇F(w)` from `required_samples(n, delta)` calls.
pub fn quantized_full_gradient<O: StochasticGradientOracle + ?Sized>(
    oracle: &mut O,
    w: &DVector<f64>,
    delta: f64,
) -> Result<GradientEstimate, EstimatorError> {
    let m = required_samples(oracle.n(), delta)?;
    quantized_full_gradient_with_samples(oracle, w, m)
}

/// Quantized estimate from exactly `samples` calls. Every slot of a
/// batched query is pointed at `w`; the first is used.
pub fn quantized_full_gradient_with_samples<O: StochasticGradientOracle + ?Sized>(
    oracle: &mut O,
    w: &DVector<f64>,
    samples: u64,
) -> Result<GradientEstimate, EstimatorError> {
    let points = vec![w.clone(); oracle.batch_size()];
    let mut response = FirstOrderResponse::default();
    quantized_from_points(oracle, &points, samples, &mut response)
}

/// Shared worker: the caller keeps `points` (all equal to the estimation
/// point in slot 0) and the response buffer alive across recoveries.
pub(crate) fn quantized_from_points<O: StochasticGradientOracle + ?Sized>(
    oracle: &mut O,
    points: &[DVector<f64>],
    samples: u64,
    response: &mut FirstOrderResponse,
) -> Result<GradientEstimate, EstimatorError> {
    if samples == 0 {
        return Err(EstimatorError::NoSamples);
    }
    let start = oracle.calls();
    let mut table = CategoryTable::<DVector<f64>>::new(oracle.n());
    for _ in 0..samples {
        oracle.sample_into(points, response)?;
        let g = &response.gradients[0];
        table.ingest_keyed(g.key(), || g.clone());
    }
    let dim = oracle.dim();
    let gradient = table.quantized_mean(|terms, n| weighted_mean(terms.iter().map(|(k, g)| (*k, *g)), n, dim));
    Ok(GradientEstimate {
        gradient,
        oracle_calls_spent: oracle.calls() - start,
        method: EstimatorKind::Quantized,
        exactness_probe: None,
        categories_seen: table.len(),
    })
}

/// Quantized estimates at `k` points with per-point sample size
/// `⌈2n² ln(2nk/δ)⌉`, so all `k` are exact simultaneously w.p. `1 − δ`.
pub fn quantized_full_gradients_batch<O: StochasticGradientOracle + ?Sized>(
    oracle: &mut O,
    points: &[DVector<f64>],
    delta: f64,
) -> Result<Vec<GradientEstimate>, EstimatorError> {
    if points.is_empty() {
        return Err(EstimatorError::NoPoints);
    }
    let m = required_samples_batch(oracle.n(), points.len(), delta)?;
    points.iter().map(|w| quantized_full_gradient_with_samples(oracle, w, m)).collect()
}

/// Empirical mean of `m_samples` sampled gradients at `w`.
pub fn naive_full_gradient<O: StochasticGradientOracle + ?Sized>(
    oracle: &mut O,
    w: &DVector<f64>,
    m_samples: u64,
) -> Result<GradientEstimate, EstimatorError> {
    if m_samples == 0 {
        return Err(EstimatorError::NoSamples);
    }
    let points = vec![w.clone(); oracle.batch_size()];
    let mut response = FirstOrderResponse::default();
    let start = oracle.calls();
    let mut acc = DVector::zeros(oracle.dim());
    for _ in 0..m_samples {
        oracle.sample_into(&points, &mut response)?;
        acc += &response.gradients[0];
    }
    Ok(GradientEstimate {
        gradient: acc / m_samples as f64,
        oracle_calls_spent: oracle.calls() - start,
        method: EstimatorKind::NaiveEmpirical,
        exactness_probe: None,
        categories_seen: 0,
    })
}
