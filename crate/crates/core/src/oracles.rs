//! The four oracle models over a finite sum, with per-session call accounting.
//!
//! Incremental oracles let the caller pick the individual; stochastic ones
//! sample `i ~ Unif([n])` and never reveal it. One query counts as one call
//! whatever the batch size `B`. Indices are zero-based.

use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::DVector;
use rand::Rng;
use thiserror::Error;

use crate::categorical::Payload;
use crate::problems::{FiniteSumProblem, QuadraticIndividual};
use crate::rng::{stream_rng, SessionRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    IncrementalFirstOrder,
    IncrementalGlobal,
    StochasticFirstOrder,
    StochasticGlobal,
}

impl OracleKind {
    fn is_first_order(self) -> bool {
        matches!(self, OracleKind::IncrementalFirstOrder | OracleKind::StochasticFirstOrder)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("query requires a {expected:?} session, this one is {found:?}")]
    WrongKind { expected: OracleKind, found: OracleKind },
    #[error("index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("expected {expected} query points, got {found}")]
    BatchLength { expected: usize, found: usize },
    #[error("query point has dimension {found}, expected {expected}")]
    PointDimension { expected: usize, found: usize },
    #[error("first-order sessions need a batch size of at least 1")]
    EmptyBatch,
}

/// `(f_i(w_j), ∇f_i(w_j))` for each queried point, all from one individual.
/// Carries no index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FirstOrderResponse {
    pub values: Vec<f64>,
    pub gradients: Vec<DVector<f64>>,
}

impl FirstOrderResponse {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn fill_from(&mut self, f: &QuadraticIndividual, points: &[DVector<f64>]) {
        self.values.resize(points.len(), 0.0);
        self.gradients.resize_with(points.len(), || DVector::zeros(f.dim()));
        for ((value, grad), w) in self.values.iter_mut().zip(self.gradients.iter_mut()).zip(points) {
            *value = f.value_and_gradient_into(w, grad);
        }
    }
}

/// A complete individual function returned by a global oracle.
#[derive(Debug, Clone)]
pub struct FunctionHandle {
    inner: Arc<QuadraticIndividual>,
}

impl FunctionHandle {
    pub fn value(&self, w: &DVector<f64>) -> f64 {
        self.inner.value(w)
    }

    pub fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        self.inner.gradient(w)
    }

    pub fn parameters(&self) -> &QuadraticIndividual {
        &self.inner
    }

    pub fn into_shared(self) -> Arc<QuadraticIndividual> {
        self.inner
    }
}

impl Payload for FunctionHandle {
    type Key = Vec<u64>;

    fn key(&self) -> Vec<u64> {
        self.inner.parameter_record()
    }
}

/// Stochastic first-order access as seen by solvers.
pub trait StochasticGradientOracle {
    /// Number of individuals; known to the algorithm.
    fn n(&self) -> usize;

    fn dim(&self) -> usize;

    fn batch_size(&self) -> usize;

    /// Queries issued so far.
    fn calls(&self) -> u64;

    /// One query at `batch_size()` points, overwriting `out`.
    fn sample_into(&mut self, points: &[DVector<f64>], out: &mut FirstOrderResponse) -> Result<(), OracleError>;
}

/// A seeded, call-counted channel to a problem. Single owner; may be moved
/// across threads.
#[derive(Debug, Clone)]
pub struct OracleSession<'p> {
    problem: &'p FiniteSumProblem,
    kind: OracleKind,
    batch: usize,
    rng: SessionRng,
    calls: u64,
}

impl<'p> OracleSession<'p> {
    /// `batch` is ignored for global kinds.
    pub fn new(problem: &'p FiniteSumProblem, kind: OracleKind, batch: usize, rng: SessionRng) -> Result<Self, OracleError> {
        if kind.is_first_order() && batch == 0 {
            return Err(OracleError::EmptyBatch);
        }
        let batch = if kind.is_first_order() { batch } else { 0 };
        Ok(Self { problem, kind, batch, rng, calls: 0 })
    }

    pub fn seeded(problem: &'p FiniteSumProblem, kind: OracleKind, batch: usize, seed: u64) -> Result<Self, OracleError> {
        Self::new(problem, kind, batch, stream_rng(seed, 0))
    }

    pub fn stochastic_first_order(problem: &'p FiniteSumProblem, batch: usize, seed: u64) -> Result<Self, OracleError> {
        Self::seeded(problem, OracleKind::StochasticFirstOrder, batch, seed)
    }

    pub fn stochastic_global(problem: &'p FiniteSumProblem, seed: u64) -> Self {
        Self::seeded(problem, OracleKind::StochasticGlobal, 0, seed).expect("global sessions have no batch")
    }

    pub fn kind(&self) -> OracleKind {
        self.kind
    }

    pub fn call_count(&self) -> u64 {
        self.calls
    }

    pub fn num_functions(&self) -> usize {
        self.problem.n()
    }

    fn require(&self, expected: OracleKind) -> Result<(), OracleError> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(OracleError::WrongKind { expected, found: self.kind })
        }
    }

    fn check_index(&self, index: usize) -> Result<(), OracleError> {
        if index < self.problem.n() {
            Ok(())
        } else {
            Err(OracleError::IndexOutOfRange { index, n: self.problem.n() })
        }
    }

    fn check_points(&self, points: &[DVector<f64>]) -> Result<(), OracleError> {
        if points.len() != self.batch {
            return Err(OracleError::BatchLength { expected: self.batch, found: points.len() });
        }
        let dim = self.problem.dim();
        match points.iter().find(|w| w.len() != dim) {
            Some(w) => Err(OracleError::PointDimension { expected: dim, found: w.len() }),
            None => Ok(()),
        }
    }

    fn draw_index(&mut self) -> usize {
        self.rng.random_range(0..self.problem.n())
    }

    pub fn query_incremental_first_order(
        &mut self,
        points: &[DVector<f64>],
        index: usize,
    ) -> Result<FirstOrderResponse, OracleError> {
        self.require(OracleKind::IncrementalFirstOrder)?;
        self.check_index(index)?;
        self.check_points(points)?;
        self.calls += 1;
        let mut out = FirstOrderResponse::default();
        out.fill_from(self.problem.individual(index), points);
        Ok(out)
    }

    pub fn query_incremental_global(&mut self, index: usize) -> Result<FunctionHandle, OracleError> {
        self.require(OracleKind::IncrementalGlobal)?;
        self.check_index(index)?;
        self.calls += 1;
        Ok(FunctionHandle { inner: self.problem.individual(index).clone() })
    }

    pub fn query_stochastic_first_order(&mut self, points: &[DVector<f64>]) -> Result<FirstOrderResponse, OracleError> {
        let mut out = FirstOrderResponse::default();
        self.query_stochastic_first_order_into(points, &mut out)?;
        Ok(out)
    }

    /// Allocation-reusing form of [`query_stochastic_first_order`](Self::query_stochastic_first_order).
    pub fn query_stochastic_first_order_into(
        &mut self,
        points: &[DVector<f64>],
        out: &mut FirstOrderResponse,
    ) -> Result<(), OracleError> {
        self.require(OracleKind::StochasticFirstOrder)?;
        self.check_points(points)?;
        self.calls += 1;
        let i = self.draw_index();
        out.fill_from(self.problem.individual(i), points);
        Ok(())
    }

    pub fn query_stochastic_global(&mut self) -> Result<FunctionHandle, OracleError> {
        self.require(OracleKind::StochasticGlobal)?;
        self.calls += 1;
        let i = self.draw_index();
        Ok(FunctionHandle { inner: self.problem.individual(i).clone() })
    }
}

impl StochasticGradientOracle for OracleSession<'_> {
    fn n(&self) -> usize {
        self.problem.n()
    }

    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn batch_size(&self) -> usize {
        self.batch
    }

    fn calls(&self) -> u64 {
        self.calls
    }

    fn sample_into(&mut self, points: &[DVector<f64>], out: &mut FirstOrderResponse) -> Result<(), OracleError> {
        self.query_stochastic_first_order_into(points, out)
    }
}
