//! Minimization with a stochastic global oracle: recover the multiset of
//! individual functions from sampled handles, then minimize the
//! reconstructed sum directly.

use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::categorical::{required_samples, CategoricalError, CategoryTable, Payload};
use crate::oracles::{FunctionHandle, OracleError, OracleSession};
use crate::problems::{FiniteSumProblem, QuadraticIndividual};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GlobalError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Categorical(#[from] CategoricalError),
    #[error("recovery needs at least one sample")]
    NoSamples,
    #[error("reconstructed Hessian is singular")]
    Singular,
    #[error("reconstructed sum is unbounded below (Hessian eigenvalue {0})")]
    Unbounded(f64),
}

/// The recovered sum `(1/n) Σ n̂_i f'_i` in canonical parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    n: usize,
    terms: Vec<(u64, Arc<QuadraticIndividual>)>,
    calls: u64,
}

const SINGULAR_RTOL: f64 = 1e-12;

impl Reconstruction {
    pub fn n(&self) -> usize {
        self.n
    }

    /// `(n̂_i, f'_i)` pairs with nonzero `n̂_i`.
    pub fn terms(&self) -> &[(u64, Arc<QuadraticIndividual>)] {
        &self.terms
    }

    pub fn oracle_calls(&self) -> u64 {
        self.calls
    }

    pub fn value(&self, w: &DVector<f64>) -> f64 {
        self.terms.iter().map(|(k, f)| *k as f64 * f.value(w)).sum::<f64>() / self.n as f64
    }

    /// Whether the recovered multiset is exactly the problem's multiset of
    /// parameter records.
    pub fn matches(&self, problem: &FiniteSumProblem) -> bool {
        let mut truth: Vec<(Vec<u64>, u64)> = Vec::new();
        let mut records: Vec<Vec<u64>> = problem.individuals().iter().map(|f| f.parameter_record()).collect();
        records.sort();
        for r in records {
            match truth.last_mut() {
                Some((last, count)) if *last == r => *count += 1,
                _ => truth.push((r, 1)),
            }
        }
        let mine: Vec<(Vec<u64>, u64)> = self.terms.iter().map(|(k, f)| (f.parameter_record(), *k)).collect();
        mine == truth
    }
}

/// Draws `required_samples(n, delta)` handles and keeps each distinct
/// parameter record with its rounded count. Never inspects convexity.
pub fn recover_finite_sum(session: &mut OracleSession<'_>, delta: f64) -> Result<Reconstruction, GlobalError> {
    let m = required_samples(session.num_functions(), delta)?;
    recover_finite_sum_with_samples(session, m)
}

/// As [`recover_finite_sum`] with an explicit sample count.
pub fn recover_finite_sum_with_samples(session: &mut OracleSession<'_>, samples: u64) -> Result<Reconstruction, GlobalError> {
    if samples == 0 {
        return Err(GlobalError::NoSamples);
    }
    let n = session.num_functions();
    let start = session.call_count();
    let mut table = CategoryTable::<FunctionHandle>::new(n);
    for _ in 0..samples {
        let handle = session.query_stochastic_global()?;
        table.ingest_keyed(handle.key(), || handle);
    }
    let terms = table
        .quantized_terms()
        .into_iter()
        .filter(|(k, _)| *k > 0)
        .map(|(k, h)| (k, h.clone().into_shared()))
        .collect();
    Ok(Reconstruction { n, terms, calls: session.call_count() - start })
}

/// Exact minimizer of the reconstructed quadratic sum by a dense solve of
/// `(Σ n̂_i A_i) w = Σ n̂_i b_i`. Returns `(w*, F*)`.
pub fn minimize_reconstructed(reconstruction: &Reconstruction) -> Result<(DVector<f64>, f64), GlobalError> {
    let dim = reconstruction.terms.first().map_or(0, |(_, f)| f.dim());
    let mut h = DMatrix::zeros(dim, dim);
    let mut g = DVector::zeros(dim);
    for (k, f) in &reconstruction.terms {
        h += f.hessian() * *k as f64;
        g += f.linear() * *k as f64;
    }
    if dim == 0 {
        return Err(GlobalError::Singular);
    }
    let eig = h.clone().symmetric_eigenvalues();
    let scale = eig.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let tol = SINGULAR_RTOL * scale.max(f64::MIN_POSITIVE);
    if eig.min() < -tol {
        return Err(GlobalError::Unbounded(eig.min() / reconstruction.n as f64));
    }
    if eig.min() <= tol {
        return Err(GlobalError::Singular);
    }
    let w = h.cholesky().ok_or(GlobalError::Singular)?.solve(&g);
    let value = reconstruction.value(&w);
    Ok((w, value))
}
