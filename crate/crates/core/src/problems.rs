//! Finite-sum problem instances `F(w) = (1/n) Σ f_i(w)` built from quadratic
//! individuals, with certified constants and (when it exists) a stored optimum.

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::categorical::Payload;

/// Relative eigenvalue threshold below which the mean Hessian is treated as singular.
const SINGULAR_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("counterexample needs an even n >= 2, got {0}")]
    OddOrEmpty(usize),
    #[error("invalid constants: mu = {mu}, L = {l}")]
    InvalidConstants { mu: f64, l: f64 },
    #[error("q_distinct = {q} must lie in 1..={n}")]
    InvalidDistinctCount { q: usize, n: usize },
    #[error("a finite sum needs at least one individual of positive dimension")]
    Empty,
    #[error("individual {index} has dimension {found}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, found: usize },
    #[error("problem has no known optimum")]
    MissingOptimum,
    #[error("initial gap is unknown")]
    MissingInitialGap,
}

/// `f(w) = ½ wᵀAw − bᵀw + c` with symmetric `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticIndividual {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
}

impl QuadraticIndividual {
    /// Builds an individual, symmetrizing `a`.
    ///
    /// Panics if the shapes of `a` and `b` disagree.
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: f64) -> Self {
        assert!(a.is_square() && a.nrows() == b.len(), "shape mismatch");
        let a = if a == a.transpose() { a } else { (&a + a.transpose()) * 0.5 };
        Self { a, b, c }
    }

    /// One-dimensional `½ a w² − b w + c`.
    pub fn scalar(a: f64, b: f64, c: f64) -> Self {
        Self::new(DMatrix::from_element(1, 1, a), DVector::from_element(1, b), c)
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn offset(&self) -> f64 {
        self.c
    }

    pub fn value(&self, w: &DVector<f64>) -> f64 {
        let aw = &self.a * w;
        0.5 * w.dot(&aw) - self.b.dot(w) + self.c
    }

    pub fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        self.value_and_gradient_into(w, &mut g);
        g
    }

    /// Writes `∇f(w)` into `grad` and returns `f(w)`; allocation free.
    pub fn value_and_gradient_into(&self, w: &DVector<f64>, grad: &mut DVector<f64>) -> f64 {
        if grad.len() != self.dim() {
            *grad = DVector::zeros(self.dim());
        }
        grad.gemv(1.0, &self.a, w, 0.0);
        let value = 0.5 * w.dot(grad) - self.b.dot(w) + self.c;
        *grad -= &self.b;
        value
    }

    /// `f(w) + (β/2)‖w − center‖²`, again a quadratic.
    pub fn proximal(&self, beta: f64, center: &DVector<f64>) -> Self {
        let d = self.dim();
        let a = &self.a + DMatrix::<f64>::identity(d, d) * beta;
        let b = &self.b + center * beta;
        let c = self.c + 0.5 * beta * center.norm_squared();
        Self { a, b, c }
    }

    /// Canonical parameter record: the IEEE-754 bits of `A` (row-major), `b`, then `c`.
    pub fn parameter_record(&self) -> Vec<u64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * d + d + 1);
        for i in 0..d {
            for j in 0..d {
                out.push(self.a[(i, j)].to_bits());
            }
        }
        out.extend(self.b.iter().map(|x| x.to_bits()));
        out.push(self.c.to_bits());
        out
    }

    /// Extreme eigenvalues `(λ_min, λ_max)` of `A`.
    pub fn eigen_range(&self) -> (f64, f64) {
        let eig = self.a.clone().symmetric_eigenvalues();
        (eig.min(), eig.max())
    }
}

/// Known minimizer and optimal value.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub point: DVector<f64>,
    pub value: f64,
}

/// An immutable finite sum of quadratic individuals.
///
/// Duplicated individuals share one allocation, so their gradients are
/// bit-identical at every query point.
#[derive(Debug, Clone)]
pub struct FiniteSumProblem {
    individuals: Vec<Arc<QuadraticIndividual>>,
    dim: usize,
    smoothness: f64,
    strong_convexity: f64,
    mean_hessian: DMatrix<f64>,
    mean_linear: DVector<f64>,
    mean_offset: f64,
    optimum: Option<Optimum>,
    initial_point: DVector<f64>,
    initial_gap: Option<f64>,
}

impl FiniteSumProblem {
    /// Builds a problem with explicitly certified constants `L` and `mu`.
    /// The optimum is computed when the mean Hessian is positive definite.
    pub fn new(
        individuals: Vec<Arc<QuadraticIndividual>>,
        smoothness: f64,
        strong_convexity: f64,
        initial_point: DVector<f64>,
    ) -> Result<Self, ProblemError> {
        let dim = initial_point.len();
        if individuals.is_empty() || dim == 0 {
            return Err(ProblemError::Empty);
        }
        for (index, f) in individuals.iter().enumerate() {
            if f.dim() != dim {
                return Err(ProblemError::DimensionMismatch { index, expected: dim, found: f.dim() });
            }
        }
        if !(smoothness.is_finite() && strong_convexity.is_finite()) || strong_convexity > smoothness {
            return Err(ProblemError::InvalidConstants { mu: strong_convexity, l: smoothness });
        }
        let n = individuals.len() as f64;
        let mut mean_hessian = DMatrix::zeros(dim, dim);
        let mut mean_linear = DVector::zeros(dim);
        let mut mean_offset = 0.0;
        for f in &individuals {
            mean_hessian += &f.a;
            mean_linear += &f.b;
            mean_offset += f.c;
        }
        mean_hessian /= n;
        mean_linear /= n;
        mean_offset /= n;

        let mut problem = Self {
            individuals,
            dim,
            smoothness,
            strong_convexity,
            mean_hessian,
            mean_linear,
            mean_offset,
            optimum: None,
            initial_point,
            initial_gap: None,
        };
        problem.optimum = problem.solve_optimum();
        problem.initial_gap = problem.optimum.as_ref().map(|opt| {
            let gap = problem.value(&problem.initial_point) - opt.value;
            gap.max(0.0)
        });
        Ok(problem)
    }

    /// Builds a problem taking the constants from the individuals' spectra:
    /// `L = max |λ|`, `mu = min λ` (negative for nonconvex individuals).
    pub fn from_quadratics(
        individuals: Vec<QuadraticIndividual>,
        initial_point: DVector<f64>,
    ) -> Result<Self, ProblemError> {
        let mut l: f64 = 0.0;
        let mut mu = f64::INFINITY;
        for f in &individuals {
            let (lo, hi) = f.eigen_range();
            l = l.max(hi.abs()).max(lo.abs());
            mu = mu.min(lo);
        }
        let shared = individuals.into_iter().map(Arc::new).collect();
        Self::new(shared, l, mu.min(l), initial_point)
    }

    fn solve_optimum(&self) -> Option<Optimum> {
        let eig = self.mean_hessian.clone().symmetric_eigenvalues();
        let scale = eig.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if eig.min() <= SINGULAR_RTOL * scale.max(f64::MIN_POSITIVE) {
            return None;
        }
        let chol = self.mean_hessian.clone().cholesky()?;
        let point = chol.solve(&self.mean_linear);
        let value = self.value(&point);
        Some(Optimum { point, value })
    }

    /// Overrides the initial point, recomputing `Δ` when the optimum is known.
    pub fn with_initial_point(mut self, w0: DVector<f64>) -> Self {
        assert_eq!(w0.len(), self.dim, "initial point dimension");
        self.initial_point = w0;
        self.initial_gap = self
            .optimum
            .as_ref()
            .map(|opt| (self.value(&self.initial_point) - opt.value).max(0.0));
        self
    }

    /// Supplies `Δ` for problems without a known optimum.
    pub fn with_initial_gap(mut self, gap: f64) -> Self {
        self.initial_gap = Some(gap);
        self
    }

    pub fn n(&self) -> usize {
        self.individuals.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn strong_convexity(&self) -> f64 {
        self.strong_convexity
    }

    pub fn optimum(&self) -> Option<&Optimum> {
        self.optimum.as_ref()
    }

    pub fn initial_point(&self) -> &DVector<f64> {
        &self.initial_point
    }

    pub fn initial_gap(&self) -> Option<f64> {
        self.initial_gap
    }

    pub fn individuals(&self) -> &[Arc<QuadraticIndividual>] {
        &self.individuals
    }

    pub fn individual(&self, i: usize) -> &Arc<QuadraticIndividual> {
        &self.individuals[i]
    }

    pub fn mean_hessian(&self) -> &DMatrix<f64> {
        &self.mean_hessian
    }

    pub fn value(&self, w: &DVector<f64>) -> f64 {
        let aw = &self.mean_hessian * w;
        0.5 * w.dot(&aw) - self.mean_linear.dot(w) + self.mean_offset
    }

    /// Exact `∇F(w)`, summed over individuals in index order.
    pub fn full_gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut acc = DVector::zeros(self.dim);
        let mut g = DVector::zeros(self.dim);
        for f in &self.individuals {
            f.value_and_gradient_into(w, &mut g);
            acc += &g;
        }
        acc / self.n() as f64
    }

    /// Distinct individual gradients at `w` with their multiplicities, keyed
    /// by bit pattern.
    pub fn gradient_categories(&self, w: &DVector<f64>) -> BTreeMap<Vec<u64>, (u64, DVector<f64>)> {
        let mut out: BTreeMap<Vec<u64>, (u64, DVector<f64>)> = BTreeMap::new();
        for f in &self.individuals {
            let g = f.gradient(w);
            out.entry(g.key()).or_insert((0, g)).0 += 1;
        }
        out
    }

    /// `∇F(w)` written as `(1/n) Σ n_i g'_i` over distinct gradients, summed
    /// in canonical key order. This is bit-identical to a quantized estimate
    /// that recovered every count exactly.
    pub fn category_gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let cats = self.gradient_categories(w);
        weighted_mean(cats.values().map(|(k, g)| (*k, g)), self.n(), self.dim)
    }

    /// `F(w) − F*`, clamped at zero.
    pub fn suboptimality(&self, w: &DVector<f64>) -> Result<f64, ProblemError> {
        let opt = self.optimum.as_ref().ok_or(ProblemError::MissingOptimum)?;
        let e = w - &opt.point;
        let gap = 0.5 * e.dot(&(&self.mean_hessian * &e));
        Ok(gap.max(0.0))
    }

    /// `G(w) = F(w) + (β/2)‖w − center‖²` as a finite sum of wrapped
    /// individuals with constants `L + β` and `mu + β`.
    pub fn proximal(&self, beta: f64, center: &DVector<f64>) -> Self {
        let mut wrapped: BTreeMap<*const QuadraticIndividual, Arc<QuadraticIndividual>> = BTreeMap::new();
        let individuals = self
            .individuals
            .iter()
            .map(|f| {
                wrapped
                    .entry(Arc::as_ptr(f))
                    .or_insert_with(|| Arc::new(f.proximal(beta, center)))
                    .clone()
            })
            .collect();
        Self::new(
            individuals,
            self.smoothness + beta,
            self.strong_convexity + beta,
            self.initial_point.clone(),
        )
        .expect("wrapping preserves validity")
    }
}

/// `(1/n) Σ count_i · payload_i`, accumulated in iteration order.
pub fn weighted_mean<'a>(
    terms: impl Iterator<Item = (u64, &'a DVector<f64>)>,
    n: usize,
    dim: usize,
) -> DVector<f64> {
    let mut acc = DVector::zeros(dim);
    for (count, g) in terms {
        acc.axpy(count as f64, g, 1.0);
    }
    acc / n as f64
}

/// The 1-D finite sum with `n/2` copies each of `½(w−1)²` and `½(w+1)²`,
/// so `F(w) = ½(w² + 1)`, `L = mu = 1`, `w* = 0`, `F* = ½`. Starts at `w0 = 1`.
pub fn make_counterexample(n_even: usize) -> Result<FiniteSumProblem, ProblemError> {
    if n_even < 2 || !n_even.is_multiple_of(2) {
        return Err(ProblemError::OddOrEmpty(n_even));
    }
    let left = Arc::new(QuadraticIndividual::scalar(1.0, 1.0, 0.5));
    let right = Arc::new(QuadraticIndividual::scalar(1.0, -1.0, 0.5));
    let mut individuals = Vec::with_capacity(n_even);
    for _ in 0..n_even / 2 {
        individuals.push(left.clone());
    }
    for _ in 0..n_even / 2 {
        individuals.push(right.clone());
    }
    FiniteSumProblem::new(individuals, 1.0, 1.0, DVector::from_element(1, 1.0))
}

/// Parameters of [`make_random_quadratic_sum`].
#[derive(Debug, Clone, PartialEq)]
pub struct RandomQuadraticSpec {
    pub n: usize,
    pub dim: usize,
    pub smoothness: f64,
    pub strong_convexity: f64,
    pub q_distinct: usize,
    pub seed: u64,
}

/// Random quadratics `A_i = Q_i D_i Q_iᵀ` with `D_i` uniform in `[mu, L]`, its
/// first and last entries pinned to `mu` and `L` (for `dim = 1` the single
/// entry is `L`). Exactly `q_distinct` individuals are distinct; the others
/// are shared copies. The initial point is the origin.
pub fn make_random_quadratic_sum(spec: &RandomQuadraticSpec) -> Result<FiniteSumProblem, ProblemError> {
    let RandomQuadraticSpec { n, dim, smoothness: l, strong_convexity: mu, q_distinct: q, seed } = *spec;
    if !(mu >= 0.0 && mu <= l && l > 0.0 && l.is_finite()) {
        return Err(ProblemError::InvalidConstants { mu, l });
    }
    if n == 0 || dim == 0 {
        return Err(ProblemError::Empty);
    }
    if q == 0 || q > n {
        return Err(ProblemError::InvalidDistinctCount { q, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let distinct: Vec<Arc<QuadraticIndividual>> =
        (0..q).map(|_| Arc::new(random_quadratic(&mut rng, dim, l, mu))).collect();

    let mut slots: Vec<usize> = (0..q).collect();
    slots.extend((q..n).map(|_| rng.random_range(0..q)));
    // Fisher-Yates so that duplicates are not clustered by index.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        slots.swap(i, j);
    }
    let individuals = slots.into_iter().map(|s| distinct[s].clone()).collect();
    FiniteSumProblem::new(individuals, l, mu, DVector::zeros(dim))
}

fn random_quadratic(rng: &mut ChaCha8Rng, dim: usize, l: f64, mu: f64) -> QuadraticIndividual {
    let gauss = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
    let q = gauss.qr().q();
    let mut spectrum = DVector::<f64>::from_fn(dim, |_, _| mu + (l - mu) * rng.random::<f64>());
    spectrum[0] = mu;
    spectrum[dim - 1] = l;
    let a = &q * DMatrix::from_diagonal(&spectrum) * q.transpose();
    let b = DVector::<f64>::from_fn(dim, |_, _| rng.sample(StandardNormal));
    let c: f64 = rng.sample(StandardNormal);
    QuadraticIndividual::new(a, b, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn counterexample_values() {
        let p = make_counterexample(4).unwrap();
        assert_eq!(p.value(&v(&[0.0])), 0.5);
        assert_eq!(p.value(&v(&[1.0])), 1.0);
        let p6 = make_counterexample(6).unwrap();
        assert_eq!(p6.full_gradient(&v(&[2.0]))[0], 2.0);
        let opt = p.optimum().unwrap();
        assert_eq!(opt.point[0], 0.0);
        assert_eq!(opt.value, 0.5);
        assert_eq!(p.initial_gap(), Some(0.5));
        assert_eq!(p.gradient_categories(&v(&[0.3])).len(), 2);
    }

    #[test]
    fn counterexample_rejects_odd() {
        assert_eq!(make_counterexample(3).unwrap_err(), ProblemError::OddOrEmpty(3));
        assert!(make_counterexample(0).is_err());
    }

    #[test]
    fn two_shifted_squares() {
        let fs = vec![QuadraticIndividual::scalar(2.0, 2.0, 1.0), QuadraticIndividual::scalar(2.0, -2.0, 1.0)];
        let p = FiniteSumProblem::from_quadratics(fs, v(&[3.0])).unwrap();
        // (w-1)² and (w+1)² average to w² + 1.
        assert_eq!(p.value(&v(&[0.0])), 1.0);
        assert_eq!(p.optimum().unwrap().point[0], 0.0);
        assert_eq!(p.smoothness(), 2.0);
    }

    #[test]
    fn suboptimality_examples() {
        let p = make_counterexample(2).unwrap();
        assert_eq!(p.suboptimality(&v(&[0.0])).unwrap(), 0.0);
        assert_eq!(p.suboptimality(&v(&[1.0])).unwrap(), 0.5);
    }

    #[test]
    fn missing_optimum_is_reported() {
        let spec = RandomQuadraticSpec { n: 3, dim: 3, smoothness: 1.0, strong_convexity: 0.0, q_distinct: 1, seed: 1 };
        let p = make_random_quadratic_sum(&spec).unwrap();
        assert!(p.optimum().is_none());
        assert_eq!(p.suboptimality(&p.initial_point().clone()), Err(ProblemError::MissingOptimum));
        assert_eq!(p.initial_gap(), None);
        assert_eq!(p.with_initial_gap(2.0).initial_gap(), Some(2.0));
    }

    #[test]
    fn rejects_bad_constants() {
        let spec = RandomQuadraticSpec { n: 3, dim: 2, smoothness: 1.0, strong_convexity: 2.0, q_distinct: 1, seed: 1 };
        assert!(matches!(make_random_quadratic_sum(&spec), Err(ProblemError::InvalidConstants { .. })));
        let spec = RandomQuadraticSpec { q_distinct: 4, strong_convexity: 0.5, ..spec };
        assert!(matches!(make_random_quadratic_sum(&spec), Err(ProblemError::InvalidDistinctCount { .. })));
    }

    #[test]
    fn exactly_q_distinct_gradients() {
        let spec = RandomQuadraticSpec { n: 6, dim: 3, smoothness: 2.0, strong_convexity: 0.5, q_distinct: 2, seed: 7 };
        let p = make_random_quadratic_sum(&spec).unwrap();
        let w = v(&[0.1, -0.4, 2.0]);
        let grads: Vec<_> = p.individuals().iter().map(|f| f.gradient(&w).key()).collect();
        let mut distinct = grads.clone();
        distinct.sort();
        distinct.dedup();
        assert_eq!(distinct.len(), 2);
    }

    #[test]
    fn optimum_solves_normal_equations() {
        let spec = RandomQuadraticSpec { n: 10, dim: 5, smoothness: 1.0, strong_convexity: 0.1, q_distinct: 10, seed: 3 };
        let p = make_random_quadratic_sum(&spec).unwrap();
        let opt = p.optimum().unwrap();
        assert!(p.full_gradient(&opt.point).norm() <= 1e-8);
        assert!(p.suboptimality(&opt.point).unwrap() <= 1e-10);
        let gap = p.value(p.initial_point()) - opt.value;
        assert!(gap <= p.initial_gap().unwrap() + 1e-12);
    }

    #[test]
    fn spectrum_is_pinned() {
        let spec = RandomQuadraticSpec { n: 4, dim: 6, smoothness: 8.0, strong_convexity: 1.0, q_distinct: 4, seed: 11 };
        let p = make_random_quadratic_sum(&spec).unwrap();
        for f in p.individuals() {
            let (lo, hi) = f.eigen_range();
            assert!((lo - 1.0).abs() < 1e-10 && (hi - 8.0).abs() < 1e-10, "{lo} {hi}");
        }
    }

    #[test]
    fn category_gradient_matches_full_gradient() {
        let spec = RandomQuadraticSpec { n: 9, dim: 4, smoothness: 3.0, strong_convexity: 0.2, q_distinct: 3, seed: 5 };
        let p = make_random_quadratic_sum(&spec).unwrap();
        let w = v(&[1.0, 2.0, -1.0, 0.5]);
        let diff = (p.category_gradient(&w) - p.full_gradient(&w)).norm();
        assert!(diff < 1e-12);
    }

    #[test]
    fn proximal_wrapping_shifts_constants_and_keeps_sharing() {
        let spec = RandomQuadraticSpec { n: 5, dim: 3, smoothness: 4.0, strong_convexity: 0.0, q_distinct: 2, seed: 9 };
        let p = make_random_quadratic_sum(&spec).unwrap();
        let u = v(&[1.0, 0.0, -1.0]);
        let g = p.proximal(0.5, &u);
        assert_eq!(g.smoothness(), 4.5);
        assert_eq!(g.strong_convexity(), 0.5);
        let w = v(&[0.3, 0.3, 0.3]);
        assert_eq!(g.gradient_categories(&w).len(), 2);
        let expected = p.value(&w) + 0.25 * (&w - &u).norm_squared();
        assert!((g.value(&w) - expected).abs() < 1e-12);
        assert!(g.optimum().is_some());
    }

    #[test]
    fn parameter_record_is_bitwise() {
        let f = QuadraticIndividual::scalar(1.0, -0.0, 0.5);
        let g = QuadraticIndividual::scalar(1.0, 0.0, 0.5);
        assert_ne!(f.parameter_record(), g.parameter_record());
        assert_eq!(f.parameter_record(), f.clone().parameter_record());
    }
}
