//! Optimization loops over a stochastic first-order oracle: Q-SVRG, its
//! Catalyst acceleration, quantized GD, and the naive-estimator SGD/SVRG
//! baselines.
//!
//! Solvers reach the individual functions only through the oracle. The
//! problem handle is used for bookkeeping alone: suboptimality along the
//! trajectory and the `succeeded` probe, which compares each recovered
//! gradient against the true one and never feeds back into the iteration.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DVector;
use thiserror::Error;

use crate::categorical::{required_samples_batch, CategoricalError, Payload};
use crate::grad_estimators::{naive_full_gradient, quantized_from_points, EstimatorError, GradientEstimate};
use crate::oracles::{FirstOrderResponse, OracleError, OracleSession, StochasticGradientOracle};
use crate::problems::{weighted_mean, FiniteSumProblem, ProblemError};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Categorical(#[from] CategoricalError),
    #[error("this method needs mu > 0, got {0}")]
    NotStronglyConvex(f64),
    #[error("individuals must be convex (mu >= 0), got mu = {0}")]
    Nonconvex(f64),
    #[error("Q-SVRG needs a batch size of 2, session has {0}")]
    BatchSize(usize),
    #[error("target accuracy must be positive, got {0}")]
    InvalidTarget(f64),
    #[error("step size {0} is out of range")]
    InvalidStep(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

/// Hyperparameters shared by the solvers. Not every field is read by every
/// method.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Step size `η`.
    pub eta: f64,
    /// Inner-loop length of one SVRG round.
    pub inner_t: usize,
    /// Outer rounds `K` (one gradient recovery each).
    pub outer_k: usize,
    /// Total failure budget for all gradient recoveries of a run.
    pub delta: f64,
    pub catalyst_beta: f64,
    /// Catalyst stages.
    pub catalyst_iters: usize,
    /// Cap on Q-SVRG rounds per Catalyst stage.
    pub subproblem_budget: usize,
    /// Recorded in the run; sessions are seeded by the caller.
    pub seed: u64,
    /// Log every inner iterate, not just round boundaries.
    pub record_inner: bool,
}

impl SolverConfig {
    fn validate(&self) -> Result<(), SolverError> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(SolverError::InvalidStep(self.eta));
        }
        if self.inner_t == 0 {
            return Err(SolverError::InvalidConfig("inner_t must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(SolverError::Categorical(CategoricalError::InvalidDelta(self.delta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub oracle_calls: u64,
    pub suboptimality: f64,
    pub outer_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    /// Starts at the initial point; calls strictly increase afterwards.
    pub trajectory: Vec<TrajectoryPoint>,
    pub final_point: DVector<f64>,
    /// Every gradient recovery in the run was exact.
    pub succeeded: bool,
    pub seed: u64,
    pub recoveries: usize,
}

impl RunRecord {
    pub fn total_calls(&self) -> u64 {
        self.trajectory.last().map_or(0, |p| p.oracle_calls)
    }

    pub fn final_suboptimality(&self) -> f64 {
        self.trajectory.last().map_or(f64::NAN, |p| p.suboptimality)
    }

    /// Calls spent when the trajectory first reached suboptimality `<= eps`.
    pub fn calls_to(&self, eps: f64) -> Option<u64> {
        self.trajectory.iter().find(|p| p.suboptimality <= eps).map(|p| p.oracle_calls)
    }

    /// Calls spent when the trajectory entered `<= eps` for good.
    pub fn settled_calls(&self, eps: f64) -> Option<u64> {
        let after = self.trajectory.iter().rposition(|p| p.suboptimality > eps).map_or(0, |i| i + 1);
        self.trajectory.get(after).map(|p| p.oracle_calls)
    }
}

struct Recorder<'a> {
    problem: &'a FiniteSumProblem,
    record: RunRecord,
}

impl<'a> Recorder<'a> {
    fn start(problem: &'a FiniteSumProblem, calls: u64, seed: u64) -> Result<Self, SolverError> {
        let w0 = problem.initial_point().clone();
        let first = TrajectoryPoint { oracle_calls: calls, suboptimality: problem.suboptimality(&w0)?, outer_index: 0 };
        Ok(Self {
            problem,
            record: RunRecord { trajectory: vec![first], final_point: w0, succeeded: true, seed, recoveries: 0 },
        })
    }

    fn push(&mut self, calls: u64, w: &DVector<f64>, outer_index: usize) {
        let suboptimality = self.problem.suboptimality(w).expect("checked at start");
        self.record.trajectory.push(TrajectoryPoint { oracle_calls: calls, suboptimality, outer_index });
        self.record.final_point.clone_from(w);
    }

    fn probe(&mut self, estimate: &mut GradientEstimate, reference: &DVector<f64>) {
        self.record.recoveries += 1;
        let exact = estimate.probe(self.problem, reference);
        self.record.succeeded &= exact;
    }

    fn finish(self) -> RunRecord {
        self.record
    }
}

/// `α = 1/(μη(1−2Lη)T) + 2Lη/(1−2Lη)`, the expected per-round contraction of
/// SVRG with exact reference gradients.
pub fn convergence_factor(l: f64, mu: f64, eta: f64, inner_t: usize) -> f64 {
    let damp = 1.0 - 2.0 * l * eta;
    1.0 / (mu * eta * damp * inner_t as f64) + 2.0 * l * eta / damp
}

/// `η = 1/(8L)`, `T = ⌈32L/μ⌉` (so `α ≤ 2/3`) and
/// `K = ⌈ln(2Δ/(δε)) / ln(3/2)⌉`; `K = 0` when `ε > Δ`.
pub fn default_qsvrg_config(problem: &FiniteSumProblem, delta: f64, eps_target: f64) -> Result<SolverConfig, SolverError> {
    let (l, mu) = (problem.smoothness(), problem.strong_convexity());
    if mu <= 0.0 {
        return Err(SolverError::NotStronglyConvex(mu));
    }
    if !(eps_target > 0.0) {
        return Err(SolverError::InvalidTarget(eps_target));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(SolverError::Categorical(CategoricalError::InvalidDelta(delta)));
    }
    let gap = problem.initial_gap().ok_or(ProblemError::MissingInitialGap)?;
    let outer_k = if eps_target > gap {
        0
    } else {
        let k = libm::log(2.0 * gap / (delta * eps_target)) / libm::log(1.5);
        (libm::ceil(k) as usize).max(1)
    };
    Ok(SolverConfig {
        eta: 1.0 / (8.0 * l),
        inner_t: libm::ceil(32.0 * l / mu) as usize,
        outer_k,
        delta,
        catalyst_beta: 0.0,
        catalyst_iters: 0,
        subproblem_budget: 0,
        seed: 0,
        record_inner: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Flow {
    Continue,
    Stop,
}

trait RoundHooks {
    /// Sees the recovered gradient at the current reference point before the
    /// inner loop runs; may end the run there.
    fn after_recovery(&mut self, reference: &DVector<f64>, estimate: &mut GradientEstimate, round: usize) -> Flow;

    fn inner_step(&mut self, _w: &DVector<f64>, _calls: u64, _round: usize) {}

    fn round_end(&mut self, reference: &DVector<f64>, calls: u64, round: usize);
}

struct RoundPlan {
    eta: f64,
    inner_t: usize,
    max_rounds: usize,
    samples: u64,
    record_inner: bool,
}

/// Algorithm body: per round, recover `μ̃` at the reference, run `T` inner
/// steps `w ← w − η(∇f_i(w) − ∇f_i(w̃) + μ̃)` from one oracle call each, and
/// move the reference to the average of the inner iterates.
fn qsvrg_rounds<O: StochasticGradientOracle + ?Sized>(
    oracle: &mut O,
    start: DVector<f64>,
    plan: &RoundPlan,
    hooks: &mut impl RoundHooks,
) -> Result<DVector<f64>, SolverError> {
    let mut reference = start;
    let mut points = [reference.clone(), reference.clone()];
    let mut response = FirstOrderResponse::default();
    let mut direction = DVector::zeros(reference.len());
    let mut sum = DVector::zeros(reference.len());
    for round in 1..=plan.max_rounds {
        points[0].copy_from(&reference);
        points[1].copy_from(&reference);
        let mut estimate = quantized_from_points(oracle, &points, plan.samples, &mut response)?;
        if hooks.after_recovery(&reference, &mut estimate, round) == Flow::Stop {
            break;
        }
        let mu_tilde = estimate.gradient;
        sum.fill(0.0);
        for t in 1..=plan.inner_t {
            oracle.sample_into(&points, &mut response)?;
            direction.copy_from(&response.gradients[0]);
            direction -= &response.gradients[1];
            direction += &mu_tilde;
            points[0].axpy(-plan.eta, &direction, 1.0);
            sum += &points[0];
            if plan.record_inner && t < plan.inner_t {
                hooks.inner_step(&points[0], oracle.calls(), round);
            }
        }
        reference = &sum / plan.inner_t as f64;
        hooks.round_end(&reference, oracle.calls(), round);
    }
    Ok(reference)
}

struct PlainHooks<'a> {
    recorder: Recorder<'a>,
}

impl RoundHooks for PlainHooks<'_> {
    fn after_recovery(&mut self, reference: &DVector<f64>, estimate: &mut GradientEstimate, _round: usize) -> Flow {
        self.recorder.probe(estimate, reference);
        Flow::Continue
    }

    fn inner_step(&mut self, w: &DVector<f64>, calls: u64, round: usize) {
        self.recorder.push(calls, w, round);
    }

    fn round_end(&mut self, reference: &DVector<f64>, calls: u64, round: usize) {
        self.recorder.push(calls, reference, round);
    }
}

/// Q-SVRG on `F` for `config.outer_k` rounds, each recovery drawing
/// `⌈2n² ln(2nK/δ)⌉` samples. Requires a batch size of 2.
pub fn run_qsvrg<O: StochasticGradientOracle + ?Sized>(
    problem: &FiniteSumProblem,
    oracle: &mut O,
    config: &SolverConfig,
) -> Result<RunRecord, SolverError> {
    config.validate()?;
    if oracle.batch_size() != 2 {
        return Err(SolverError::BatchSize(oracle.batch_size()));
    }
    let mut hooks = PlainHooks { recorder: Recorder::start(problem, oracle.calls(), config.seed)? };
    if config.outer_k == 0 {
        return Ok(hooks.recorder.finish());
    }
    let plan = RoundPlan {
        eta: config.eta,
        inner_t: config.inner_t,
        max_rounds: config.outer_k,
        samples: required_samples_batch(oracle.n(), config.outer_k, config.delta)?,
        record_inner: config.record_inner,
    };
    qsvrg_rounds(oracle, problem.initial_point().clone(), &plan, &mut hooks)?;
    Ok(hooks.recorder.finish())
}

/// `β = max{0, (L − (n²+1)μ)/n²}` for `μ > 0`, `β = L/n²` for `μ = 0`.
pub fn catalyst_beta(n: usize, l: f64, mu: f64) -> f64 {
    let n2 = (n * n) as f64;
    if mu > 0.0 {
        ((l - (n2 + 1.0) * mu) / n2).max(0.0)
    } else {
        l / n2
    }
}

/// Next `α` from `α_k² = (1 − α_k)α_{k−1}² + qα_k`.
pub fn next_momentum_alpha(prev: f64, q: f64) -> f64 {
    let a2 = prev * prev;
    let b = a2 - q;
    0.5 * (-b + libm::sqrt(b * b + 4.0 * a2))
}

/// Stochastic first-order access to `G(w) = F(w) + (β/2)‖w − u‖²`. Every
/// query is one call on the wrapped oracle.
pub struct ProximalOracle<'a, O: ?Sized> {
    inner: &'a mut O,
    beta: f64,
    center: DVector<f64>,
    scratch: DVector<f64>,
}

impl<'a, O: StochasticGradientOracle + ?Sized> ProximalOracle<'a, O> {
    pub fn new(inner: &'a mut O, beta: f64, center: DVector<f64>) -> Self {
        let scratch = DVector::zeros(center.len());
        Self { inner, beta, center, scratch }
    }
}

fn wrap_gradient(grad: &mut DVector<f64>, beta: f64, w: &DVector<f64>, center: &DVector<f64>, scratch: &mut DVector<f64>) -> f64 {
    scratch.copy_from(w);
    *scratch -= center;
    grad.axpy(beta, scratch, 1.0);
    0.5 * beta * scratch.norm_squared()
}

impl<O: StochasticGradientOracle + ?Sized> StochasticGradientOracle for ProximalOracle<'_, O> {
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn batch_size(&self) -> usize {
        self.inner.batch_size()
    }

    fn calls(&self) -> u64 {
        self.inner.calls()
    }

    fn sample_into(&mut self, points: &[DVector<f64>], out: &mut FirstOrderResponse) -> Result<(), OracleError> {
        self.inner.sample_into(points, out)?;
        for ((value, grad), w) in out.values.iter_mut().zip(out.gradients.iter_mut()).zip(points) {
            *value += wrap_gradient(grad, self.beta, w, &self.center, &mut self.scratch);
        }
        Ok(())
    }
}

/// The category-ordered gradient of `G` at `w`, computed with the same
/// arithmetic as [`ProximalOracle`]; the probe reference for Catalyst stages.
fn proximal_category_gradient(problem: &FiniteSumProblem, beta: f64, center: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    let mut scratch = DVector::zeros(w.len());
    let mut wrapped: BTreeMap<Vec<u64>, (u64, DVector<f64>)> = BTreeMap::new();
    for (count, mut g) in problem.gradient_categories(w).into_values() {
        wrap_gradient(&mut g, beta, w, center, &mut scratch);
        wrapped.entry(g.key()).or_insert((0, g)).0 += count;
    }
    weighted_mean(wrapped.values().map(|(k, g)| (*k, g)), problem.n(), problem.dim())
}

/// Stage schedule for Catalyst: `β`, the number of stages, the per-stage
/// round cap, and the Q-SVRG step/inner length for `G_k` (constants
/// `L + β`, `μ + β`).
///
/// For `μ > 0` the stage count follows the linear rate with `ρ = 0.9√q`,
/// `q = μ/(μ+β)`; for `μ = 0` it follows the `O(1/k²)` rate and needs
/// `R = ‖w_0 − w*‖`, taken from the problem's known optimum.
pub fn default_catalyst_config(problem: &FiniteSumProblem, delta: f64, eps_target: f64) -> Result<SolverConfig, SolverError> {
    let (n, l, mu) = (problem.n(), problem.smoothness(), problem.strong_convexity());
    if mu < 0.0 {
        return Err(SolverError::Nonconvex(mu));
    }
    if !(eps_target > 0.0) {
        return Err(SolverError::InvalidTarget(eps_target));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(SolverError::Categorical(CategoricalError::InvalidDelta(delta)));
    }
    let gap = problem.initial_gap().ok_or(ProblemError::MissingInitialGap)?;
    let beta = catalyst_beta(n, l, mu);
    if beta == 0.0 {
        let mut config = default_qsvrg_config(problem, delta, eps_target)?;
        config.catalyst_iters = 0;
        return Ok(config);
    }
    let iters = if eps_target > gap {
        0
    } else if mu > 0.0 {
        let sq = libm::sqrt(mu / (mu + beta));
        let rho = 0.9 * sq;
        let c = 8.0 / ((sq - rho) * (sq - rho));
        libm::ceil(libm::log(c * gap / eps_target) / -libm::log(1.0 - rho)) as usize
    } else {
        let opt = problem.optimum().ok_or(ProblemError::MissingOptimum)?;
        let r2 = (problem.initial_point() - &opt.point).norm_squared();
        let bound = 8.0 * (MU0_WARM_FACTOR * gap + 0.5 * beta * r2) / eps_target;
        libm::ceil(libm::sqrt(bound)) as usize
    };
    Ok(SolverConfig {
        eta: 1.0 / (8.0 * (l + beta)),
        inner_t: libm::ceil(32.0 * (l + beta) / (mu + beta)) as usize,
        outer_k: 0,
        delta,
        catalyst_beta: beta,
        catalyst_iters: iters.max(1),
        subproblem_budget: DEFAULT_SUBPROBLEM_CAP,
        seed: 0,
        record_inner: false,
    })
}

/// `(1 + 2/η)²` with `η = 0.1` in the `μ = 0` accuracy schedule.
const MU0_WARM_FACTOR: f64 = 441.0;
const MU0_SCHEDULE_EXPONENT: f64 = 4.1;
const DEFAULT_SUBPROBLEM_CAP: usize = 20;

/// Catalyst-accelerated Q-SVRG with the default schedule. When `β = 0` this
/// is exactly [`run_qsvrg`] with [`default_qsvrg_config`].
pub fn run_catalyst_qsvrg<O: StochasticGradientOracle + ?Sized>(
    problem: &FiniteSumProblem,
    oracle: &mut O,
    eps_target: f64,
    delta: f64,
) -> Result<RunRecord, SolverError> {
    let config = default_catalyst_config(problem, delta, eps_target)?;
    run_catalyst_with_config(problem, oracle, &config, eps_target)
}

struct StageHooks<'r, 'a> {
    recorder: &'r mut Recorder<'a>,
    beta: f64,
    center: DVector<f64>,
    mu: f64,
    stage: usize,
    eps_stage: f64,
    eps_target: f64,
    round_cap: usize,
    rounds_allowed: usize,
    solved: bool,
    last_calls: u64,
}

impl RoundHooks for StageHooks<'_, '_> {
    fn after_recovery(&mut self, reference: &DVector<f64>, estimate: &mut GradientEstimate, round: usize) -> Flow {
        self.recorder.record.recoveries += 1;
        let truth = proximal_category_gradient(self.recorder.problem, self.beta, &self.center, reference);
        let exact = estimate.gradient.key() == truth.key();
        estimate.exactness_probe = Some(exact);
        self.recorder.record.succeeded &= exact;

        // Everything below uses only the recovered gradient of G_k.
        let grad = &estimate.gradient;
        let gap_bound = grad.norm_squared() / (2.0 * (self.mu + self.beta));
        if self.mu > 0.0 {
            let grad_f = grad - (reference - &self.center) * self.beta;
            if grad_f.norm_squared() / (2.0 * self.mu) <= self.eps_target {
                self.solved = true;
                return Flow::Stop;
            }
        }
        if round == 1 {
            let rounds = libm::ceil(libm::log(gap_bound / self.eps_stage) / libm::log(1.5));
            self.rounds_allowed = (rounds.max(1.0) as usize).min(self.round_cap);
        }
        if gap_bound <= self.eps_stage || round > self.rounds_allowed {
            Flow::Stop
        } else {
            Flow::Continue
        }
    }

    fn inner_step(&mut self, w: &DVector<f64>, calls: u64, _round: usize) {
        self.recorder.push(calls, w, self.stage);
        self.last_calls = calls;
    }

    fn round_end(&mut self, reference: &DVector<f64>, calls: u64, _round: usize) {
        self.recorder.push(calls, reference, self.stage);
        self.last_calls = calls;
    }
}

/// Catalyst outer loop: stage `k` approximately minimizes
/// `G_k(w) = F(w) + (β/2)‖w − u_{k−1}‖²` with Q-SVRG warm-started at `x_{k−1}`,
/// then extrapolates `u_k = x_k + γ_k(x_k − x_{k−1})`.
///
/// A stage ends once the recovered `‖∇G_k‖²/(2(μ+β))` certifies accuracy
/// `ε_k`, or after the round budget implied by the 2/3 rate. For `μ > 0`
/// the run also ends as soon as a recovered gradient certifies
/// `F − F* ≤ eps_target`.
pub fn run_catalyst_with_config<O: StochasticGradientOracle + ?Sized>(
    problem: &FiniteSumProblem,
    oracle: &mut O,
    config: &SolverConfig,
    eps_target: f64,
) -> Result<RunRecord, SolverError> {
    config.validate()?;
    let beta = config.catalyst_beta;
    if beta == 0.0 {
        return run_qsvrg(problem, oracle, config);
    }
    if !(beta > 0.0) {
        return Err(SolverError::InvalidConfig("catalyst_beta must be nonnegative"));
    }
    if oracle.batch_size() != 2 {
        return Err(SolverError::BatchSize(oracle.batch_size()));
    }
    let mu = problem.strong_convexity();
    if mu < 0.0 {
        return Err(SolverError::Nonconvex(mu));
    }
    let gap = problem.initial_gap().ok_or(ProblemError::MissingInitialGap)?;
    let mut recorder = Recorder::start(problem, oracle.calls(), config.seed)?;
    if config.catalyst_iters == 0 {
        return Ok(recorder.finish());
    }
    let round_cap = config.subproblem_budget.max(1);
    let max_recoveries = config.catalyst_iters * (round_cap + 1);
    let samples = required_samples_batch(oracle.n(), max_recoveries, config.delta)?;

    let q = mu / (mu + beta);
    let rho = 0.9 * libm::sqrt(q);
    let mut alpha = if mu > 0.0 { libm::sqrt(q) } else { 1.0 };
    let mut x_prev = problem.initial_point().clone();
    let mut center = x_prev.clone();

    for stage in 1..=config.catalyst_iters {
        let eps_stage = if mu > 0.0 {
            2.0 / 9.0 * gap * libm::pow(1.0 - rho, stage as f64)
        } else {
            2.0 * gap / (9.0 * libm::pow(stage as f64 + 2.0, MU0_SCHEDULE_EXPONENT))
        };
        let mut hooks = StageHooks {
            recorder: &mut recorder,
            beta,
            center: center.clone(),
            mu,
            stage,
            eps_stage,
            eps_target,
            round_cap,
            rounds_allowed: round_cap,
            solved: false,
            last_calls: 0,
        };
        let plan = RoundPlan {
            eta: config.eta,
            inner_t: config.inner_t,
            max_rounds: round_cap + 1,
            samples,
            record_inner: config.record_inner,
        };
        let mut prox = ProximalOracle::new(&mut *oracle, beta, center.clone());
        let x = qsvrg_rounds(&mut prox, x_prev.clone(), &plan, &mut hooks)?;
        let solved = hooks.solved;
        let calls = oracle.calls();
        if recorder.record.trajectory.last().map(|p| p.oracle_calls) != Some(calls) {
            // The stage ended on a recovery after its last round.
            recorder.push(calls, &x, stage);
        }
        if solved {
            break;
        }
        let next_alpha = next_momentum_alpha(alpha, q);
        let gamma = alpha * (1.0 - alpha) / (alpha * alpha + next_alpha);
        center = &x + (&x - &x_prev) * gamma;
        alpha = next_alpha;
        x_prev = x;
    }
    Ok(recorder.finish())
}

/// Gradient descent whose every gradient is a quantized estimate; each of the
/// `iters` recoveries draws `⌈2n² ln(2n·iters/δ)⌉` samples. Any batch size.
pub fn run_gd_quantized<O: StochasticGradientOracle + ?Sized>(
    problem: &FiniteSumProblem,
    oracle: &mut O,
    eta: f64,
    iters: usize,
    delta: f64,
) -> Result<RunRecord, SolverError> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(SolverError::InvalidStep(eta));
    }
    let mut recorder = Recorder::start(problem, oracle.calls(), 0)?;
    if iters == 0 {
        return Ok(recorder.finish());
    }
    let samples = required_samples_batch(oracle.n(), iters, delta)?;
    let mut w = problem.initial_point().clone();
    let mut points = vec![w.clone(); oracle.batch_size()];
    let mut response = FirstOrderResponse::default();
    for k in 1..=iters {
        points.iter_mut().for_each(|p| p.copy_from(&w));
        let mut estimate = quantized_from_points(oracle, &points, samples, &mut response)?;
        recorder.probe(&mut estimate, &w);
        w.axpy(-eta, &estimate.gradient, 1.0);
        recorder.push(oracle.calls(), &w, k);
    }
    Ok(recorder.finish())
}

/// GD with the naive empirical gradient: `x ← x − α·(1/m)Σ g_j(x)`, from a
/// fresh `B = 1` session seeded with `seed`.
pub fn run_naive_sgd(
    problem: &FiniteSumProblem,
    alpha: f64,
    m_samples: u64,
    iters: usize,
    seed: u64,
) -> Result<RunRecord, SolverError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(SolverError::InvalidStep(alpha));
    }
    let mut session = OracleSession::stochastic_first_order(problem, 1, seed)?;
    let mut recorder = Recorder::start(problem, 0, seed)?;
    let mut x = problem.initial_point().clone();
    for k in 1..=iters {
        let estimate = naive_full_gradient(&mut session, &x, m_samples)?;
        x.axpy(-alpha, &estimate.gradient, 1.0);
        recorder.push(session.call_count(), &x, k);
    }
    Ok(recorder.finish())
}

/// `η̃ = (η/M) Σ_{t=0}^{M−1} (M − t)(1 − η)^t`, the step of the GD iteration
/// that one naive SVRG round performs on the counterexample.
pub fn effective_step(eta: f64, inner_m: usize) -> f64 {
    let mut sum = 0.0;
    let mut power = 1.0;
    for t in 0..inner_m {
        sum += (inner_m - t) as f64 * power;
        power *= 1.0 - eta;
    }
    eta / inner_m as f64 * sum
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveSvrgRun {
    pub record: RunRecord,
    /// Reference points `x̃_0, x̃_1, …` after each outer round.
    pub references: Vec<DVector<f64>>,
    pub effective_step: f64,
}

/// SVRG whose reference gradient is the naive empirical mean of `m_samples`
/// draws. Reference gradients come from stream 0 of `seed` (the stream
/// [`run_naive_sgd`] uses, so the two runs see the same draws); inner steps
/// use stream 1 with `B = 2`.
pub fn run_naive_svrg(
    problem: &FiniteSumProblem,
    eta: f64,
    inner_m: usize,
    m_samples: u64,
    outer_k: usize,
    seed: u64,
) -> Result<NaiveSvrgRun, SolverError> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(SolverError::InvalidStep(eta));
    }
    if inner_m == 0 {
        return Err(SolverError::InvalidConfig("inner_m must be at least 1"));
    }
    let mut estimation = OracleSession::stochastic_first_order(problem, 1, seed)?;
    let mut inner = OracleSession::new(problem, crate::oracles::OracleKind::StochasticFirstOrder, 2, stream_rng(seed, 1))?;
    let mut recorder = Recorder::start(problem, 0, seed)?;
    let mut reference = problem.initial_point().clone();
    let mut references = vec![reference.clone()];
    let mut points = [reference.clone(), reference.clone()];
    let mut response = FirstOrderResponse::default();
    let mut direction = DVector::zeros(problem.dim());
    let mut sum = DVector::zeros(problem.dim());
    for k in 1..=outer_k {
        let mu_tilde = naive_full_gradient(&mut estimation, &reference, m_samples)?.gradient;
        points[0].copy_from(&reference);
        points[1].copy_from(&reference);
        sum.fill(0.0);
        for _ in 0..inner_m {
            inner.sample_into(&points, &mut response)?;
            direction.copy_from(&response.gradients[0]);
            direction -= &response.gradients[1];
            direction += &mu_tilde;
            points[0].axpy(-eta, &direction, 1.0);
            sum += &points[0];
        }
        reference = &sum / inner_m as f64;
        references.push(reference.clone());
        recorder.push(estimation.call_count() + inner.call_count(), &reference, k);
    }
    Ok(NaiveSvrgRun { record: recorder.finish(), references, effective_step: effective_step(eta, inner_m) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_counterexample, make_random_quadratic_sum, RandomQuadraticSpec};

    fn spec(n: usize, dim: usize, l: f64, mu: f64, seed: u64) -> RandomQuadraticSpec {
        RandomQuadraticSpec { n, dim, smoothness: l, strong_convexity: mu, q_distinct: n, seed }
    }

    #[test]
    fn default_config_values() {
        let p = make_counterexample(4).unwrap();
        let c = default_qsvrg_config(&p, 0.1, 1e-3).unwrap();
        assert_eq!(c.eta, 0.125);
        assert_eq!(c.inner_t, 32);
        assert!((convergence_factor(1.0, 1.0, c.eta, c.inner_t) - 2.0 / 3.0).abs() < 1e-15);
        let q = make_random_quadratic_sum(&spec(4, 3, 8.0, 1.0, 1)).unwrap();
        let c = default_qsvrg_config(&q, 0.1, 1e-3).unwrap();
        assert_eq!(c.eta, 1.0 / 64.0);
        assert_eq!(c.inner_t, 256);
        assert!(convergence_factor(8.0, 1.0, c.eta, c.inner_t) <= 2.0 / 3.0 + 1e-15);
    }

    #[test]
    fn default_config_outer_rounds() {
        let p = make_counterexample(2).unwrap();
        // Δ = 1/2, δ = 0.1, ε = 1e-3: ln(1e4)/ln 1.5 = 22.7.
        assert_eq!(default_qsvrg_config(&p, 0.1, 1e-3).unwrap().outer_k, 23);
        assert_eq!(default_qsvrg_config(&p, 0.1, 0.6).unwrap().outer_k, 0);
    }

    #[test]
    fn default_config_rejects_mu_zero() {
        let p = make_random_quadratic_sum(&spec(4, 3, 1.0, 0.0, 2)).unwrap();
        assert_eq!(default_qsvrg_config(&p, 0.1, 1e-3), Err(SolverError::NotStronglyConvex(0.0)));
        assert!(default_qsvrg_config(&make_counterexample(2).unwrap(), 0.1, 0.0).is_err());
    }

    #[test]
    fn qsvrg_requires_batch_two() {
        let p = make_counterexample(4).unwrap();
        let mut s = OracleSession::stochastic_first_order(&p, 1, 0).unwrap();
        let c = default_qsvrg_config(&p, 0.1, 1e-3).unwrap();
        assert_eq!(run_qsvrg(&p, &mut s, &c), Err(SolverError::BatchSize(1)));
    }

    #[test]
    fn qsvrg_zero_rounds_returns_immediately() {
        let p = make_counterexample(4).unwrap();
        let mut s = OracleSession::stochastic_first_order(&p, 2, 0).unwrap();
        let c = default_qsvrg_config(&p, 0.1, 10.0).unwrap();
        let r = run_qsvrg(&p, &mut s, &c).unwrap();
        assert_eq!(r.trajectory.len(), 1);
        assert_eq!(s.call_count(), 0);
    }

    #[test]
    fn qsvrg_accounting_and_progress() {
        let p = make_random_quadratic_sum(&spec(10, 4, 1.0, 0.25, 3)).unwrap();
        let mut s = OracleSession::stochastic_first_order(&p, 2, 5).unwrap();
        let mut c = default_qsvrg_config(&p, 0.05, 1e-6).unwrap();
        c.outer_k = 5;
        c.inner_t = 32;
        let r = run_qsvrg(&p, &mut s, &c).unwrap();
        let per_recovery = libm::ceil(200.0 * libm::log(2.0 * 10.0 * 5.0 / 0.05)) as u64;
        assert_eq!(r.total_calls(), 5 * (per_recovery + 32));
        assert_eq!(r.total_calls(), s.call_count());
        assert_eq!(r.recoveries, 5);
        assert!(r.trajectory.windows(2).all(|w| w[0].oracle_calls < w[1].oracle_calls));
        assert!(r.final_suboptimality() < r.trajectory[0].suboptimality);
    }

    #[test]
    fn inner_logging_keeps_calls_increasing() {
        let p = make_counterexample(4).unwrap();
        let mut s = OracleSession::stochastic_first_order(&p, 2, 1).unwrap();
        let mut c = default_qsvrg_config(&p, 0.1, 1e-3).unwrap();
        c.outer_k = 2;
        c.record_inner = true;
        let r = run_qsvrg(&p, &mut s, &c).unwrap();
        assert_eq!(r.trajectory.len(), 1 + 2 * 32);
        assert!(r.trajectory.windows(2).all(|w| w[0].oracle_calls < w[1].oracle_calls));
    }

    #[test]
    fn one_inner_step_on_counterexample_is_a_gd_step() {
        // With exact μ̃ = x̃ and T = 1: x̃_1 = x̃ − η x̃.
        let p = make_counterexample(4).unwrap();
        let mut s = OracleSession::stochastic_first_order(&p, 2, 8).unwrap();
        let mut c = default_qsvrg_config(&p, 0.1, 1e-3).unwrap();
        c.outer_k = 1;
        c.inner_t = 1;
        c.eta = 0.25;
        let r = run_qsvrg(&p, &mut s, &c).unwrap();
        assert!(r.succeeded);
        assert!((r.final_point[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn beta_choices() {
        assert_eq!(catalyst_beta(4, 1.0, 0.0), 1.0 / 16.0);
        assert_eq!(catalyst_beta(4, 10.0, 1.0), 0.0);
        assert_eq!(catalyst_beta(4, 17.0, 1.0), 0.0);
        assert_eq!(catalyst_beta(4, 64.0, 1.0), 47.0 / 16.0);
    }

    #[test]
    fn momentum_sequence() {
        let q: f64 = 0.25;
        assert!((next_momentum_alpha(q.sqrt(), q) - 0.5).abs() < 1e-15);
        let a1 = next_momentum_alpha(1.0, 0.0);
        assert!((a1 - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-15);
        assert!((a1 * a1 - (1.0 - a1)).abs() < 1e-15);
    }

    #[test]
    fn proximal_oracle_adds_the_prox_term() {
        let p = make_counterexample(2).unwrap();
        let mut s = OracleSession::stochastic_first_order(&p, 2, 3).unwrap();
        let center = DVector::from_element(1, 2.0);
        let mut prox = ProximalOracle::new(&mut s, 0.5, center);
        let pts = [DVector::from_element(1, 1.0), DVector::from_element(1, 1.0)];
        let mut out = FirstOrderResponse::default();
        prox.sample_into(&pts, &mut out).unwrap();
        // Individual gradients at 1 are 0 or 2; prox adds 0.5·(1 − 2).
        assert!(out.gradients[0][0] == -0.5 || out.gradients[0][0] == 1.5);
        assert_eq!(prox.calls(), 1);
    }

    #[test]
    fn catalyst_degenerates_when_beta_zero() {
        let p = make_random_quadratic_sum(&spec(4, 3, 4.0, 1.0, 6)).unwrap();
        let mut a = OracleSession::stochastic_first_order(&p, 2, 11).unwrap();
        let mut b = OracleSession::stochastic_first_order(&p, 2, 11).unwrap();
        let cat = run_catalyst_qsvrg(&p, &mut a, 1e-6, 0.1).unwrap();
        let plain = run_qsvrg(&p, &mut b, &default_qsvrg_config(&p, 0.1, 1e-6).unwrap()).unwrap();
        assert_eq!(cat, plain);
    }

    #[test]
    fn catalyst_runs_on_convex_problem() {
        let p = make_random_quadratic_sum(&spec(3, 3, 1.0, 0.0, 12)).unwrap();
        let mut s = OracleSession::stochastic_first_order(&p, 2, 2).unwrap();
        let c = default_catalyst_config(&p, 0.1, 1e-2 * p.initial_gap().unwrap()).unwrap();
        assert_eq!(c.catalyst_beta, 1.0 / 9.0);
        let r = run_catalyst_with_config(&p, &mut s, &c, 1e-2 * p.initial_gap().unwrap()).unwrap();
        assert_eq!(r.total_calls(), s.call_count());
        assert!(r.trajectory.windows(2).all(|w| w[0].oracle_calls < w[1].oracle_calls));
        assert!(r.final_suboptimality() < r.trajectory[0].suboptimality);
    }

    #[test]
    fn quantized_gd_exact_step() {
        let p = make_counterexample(4).unwrap().with_initial_point(DVector::from_element(1, 3.0));
        let mut s = OracleSession::stochastic_first_order(&p, 1, 0).unwrap();
        let r = run_gd_quantized(&p, &mut s, 1.0, 1, 0.1).unwrap();
        assert!(r.succeeded);
        assert_eq!(r.final_point[0], 0.0);
        assert_eq!(r.total_calls(), required_samples_batch(4, 1, 0.1).unwrap());
    }

    #[test]
    fn quantized_gd_accounting() {
        let p = make_counterexample(6).unwrap();
        let mut s = OracleSession::stochastic_first_order(&p, 1, 0).unwrap();
        let r = run_gd_quantized(&p, &mut s, 0.5, 4, 0.1).unwrap();
        assert_eq!(r.total_calls(), 4 * required_samples_batch(6, 4, 0.1).unwrap());
    }

    #[test]
    fn settled_versus_first_hit() {
        let pt = |c, s| TrajectoryPoint { oracle_calls: c, suboptimality: s, outer_index: 0 };
        let mut r = RunRecord {
            trajectory: vec![pt(0, 1.0), pt(5, 0.0), pt(9, 0.5), pt(12, 0.01), pt(20, 0.0)],
            final_point: DVector::zeros(1),
            succeeded: true,
            seed: 0,
            recoveries: 0,
        };
        assert_eq!(r.calls_to(0.1), Some(5));
        assert_eq!(r.settled_calls(0.1), Some(12));
        r.trajectory.push(pt(30, 0.2));
        assert_eq!(r.settled_calls(0.1), None);
    }

    #[test]
    fn effective_step_examples() {
        assert_eq!(effective_step(0.3, 1), 0.3);
        assert_eq!(effective_step(0.5, 2), 0.625);
    }

    #[test]
    fn naive_sgd_with_alpha_one_jumps_to_noise() {
        let p = make_counterexample(4).unwrap();
        let r = run_naive_sgd(&p, 1.0, 2, 1, 3).unwrap();
        // x_1 = −z with z ∈ {−1, 0, 1}.
        let x = r.final_point[0];
        assert!(x == -1.0 || x == 0.0 || x == 1.0);
        assert_eq!(r.total_calls(), 2);
        assert!(run_naive_sgd(&p, 0.0, 2, 1, 3).is_err());
        assert!(run_naive_sgd(&p, 1.5, 2, 1, 3).is_err());
    }

    #[test]
    fn naive_sgd_large_m_tracks_gd() {
        let p = make_counterexample(4).unwrap();
        let r = run_naive_sgd(&p, 0.1, 1_000_000, 3, 9).unwrap();
        // Deterministic GD: x_k = 0.9^k.
        assert!((r.final_point[0] - 0.729).abs() < 5e-3);
    }
}
