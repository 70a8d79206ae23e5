//! Bradley–Terry–Luce preference model with a logistic link.
//!
//! Holds the per-sample dueling loss and its derivatives, the regularized
//! negative log-likelihood, a damped Newton solver that only talks to the
//! data through an [`Objective`] (so the same solver drives the federated
//! queries of the server), and the confidence-width constants.

#[cfg(test)]
use alloc::vec::Vec;
use thiserror::Error;

use crate::linalg::{dot, norm, Matrix, Vector};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100;

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("Newton solver did not converge after {iterations} iterations (gradient norm {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
}

/// Logistic link `μ(x) = 1 / (1 + e^{-x})`.
pub fn link(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `μ̇(x) = μ(x)(1 − μ(x))`.
pub fn link_derivative(x: f64) -> f64 {
    // e^{-|x|} / (1 + e^{-|x|})² keeps full relative precision in the tails.
    let e = libm::exp(-libm::fabs(x));
    e / ((1.0 + e) * (1.0 + e))
}

/// `-log μ(x)`, evaluated without forming `μ(x)`.
fn neg_log_link(x: f64) -> f64 {
    if x >= 0.0 {
        libm::log1p(libm::exp(-x))
    } else {
        -x + libm::log1p(libm::exp(x))
    }
}

/// One observed duel through its sufficient statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `φ(x₁) − φ(x₂)`.
    pub phi_diff: Vector,
    /// Whether the first arm won.
    pub y: bool,
}

impl Sample {
    pub fn new(phi_diff: Vector, y: bool) -> Self {
        Sample { phi_diff, y }
    }

    fn label(&self) -> f64 {
        if self.y {
            1.0
        } else {
            0.0
        }
    }
}

/// Negative log-likelihood of one duel.
pub fn sample_loss(theta: &[f64], s: &Sample) -> f64 {
    let z = dot(theta, &s.phi_diff);
    if s.y {
        neg_log_link(z)
    } else {
        neg_log_link(-z)
    }
}

/// `(μ(θᵀφ̃) − y) φ̃`.
pub fn sample_gradient(theta: &[f64], s: &Sample) -> Vector {
    let z = dot(theta, &s.phi_diff);
    // μ(z) − 1 = −μ(−z); the second form avoids cancellation and makes
    // mirrored duels cancel exactly.
    let residual = if s.y { -link(-z) } else { link(z) };
    let mut g = s.phi_diff.clone();
    g.scale(residual);
    g
}

/// `Σ sample_loss + (λ/2)‖θ‖²`.
pub fn regularized_loss(theta: &[f64], samples: &[Sample], lambda: f64) -> f64 {
    let data: f64 = samples.iter().map(|s| sample_loss(theta, s)).sum();
    data + 0.5 * lambda * dot(theta, theta)
}

/// Gradient of [`regularized_loss`].
pub fn regularized_gradient(theta: &[f64], samples: &[Sample], lambda: f64) -> Vector {
    let mut g = local_stats(theta, samples).gradient;
    g.add_scaled(lambda, theta);
    g
}

/// Unregularized loss, gradient and Hessian of a batch of samples at one point.
///
/// This is also the payload an agent returns for a federated query.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalStats {
    pub loss: f64,
    pub gradient: Vector,
    pub hessian: Matrix,
}

impl LocalStats {
    pub fn zeros(dim: usize) -> Self {
        LocalStats {
            loss: 0.0,
            gradient: Vector::zeros(dim),
            hessian: Matrix::zeros(dim),
        }
    }

    pub fn accumulate(&mut self, theta: &[f64], s: &Sample) {
        let z = dot(theta, &s.phi_diff);
        self.loss += if s.y { neg_log_link(z) } else { neg_log_link(-z) };
        self.gradient.add_scaled(link(z) - s.label(), &s.phi_diff);
        self.hessian.add_outer(link_derivative(z), &s.phi_diff);
    }

    pub fn merge(&mut self, other: &LocalStats) {
        self.loss += other.loss;
        self.gradient.add_scaled(1.0, &other.gradient);
        self.hessian.add_assign(&other.hessian);
    }
}

pub fn local_stats(theta: &[f64], samples: &[Sample]) -> LocalStats {
    let mut stats = LocalStats::zeros(theta.len());
    for s in samples {
        stats.accumulate(theta, s);
    }
    stats
}

/// A data term queried pointwise by the Newton solver.
///
/// Every call to [`evaluate`](Objective::evaluate) counts as one query; for
/// the federated objective it is one round trip to all agents.
pub trait Objective {
    fn dim(&self) -> usize;
    fn evaluate(&mut self, theta: &[f64]) -> LocalStats;
}

/// A plain in-memory sample set.
pub struct SampleObjective<'a> {
    dim: usize,
    samples: &'a [Sample],
}

impl<'a> SampleObjective<'a> {
    pub fn new(dim: usize, samples: &'a [Sample]) -> Self {
        SampleObjective { dim, samples }
    }
}

impl Objective for SampleObjective<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&mut self, theta: &[f64]) -> LocalStats {
        local_stats(theta, self.samples)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Stop once `‖∇L‖₂ ≤ tol`.
    pub tol: f64,
    /// Maximum number of Newton iterations.
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonSolution {
    pub theta: Vector,
    /// Objective evaluations used, including line-search trials.
    pub queries: usize,
    pub iterations: usize,
    /// Gradient norm of the regularized objective at `theta`.
    pub residual: f64,
}

struct Point {
    theta: Vector,
    value: f64,
    gradient: Vector,
    hessian: Matrix,
}

fn regularize(theta: Vector, stats: LocalStats, lambda: f64) -> Point {
    let LocalStats {
        loss,
        mut gradient,
        mut hessian,
    } = stats;
    let value = loss + 0.5 * lambda * dot(&theta, &theta);
    gradient.add_scaled(lambda, &theta);
    for i in 0..theta.dim() {
        hessian.set(i, i, hessian.get(i, i) + lambda);
    }
    Point {
        theta,
        value,
        gradient,
        hessian,
    }
}

/// Minimizes `objective(θ) + (λ/2)‖θ‖²` by damped Newton with Armijo
/// backtracking, starting from `start`.
///
/// The first query is always made at `start`, so a warm start that is
/// already stationary costs exactly one query.
pub fn newton_minimize<O: Objective + ?Sized>(
    objective: &mut O,
    lambda: f64,
    start: &[f64],
    opts: NewtonOptions,
) -> Result<NewtonSolution, ModelError> {
    assert!(lambda > 0.0, "ridge parameter must be positive");
    assert!(opts.tol > 0.0, "tolerance must be positive");
    let mut queries = 1;
    let start = Vector::from_slice(start);
    let stats = objective.evaluate(&start);
    let mut current = regularize(start, stats, lambda);
    let mut iterations = 0;
    loop {
        let residual = norm(&current.gradient);
        if residual <= opts.tol {
            return Ok(NewtonSolution {
                theta: current.theta,
                queries,
                iterations,
                residual,
            });
        }
        if iterations >= opts.max_iter || !residual.is_finite() {
            return Err(ModelError::NonConvergence {
                iterations,
                residual,
            });
        }
        iterations += 1;

        let chol = current
            .hessian
            .cholesky()
            .expect("regularized Hessian is positive definite");
        let mut direction = chol.solve(&current.gradient);
        direction.scale(-1.0);
        let slope = dot(&current.gradient, &direction);
        // Loss values near the optimum differ only in the last few ulps.
        let slack = 1e-13 * (1.0 + libm::fabs(current.value));

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial = current.theta.clone();
            trial.add_scaled(step, &direction);
            let stats = objective.evaluate(&trial);
            queries += 1;
            let candidate = regularize(trial, stats, lambda);
            if candidate.value <= current.value + ARMIJO * step * slope + slack {
                accepted = Some(candidate);
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some(next) => current = next,
            None => {
                return Err(ModelError::NonConvergence {
                    iterations,
                    residual,
                })
            }
        }
    }
}

/// Regularized maximum-likelihood estimate over `samples`, cold-started at 0.
pub fn mle_solve(
    samples: &[Sample],
    dim: usize,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<NewtonSolution, ModelError> {
    let mut objective = SampleObjective::new(dim, samples);
    newton_minimize(
        &mut objective,
        lambda,
        &Vector::zeros(dim),
        NewtonOptions { tol, max_iter },
    )
}

/// Constants of the logistic link over the feasible range of reward gaps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkConstants {
    /// Lower bound on `μ̇` over all achievable gaps.
    pub kappa_mu: f64,
    /// Lipschitz constant of `μ`.
    pub lipschitz: f64,
    /// Assumed bound `B` on `|f(x) − f(x')|`.
    pub gap_bound: f64,
}

impl LinkConstants {
    pub const LOGISTIC_LIPSCHITZ: f64 = 0.25;

    /// `κ_μ = μ(B)(1 − μ(B))`.
    pub fn from_gap_bound(gap_bound: f64) -> Self {
        assert!(gap_bound >= 0.0 && gap_bound.is_finite());
        LinkConstants {
            kappa_mu: link_derivative(gap_bound),
            lipschitz: Self::LOGISTIC_LIPSCHITZ,
            gap_bound,
        }
    }
}

/// Parameters of the confidence width `β_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceSchedule {
    pub delta: f64,
    pub lambda: f64,
    pub kappa_mu: f64,
    pub dim: usize,
    pub agents: usize,
}

impl ConfidenceSchedule {
    /// `β_t = sqrt(2 log(1/δ) + d log(1 + t N κ_μ / (d λ)))`.
    pub fn beta(&self, t: u64) -> f64 {
        debug_assert!(t >= 1);
        let d = self.dim as f64;
        let ratio = t as f64 * self.agents as f64 * self.kappa_mu / (d * self.lambda);
        libm::sqrt(2.0 * libm::log(1.0 / self.delta) + d * libm::log1p(ratio))
    }

    /// `r = β_T / sqrt(λ κ_μ)`, the half-radius of the OGD projection ball.
    pub fn projection_radius(&self, horizon: u64) -> f64 {
        self.beta(horizon) / libm::sqrt(self.lambda * self.kappa_mu)
    }
}

/// Numerical gradient helper shared by tests in this crate.
#[cfg(test)]
pub(crate) fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}
