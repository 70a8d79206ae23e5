//! Per-agent side of the protocol.
//!
//! An agent picks a greedy first arm and an optimistic second arm from the
//! synchronized estimate, records the duel, accumulates its local gradient
//! and information increment, and exchanges them with the server at
//! communication barriers. Raw duels never leave the agent; the server only
//! sees sums.

use alloc::vec::Vec;
use thiserror::Error;

use crate::environment::ArmSet;
use crate::linalg::{dot, InfoMatrix, Matrix, Vector};
use crate::model::{self, LocalStats, NewtonOptions, NewtonSolution, Sample, SampleObjective};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("agent {agent} received a broadcast without uploading first")]
    DownloadWithoutUpload { agent: usize },
    #[error("server expected {expected} payloads, received {received}")]
    PayloadCount { expected: usize, received: usize },
    #[error("payload for agent {agent} is missing or duplicated")]
    PayloadAgents { agent: usize },
}

/// What an agent sends at a barrier: `(∇l_new, W_new)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Upload {
    pub agent: usize,
    pub gradient: Vector,
    pub w_new: Matrix,
}

/// What the server sends back: `(θ_sync, W_sync, θ̂)`.
#[derive(Debug, Clone)]
pub struct Broadcast {
    pub theta_sync: Vector,
    pub w_sync: InfoMatrix,
    pub theta_hat: Vector,
}

/// Greedy-plus-optimistic pair selection.
///
/// The first arm maximizes `θᵀφ(x)`; the second maximizes
/// `θᵀ(φ(x) − φ(x₁)) + (β/κ)‖φ(x) − φ(x₁)‖_{W⁻¹}` over all arms, including
/// the first one. Ties go to the lowest index.
pub fn select_pair(
    theta: &[f64],
    w: &InfoMatrix,
    arms: &ArmSet,
    beta: f64,
    kappa: f64,
) -> (usize, usize) {
    assert!(!arms.is_empty());
    let mut first = 0;
    let mut best = f64::NEG_INFINITY;
    for (j, phi) in arms.features().iter().enumerate() {
        let score = dot(theta, phi);
        if score > best {
            best = score;
            first = j;
        }
    }

    let width = beta / kappa;
    let anchor = arms.feature(first);
    let mut second = 0;
    let mut best = f64::NEG_INFINITY;
    for (j, phi) in arms.features().iter().enumerate() {
        let diff = phi.sub(anchor);
        let score = dot(theta, &diff) + width * w.inv_norm(&diff);
        if score > best {
            best = score;
            second = j;
        }
    }
    (first, second)
}

/// State owned by one agent.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub id: usize,
    /// `∇l_new`: local gradients at `θ̂` since the last upload.
    grad_acc: Vector,
    /// `W_new`: outer products of pair differences since the last upload.
    w_acc: Matrix,
    /// Estimate used for arm selection.
    theta_sync: Vector,
    /// Information matrix used for the exploration bonus.
    w_sync: InfoMatrix,
    /// Point at which local gradients are evaluated.
    theta_hat: Vector,
    samples: Vec<Sample>,
    retain_samples: bool,
    awaiting_download: bool,
}

impl AgentState {
    /// Fresh agent with `θ_sync = θ̂ = 0` and `W_sync = ridge · I`.
    pub fn new(id: usize, dim: usize, ridge: f64) -> Self {
        AgentState {
            id,
            grad_acc: Vector::zeros(dim),
            w_acc: Matrix::zeros(dim),
            theta_sync: Vector::zeros(dim),
            w_sync: InfoMatrix::scaled_identity(dim, ridge),
            theta_hat: Vector::zeros(dim),
            samples: Vec::new(),
            retain_samples: true,
            awaiting_download: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta_sync.dim()
    }

    pub fn theta_sync(&self) -> &Vector {
        &self.theta_sync
    }

    pub fn theta_hat(&self) -> &Vector {
        &self.theta_hat
    }

    pub fn w_sync(&self) -> &InfoMatrix {
        &self.w_sync
    }

    pub fn grad_acc(&self) -> &Vector {
        &self.grad_acc
    }

    pub fn w_acc(&self) -> &Matrix {
        &self.w_acc
    }

    /// Local duel history, kept while the agent answers federated solves.
    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Stops recording duels and drops the stored history.
    pub fn discard_history(&mut self) {
        self.retain_samples = false;
        self.samples = Vec::new();
    }

    pub fn select_pair(&self, arms: &ArmSet, beta: f64, kappa: f64) -> (usize, usize) {
        select_pair(&self.theta_sync, &self.w_sync, arms, beta, kappa)
    }

    /// Records the outcome of a duel: `∇l_new += (μ(θ̂ᵀφ̃) − y)φ̃` and
    /// `W_new += φ̃φ̃ᵀ`, with `φ̃ = φ(x₁) − φ(x₂)`. Returns the sample.
    pub fn observe_and_accumulate(&mut self, arms: &ArmSet, pair: (usize, usize), y: bool) -> Sample {
        let sample = Sample::new(arms.diff(pair.0, pair.1), y);
        let g = model::sample_gradient(&self.theta_hat, &sample);
        self.grad_acc.add_scaled(1.0, &g);
        self.w_acc.add_outer(1.0, &sample.phi_diff);
        if self.retain_samples {
            self.samples.push(sample.clone());
        }
        sample
    }

    /// Hands over the accumulators and zeroes them.
    pub fn upload(&mut self) -> Upload {
        let dim = self.dim();
        let gradient = core::mem::replace(&mut self.grad_acc, Vector::zeros(dim));
        let w_new = core::mem::replace(&mut self.w_acc, Matrix::zeros(dim));
        self.awaiting_download = true;
        Upload {
            agent: self.id,
            gradient,
            w_new,
        }
    }

    /// Replaces `θ_sync`, `W_sync` and `θ̂` in one step.
    pub fn download(&mut self, msg: &Broadcast) -> Result<(), ProtocolError> {
        if !self.awaiting_download {
            return Err(ProtocolError::DownloadWithoutUpload { agent: self.id });
        }
        self.theta_sync = msg.theta_sync.clone();
        self.w_sync = msg.w_sync.clone();
        self.theta_hat = msg.theta_hat.clone();
        self.awaiting_download = false;
        Ok(())
    }

    /// Answer to a federated query: loss, gradient and Hessian of the local
    /// history at `theta`.
    pub fn local_stats(&self, theta: &[f64]) -> LocalStats {
        model::local_stats(theta, &self.samples)
    }

    /// Single-agent update: folds `φ̃` into the local information matrix and
    /// re-solves the local MLE, warm-started at the current estimate.
    pub fn refit_local(
        &mut self,
        phi_diff: &[f64],
        lambda: f64,
        opts: NewtonOptions,
    ) -> Result<NewtonSolution, model::ModelError> {
        let mut info = Matrix::zeros(self.dim());
        info.add_outer(1.0, phi_diff);
        self.w_sync.absorb(&info);
        let mut objective = SampleObjective::new(self.dim(), &self.samples);
        let sol = model::newton_minimize(&mut objective, lambda, &self.theta_sync, opts)?;
        self.theta_sync = sol.theta.clone();
        self.theta_hat = sol.theta.clone();
        Ok(sol)
    }
}
