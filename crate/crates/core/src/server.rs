//! Central server for both federated protocols.
//!
//! [`OgdServer`] runs the online variant: one projected gradient step per
//! communication barrier followed by iterate averaging. [`GdServer`] runs the
//! vanilla variant: a full federated solve of the regularized likelihood in
//! every iteration, where each gradient query is a communication round.

use alloc::vec::Vec;
use thiserror::Error;

use crate::agent::{Broadcast, ProtocolError, Upload};
use crate::linalg::{project_ball, InfoMatrix, Matrix, Vector};
use crate::model::{newton_minimize, ModelError, NewtonOptions, NewtonSolution, Objective};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ServerError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Communication accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CommLedger {
    /// Barrier events, or federated queries for the GD server.
    pub rounds: u64,
    /// Federated gradient queries issued by solves.
    pub queries: u64,
    /// Scalars sent in either direction, summed over all messages.
    pub scalars: u64,
}

impl CommLedger {
    fn record_query(&mut self, agents: usize, dim: usize) {
        let (n, d) = (agents as u64, dim as u64);
        self.queries += 1;
        // θ out, (loss, gradient, Hessian) back.
        self.scalars += n * d + n * (1 + d + d * d);
    }

    fn record_upload(&mut self, agents: usize, dim: usize, with_gradient: bool) {
        let (n, d) = (agents as u64, dim as u64);
        self.scalars += n * (d * d + if with_gradient { d } else { 0 });
    }

    fn record_broadcast(&mut self, agents: usize, dim: usize) {
        let (n, d) = (agents as u64, dim as u64);
        self.scalars += n * (2 * d + d * d);
    }
}

/// Sums `W_new` payloads in agent order after checking there is exactly one per agent.
fn ordered_payloads(uploads: &[Upload], agents: usize) -> Result<Vec<&Upload>, ProtocolError> {
    if uploads.len() != agents {
        return Err(ProtocolError::PayloadCount {
            expected: agents,
            received: uploads.len(),
        });
    }
    let mut ordered: Vec<&Upload> = uploads.iter().collect();
    ordered.sort_by_key(|u| u.agent);
    for (expected, u) in ordered.iter().enumerate() {
        if u.agent != expected {
            return Err(ProtocolError::PayloadAgents { agent: expected });
        }
    }
    Ok(ordered)
}

fn sum_information(ordered: &[&Upload], dim: usize) -> Matrix {
    let mut total = Matrix::zeros(dim);
    for u in ordered {
        total.add_assign(&u.w_new);
    }
    total
}

/// Where the OGD projection ball is centered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionCenter {
    /// Re-centered at the current iterate `θ̂^{(t_c)}` every step.
    Current,
    /// Fixed at the initialization solve `θ̂^{(1)}`.
    Initial,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OgdParams {
    pub agents: usize,
    pub dim: usize,
    pub lambda: f64,
    /// Initial `W_sync = ridge · I`, i.e. `λ/κ_μ`.
    pub ridge: f64,
    pub alpha: f64,
    /// `r`; the ball radius is `2r`.
    pub radius: f64,
    pub center: ProjectionCenter,
    pub newton: NewtonOptions,
}

/// Server state of the online-gradient-descent protocol.
#[derive(Debug, Clone)]
pub struct OgdServer {
    params: OgdParams,
    /// Index of the current iterate; 1 right after initialization.
    t_c: u64,
    theta_hat: Vector,
    theta_hat_sum: Vector,
    theta_tilde: Vector,
    anchor: Vector,
    w_sync: InfoMatrix,
    ledger: CommLedger,
    init_residual: f64,
}

impl OgdServer {
    /// Solves the first-window problem `Σ_i l_1^i(θ) + (λ/2)‖θ‖²` through
    /// federated queries and absorbs the first-window information matrices.
    ///
    /// `as_barrier` marks whether this exchange is itself a scheduled
    /// communication round.
    pub fn initialize<O: Objective + ?Sized>(
        params: OgdParams,
        objective: &mut O,
        uploads: &[Upload],
        as_barrier: bool,
    ) -> Result<Self, ServerError> {
        assert!(params.alpha > 0.0 && params.radius > 0.0);
        let ordered = ordered_payloads(uploads, params.agents)?;
        let mut ledger = CommLedger::default();
        let sol = newton_minimize(objective, params.lambda, &Vector::zeros(params.dim), params.newton)?;
        for _ in 0..sol.queries {
            ledger.record_query(params.agents, params.dim);
        }
        ledger.record_upload(params.agents, params.dim, false);
        ledger.record_broadcast(params.agents, params.dim);
        if as_barrier {
            ledger.rounds += 1;
        }
        let mut w_sync = InfoMatrix::scaled_identity(params.dim, params.ridge);
        w_sync.absorb(&sum_information(&ordered, params.dim));
        Ok(OgdServer {
            params,
            t_c: 1,
            theta_hat: sol.theta.clone(),
            theta_hat_sum: sol.theta.clone(),
            theta_tilde: sol.theta.clone(),
            anchor: sol.theta,
            w_sync,
            ledger,
            init_residual: sol.residual,
        })
    }

    /// One barrier: aggregate gradients, take a projected step with
    /// `η = 1/(α t_c)`, average the iterates and fold in the new information.
    pub fn step(&mut self, uploads: &[Upload]) -> Result<Broadcast, ProtocolError> {
        let ordered = ordered_payloads(uploads, self.params.agents)?;
        let d = self.params.dim;
        let mut gradient = Vector::zeros(d);
        for u in &ordered {
            gradient.add_scaled(1.0, &u.gradient);
        }
        let eta = 1.0 / (self.params.alpha * self.t_c as f64);
        let mut proposal = self.theta_hat.clone();
        proposal.add_scaled(-eta, &gradient);
        let center = match self.params.center {
            ProjectionCenter::Current => &self.theta_hat,
            ProjectionCenter::Initial => &self.anchor,
        };
        let next = project_ball(&proposal, center, 2.0 * self.params.radius);

        self.t_c += 1;
        self.theta_hat_sum.add_scaled(1.0, &next);
        let mut tilde = self.theta_hat_sum.clone();
        tilde.scale(1.0 / self.t_c as f64);
        self.theta_tilde = tilde;
        self.theta_hat = next;
        self.w_sync.absorb(&sum_information(&ordered, d));

        self.ledger.rounds += 1;
        self.ledger.record_upload(self.params.agents, d, true);
        self.ledger.record_broadcast(self.params.agents, d);
        Ok(self.broadcast())
    }

    pub fn broadcast(&self) -> Broadcast {
        Broadcast {
            theta_sync: self.theta_tilde.clone(),
            w_sync: self.w_sync.clone(),
            theta_hat: self.theta_hat.clone(),
        }
    }

    pub fn t_c(&self) -> u64 {
        self.t_c
    }

    pub fn theta_hat(&self) -> &Vector {
        &self.theta_hat
    }

    pub fn theta_hat_sum(&self) -> &Vector {
        &self.theta_hat_sum
    }

    /// `θ̃ = θ_sync`.
    pub fn theta_tilde(&self) -> &Vector {
        &self.theta_tilde
    }

    pub fn w_sync(&self) -> &InfoMatrix {
        &self.w_sync
    }

    pub fn ledger(&self) -> CommLedger {
        self.ledger
    }

    pub fn init_residual(&self) -> f64 {
        self.init_residual
    }

    pub fn params(&self) -> &OgdParams {
        &self.params
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdParams {
    pub agents: usize,
    pub dim: usize,
    pub lambda: f64,
    pub ridge: f64,
    pub newton: NewtonOptions,
}

/// Server state of the vanilla protocol.
#[derive(Debug, Clone)]
pub struct GdServer {
    params: GdParams,
    theta_sync: Vector,
    w_sync: InfoMatrix,
    ledger: CommLedger,
}

impl GdServer {
    pub fn new(params: GdParams) -> Self {
        GdServer {
            theta_sync: Vector::zeros(params.dim),
            w_sync: InfoMatrix::scaled_identity(params.dim, params.ridge),
            ledger: CommLedger::default(),
            params,
        }
    }

    /// Re-solves the federated likelihood, warm-started at the previous
    /// `θ_sync`, and folds in this iteration's information matrices.
    ///
    /// Every gradient query is one communication round; the `W_new`
    /// payloads ride along with the first query of the iteration and the
    /// new `W_sync` with the final broadcast.
    pub fn iterate<O: Objective + ?Sized>(
        &mut self,
        objective: &mut O,
        uploads: &[Upload],
    ) -> Result<NewtonSolution, ServerError> {
        let ordered = ordered_payloads(uploads, self.params.agents)?;
        let sol = newton_minimize(objective, self.params.lambda, &self.theta_sync, self.params.newton)?;
        let (n, d) = (self.params.agents, self.params.dim);
        for _ in 0..sol.queries {
            self.ledger.record_query(n, d);
        }
        self.ledger.rounds += sol.queries as u64;
        self.ledger.record_upload(n, d, false);
        self.ledger.record_broadcast(n, d);
        self.theta_sync = sol.theta.clone();
        self.w_sync.absorb(&sum_information(&ordered, d));
        Ok(sol)
    }

    pub fn broadcast(&self) -> Broadcast {
        Broadcast {
            theta_sync: self.theta_sync.clone(),
            w_sync: self.w_sync.clone(),
            theta_hat: self.theta_sync.clone(),
        }
    }

    pub fn theta_sync(&self) -> &Vector {
        &self.theta_sync
    }

    pub fn w_sync(&self) -> &InfoMatrix {
        &self.w_sync
    }

    pub fn ledger(&self) -> CommLedger {
        self.ledger
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{local_stats, mle_solve, regularized_gradient, Sample, SampleObjective};
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(agents: usize, dim: usize, alpha: f64, radius: f64) -> OgdParams {
        OgdParams {
            agents,
            dim,
            lambda: 0.1,
            ridge: 0.5,
            alpha,
            radius,
            center: ProjectionCenter::Current,
            newton: NewtonOptions::default(),
        }
    }

    fn empty_uploads(agents: usize, dim: usize) -> Vec<Upload> {
        (0..agents)
            .map(|agent| Upload {
                agent,
                gradient: Vector::zeros(dim),
                w_new: Matrix::zeros(dim),
            })
            .collect()
    }

    fn grad_uploads(grads: &[&[f64]]) -> Vec<Upload> {
        grads
            .iter()
            .enumerate()
            .map(|(agent, g)| Upload {
                agent,
                gradient: Vector::from_slice(g),
                w_new: Matrix::zeros(g.len()),
            })
            .collect()
    }

    fn random_samples(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Sample> {
        (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
                Sample::new(Vector::from(v), rng.random())
            })
            .collect()
    }

    #[test]
    fn init_without_data_is_zero() {
        let mut obj = SampleObjective::new(3, &[]);
        let server = OgdServer::initialize(params(0, 3, 10.0, 1.0), &mut obj, &[], true).unwrap();
        assert_eq!(&server.theta_hat()[..], &[0.0, 0.0, 0.0]);
        assert_eq!(server.t_c(), 1);
    }

    #[test]
    fn init_symmetric_data_is_zero() {
        let phi = Vector::from_slice(&[0.3, 0.4]);
        let mut neg = phi.clone();
        neg.scale(-1.0);
        let samples = vec![Sample::new(phi, true), Sample::new(neg, true)];
        let mut obj = SampleObjective::new(2, &samples);
        let server =
            OgdServer::initialize(params(2, 2, 10.0, 1.0), &mut obj, &empty_uploads(2, 2), true).unwrap();
        assert!(server.theta_hat().norm() < 1e-12);
        assert_eq!(server.theta_tilde(), server.theta_hat());
    }

    /// Federated objective over per-agent sample sets, summed in agent order.
    struct Federated<'a> {
        parts: Vec<&'a [Sample]>,
        dim: usize,
        queries: usize,
    }

    impl Objective for Federated<'_> {
        fn dim(&self) -> usize {
            self.dim
        }
        fn evaluate(&mut self, theta: &[f64]) -> crate::model::LocalStats {
            self.queries += 1;
            let mut total = local_stats(theta, self.parts[0]);
            for p in &self.parts[1..] {
                total.merge(&local_stats(theta, p));
            }
            total
        }
    }

    #[test]
    fn init_residual_on_random_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let per_agent: Vec<Vec<Sample>> = (0..5).map(|_| random_samples(&mut rng, 1, 4)).collect();
        let mut obj = Federated {
            parts: per_agent.iter().map(|v| v.as_slice()).collect(),
            dim: 4,
            queries: 0,
        };
        let p = params(5, 4, 10.0, 1.0);
        let server = OgdServer::initialize(p, &mut obj, &empty_uploads(5, 4), true).unwrap();
        let all: Vec<Sample> = per_agent.concat();
        let g = regularized_gradient(server.theta_hat(), &all, p.lambda);
        assert!(g.norm() <= 1e-8);
        assert_eq!(server.ledger().queries, obj.queries as u64);
        assert_eq!(server.ledger().rounds, 1);
    }

    fn started(agents: usize, dim: usize, alpha: f64, radius: f64, theta: &[f64]) -> OgdServer {
        // A single mirrored pair of duels pins the first-window solution at zero;
        // then shift the state to a known iterate.
        let mut obj = SampleObjective::new(dim, &[]);
        let mut s =
            OgdServer::initialize(params(agents, dim, alpha, radius), &mut obj, &empty_uploads(agents, dim), true)
                .unwrap();
        s.theta_hat = Vector::from_slice(theta);
        s.theta_hat_sum = Vector::from_slice(theta);
        s.theta_tilde = Vector::from_slice(theta);
        s.anchor = Vector::from_slice(theta);
        s
    }

    #[test]
    fn zero_gradient_only_averages() {
        let mut s = started(2, 2, 10.0, 1.0, &[0.4, -0.2]);
        let b = s.step(&empty_uploads(2, 2)).unwrap();
        assert_eq!(&b.theta_hat[..], &[0.4, -0.2]);
        assert_eq!(&b.theta_sync[..], &[0.4, -0.2]);
        assert_eq!(s.t_c(), 2);
    }

    #[test]
    fn large_step_lands_on_boundary() {
        let mut s = started(1, 2, 1.0, 0.1, &[0.0, 0.0]);
        let b = s.step(&grad_uploads(&[&[-3.0, 4.0]])).unwrap();
        assert!((b.theta_hat.norm() - 0.2).abs() < 1e-15);
        assert!((b.theta_hat[0] - 0.12).abs() < 1e-15 && (b.theta_hat[1] + 0.16).abs() < 1e-15);
    }

    #[test]
    fn tiny_alpha_always_projects() {
        let mut s = started(1, 2, 1e-9, 0.05, &[0.1, 0.1]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let before = s.theta_hat().clone();
            let g = [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
            s.step(&grad_uploads(&[&g])).unwrap();
            let moved = s.theta_hat().sub(&before).norm();
            assert!((moved - 0.1).abs() < 1e-12, "moved {moved}");
        }
    }

    #[test]
    fn scripted_trace_matches_hand_unrolled_recursion() {
        let alpha = 10.0;
        let mut s = started(2, 2, alpha, 100.0, &[0.5, -0.5]);
        let rounds: [[[f64; 2]; 2]; 3] = [
            [[1.0, 0.0], [0.5, 0.5]],
            [[-0.2, 0.4], [0.1, 0.1]],
            [[0.3, -0.6], [0.0, 0.2]],
        ];
        let mut hat = [0.5, -0.5];
        let mut iterates = vec![hat];
        for (j, r) in rounds.iter().enumerate() {
            s.step(&grad_uploads(&[&r[0], &r[1]])).unwrap();
            let eta = 1.0 / (alpha * (j + 1) as f64);
            hat = [
                hat[0] - eta * (r[0][0] + r[1][0]),
                hat[1] - eta * (r[0][1] + r[1][1]),
            ];
            iterates.push(hat);
        }
        let tilde = [
            iterates.iter().map(|v| v[0]).sum::<f64>() / 4.0,
            iterates.iter().map(|v| v[1]).sum::<f64>() / 4.0,
        ];
        assert!((s.theta_hat()[0] - hat[0]).abs() < 1e-15);
        assert!((s.theta_hat()[1] - hat[1]).abs() < 1e-15);
        assert!((s.theta_tilde()[0] - tilde[0]).abs() < 1e-15);
        assert!((s.theta_tilde()[1] - tilde[1]).abs() < 1e-15);
        assert_eq!(s.ledger().rounds, 4);
    }

    #[test]
    fn payload_count_is_checked() {
        let mut s = started(3, 2, 10.0, 1.0, &[0.0, 0.0]);
        let err = s.step(&empty_uploads(2, 2)).unwrap_err();
        assert_eq!(
            err,
            ProtocolError::PayloadCount {
                expected: 3,
                received: 2
            }
        );
        let mut dup = empty_uploads(3, 2);
        dup[2].agent = 0;
        assert!(matches!(s.step(&dup), Err(ProtocolError::PayloadAgents { .. })));
    }

    #[test]
    fn payload_order_does_not_matter() {
        let g: [&[f64]; 3] = [&[0.1, 0.3], &[-0.7, 0.2], &[0.25, 0.125]];
        let mut a = started(3, 2, 3.0, 10.0, &[0.0, 0.0]);
        let mut b = a.clone();
        a.step(&grad_uploads(&g)).unwrap();
        let mut rev = grad_uploads(&g);
        rev.reverse();
        b.step(&rev).unwrap();
        assert_eq!(a.theta_hat(), b.theta_hat());
    }

    #[test]
    fn gd_solve_matches_mle() {
        let phi = Vector::from_slice(&[0.6, 0.0]);
        let samples = vec![Sample::new(phi, true)];
        let mut obj = SampleObjective::new(2, &samples);
        let mut server = GdServer::new(GdParams {
            agents: 1,
            dim: 2,
            lambda: 0.01,
            ridge: 0.1,
            newton: NewtonOptions::default(),
        });
        let sol = server.iterate(&mut obj, &empty_uploads(1, 2)).unwrap();
        assert!(sol.residual <= 1e-8);
        let reference = mle_solve(&samples, 2, 0.01, 1e-8, 100).unwrap();
        assert!(server.theta_sync().sub(&reference.theta).norm() < 1e-6);
        assert_eq!(server.ledger().rounds, sol.queries as u64);
    }

    #[test]
    fn gd_without_history_stays_at_zero() {
        let mut obj = SampleObjective::new(2, &[]);
        let mut server = GdServer::new(GdParams {
            agents: 1,
            dim: 2,
            lambda: 0.01,
            ridge: 0.1,
            newton: NewtonOptions::default(),
        });
        let sol = server.iterate(&mut obj, &empty_uploads(1, 2)).unwrap();
        assert_eq!(&sol.theta[..], &[0.0, 0.0]);
        assert_eq!(sol.queries, 1);
    }

    #[test]
    fn gd_warm_start_saves_queries() {
        let mut cold_total = 0;
        let mut warm_total = 0;
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let first = random_samples(&mut rng, 200, 3);
            let more = random_samples(&mut rng, 20, 3);
            let mut server = GdServer::new(GdParams {
                agents: 1,
                dim: 3,
                lambda: 0.05,
                ridge: 0.1,
                newton: NewtonOptions::default(),
            });
            server
                .iterate(&mut SampleObjective::new(3, &first), &empty_uploads(1, 3))
                .unwrap();
            let all = [first.clone(), more].concat();
            let warm = server
                .iterate(&mut SampleObjective::new(3, &all), &empty_uploads(1, 3))
                .unwrap();
            let cold = mle_solve(&all, 3, 0.05, 1e-8, 100).unwrap();
            warm_total += warm.queries;
            cold_total += cold.queries;
        }
        assert!(warm_total < cold_total, "warm {warm_total} cold {cold_total}");
    }

    #[test]
    fn gd_rounds_are_query_counts() {
        // Scripted responses: Newton needs exactly four queries per iteration
        // (three non-stationary points, then a stationary one).
        struct FourQueries {
            calls: usize,
            lambda: f64,
        }
        impl Objective for FourQueries {
            fn dim(&self) -> usize {
                1
            }
            fn evaluate(&mut self, theta: &[f64]) -> crate::model::LocalStats {
                let k = self.calls;
                self.calls += 1;
                let ridge = 0.5 * self.lambda * theta[0] * theta[0];
                let mut s = crate::model::LocalStats::zeros(1);
                s.loss = [10.0, 5.0, 2.0, 1.0][k] - ridge;
                s.gradient[0] = if k == 3 { 0.0 } else { 1.0 } - self.lambda * theta[0];
                s.hessian.set(0, 0, 1.0);
                s
            }
        }
        let lambda = 1.0;
        let mut server = GdServer::new(GdParams {
            agents: 1,
            dim: 1,
            lambda,
            ridge: 1.0,
            newton: NewtonOptions::default(),
        });
        for _ in 0..10 {
            let mut obj = FourQueries { calls: 0, lambda };
            let sol = server.iterate(&mut obj, &empty_uploads(1, 1)).unwrap();
            assert_eq!(sol.queries, 4);
        }
        assert_eq!(server.ledger().rounds, 40);
    }
}
