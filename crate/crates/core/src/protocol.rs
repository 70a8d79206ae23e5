//! The synchronous trial loop.
//!
//! Every iteration each agent draws its own arm set, selects a pair from its
//! synchronized view, observes a duel and accumulates locally. The
//! coordinator then runs the algorithm's barrier logic. Agent steps go
//! through an [`AgentExecutor`], so a thread pool can run them in parallel;
//! because every random draw comes from a stream keyed by agent and
//! iteration and every reduction is done in agent order, the output does not
//! depend on the executor.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use thiserror::Error;

use crate::agent::{AgentState, Broadcast, ProtocolError, Upload};
use crate::environment::{
    dataset_feedback, dataset_round, draw_theta_star, gen_arms, perturb_agents, preference_feedback,
    GroundTruth, RatingsDataset,
};
use crate::linalg::Vector;
use crate::metrics::{concentration_monitor, instantaneous_regret, utilities, Algorithm, RegretCurve, RoundRecord};
use crate::model::{ConfidenceSchedule, LinkConstants, LocalStats, ModelError, NewtonOptions, Objective};
use crate::rng::{stream, StreamRole};
use crate::server::{CommLedger, GdParams, GdServer, OgdParams, OgdServer, ProjectionCenter, ServerError};

/// Runs per-agent work, returning results in agent order.
pub trait AgentExecutor: Sync {
    fn map_agents<T, F>(&self, agents: &mut [AgentState], f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&mut AgentState) -> T + Sync + Send;

    fn map_indices<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs everything on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl AgentExecutor for Sequential {
    fn map_agents<T, F>(&self, agents: &mut [AgentState], f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&mut AgentState) -> T + Sync + Send,
    {
        agents.iter_mut().map(f).collect()
    }

    fn map_indices<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

/// Where contexts and feedback come from.
#[derive(Debug, Clone, Copy)]
pub enum Environment<'a> {
    /// Gaussian arms and BTL feedback from a drawn `θ*`.
    Synthetic,
    /// Items and binary feedback from a ratings matrix.
    Ratings(&'a RatingsDataset),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid {field}: {reason}")]
pub struct ConfigError {
    pub field: &'static str,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: &'static str, reason: impl Into<String>) -> Self {
        ConfigError {
            field,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrialError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("solver failed at iteration {t}: {source}")]
    Model {
        t: u64,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

impl TrialError {
    fn at(t: u64, e: ServerError) -> Self {
        match e {
            ServerError::Model(source) => TrialError::Model { t, source },
            ServerError::Protocol(p) => TrialError::Protocol(p),
        }
    }
}

/// Everything that determines one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialConfig {
    pub algo: Algorithm,
    /// `T`.
    pub horizon: u64,
    /// `N`.
    pub agents: usize,
    /// `K`; ignored in favor of the dataset embedding width for `d`.
    pub arms: usize,
    /// `d` for synthetic runs.
    pub dim: usize,
    /// `τ`.
    pub tau: u64,
    pub alpha: f64,
    /// `λ`; `None` means `1/T`.
    pub lambda: Option<f64>,
    pub delta: f64,
    pub sigma: f64,
    /// `B`, from which `κ_μ = μ̇(B)`.
    pub gap_bound: f64,
    pub kappa_override: Option<f64>,
    pub normalize_theta_star: bool,
    pub recenter_projection: bool,
    pub newton: NewtonOptions,
    pub seed: u64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            algo: Algorithm::FldbOgd,
            horizon: 500,
            agents: 100,
            arms: 10,
            dim: 5,
            tau: 1,
            alpha: 1000.0,
            lambda: None,
            delta: 0.1,
            sigma: 0.0,
            gap_bound: 2.0,
            kappa_override: None,
            normalize_theta_star: true,
            recenter_projection: true,
            newton: NewtonOptions::default(),
            seed: 0,
        }
    }
}

impl TrialConfig {
    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or(1.0 / self.horizon as f64)
    }

    pub fn kappa(&self) -> f64 {
        self.kappa_override
            .unwrap_or_else(|| LinkConstants::from_gap_bound(self.gap_bound).kappa_mu)
    }

    /// Agent count used inside `β_t`: one for isolated agents.
    fn schedule(&self, dim: usize) -> ConfidenceSchedule {
        ConfidenceSchedule {
            delta: self.delta,
            lambda: self.lambda(),
            kappa_mu: self.kappa(),
            dim,
            agents: match self.algo {
                Algorithm::Ldb => 1,
                _ => self.agents,
            },
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |field, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::new(field, format!("must be positive and finite, got {v}")))
            }
        };
        if self.horizon == 0 {
            return Err(ConfigError::new("T", "must be at least 1"));
        }
        if self.agents == 0 {
            return Err(ConfigError::new("N", "must be at least 1"));
        }
        if self.arms == 0 {
            return Err(ConfigError::new("K", "must be at least 1"));
        }
        if self.dim == 0 {
            return Err(ConfigError::new("d", "must be at least 1"));
        }
        if self.tau == 0 {
            return Err(ConfigError::new("tau", "must be at least 1"));
        }
        if !self.horizon.is_multiple_of(self.tau) {
            return Err(ConfigError::new(
                "tau",
                format!("{} does not divide T = {}", self.tau, self.horizon),
            ));
        }
        positive("alpha", self.alpha)?;
        positive("lambda", self.lambda())?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(ConfigError::new("delta", format!("must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(ConfigError::new("sigma", format!("must be non-negative, got {}", self.sigma)));
        }
        if !(self.gap_bound >= 0.0 && self.gap_bound.is_finite()) {
            return Err(ConfigError::new("gap_bound", format!("must be non-negative, got {}", self.gap_bound)));
        }
        if let Some(k) = self.kappa_override {
            if !(k > 0.0 && k <= 0.25) {
                return Err(ConfigError::new("kappa", format!("must lie in (0, 1/4], got {k}")));
            }
        }
        positive("tol", self.newton.tol)?;
        Ok(())
    }
}

/// Result of one trial.
#[derive(Debug, Clone)]
pub struct TrialOutput {
    pub config: TrialConfig,
    pub curve: RegretCurve,
    /// One record per `(t, agent)`, ordered by `t` then agent.
    pub records: Vec<RoundRecord>,
    pub ledger: CommLedger,
    /// Largest stationarity residual over all likelihood solves.
    pub max_residual: f64,
    /// Number of likelihood solves performed.
    pub solves: u64,
    pub kappa: f64,
    pub theta_star: Option<Vector>,
}

/// Sum of all agents' local statistics, evaluated through the executor and
/// reduced in agent order.
struct Federated<'a, E> {
    exec: &'a E,
    agents: &'a [AgentState],
    dim: usize,
}

impl<E: AgentExecutor> Objective for Federated<'_, E> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&mut self, theta: &[f64]) -> LocalStats {
        let agents = self.agents;
        let parts = self.exec.map_indices(agents.len(), |i| agents[i].local_stats(theta));
        let mut parts = parts.into_iter();
        let mut total = parts.next().unwrap_or_else(|| LocalStats::zeros(self.dim));
        for p in parts {
            total.merge(&p);
        }
        total
    }
}

struct RoundContext<'a> {
    seed: u64,
    t: u64,
    arms: usize,
    dim: usize,
    beta: f64,
    kappa: f64,
    algo: Algorithm,
    lambda: f64,
    newton: NewtonOptions,
    env: Environment<'a>,
    truth: Option<&'a GroundTruth>,
    barrier: bool,
}

/// One agent's iteration; returns its record and, for isolated agents, the
/// residual of its local refit.
fn play_round(ctx: &RoundContext<'_>, agent: &mut AgentState) -> Result<(RoundRecord, Option<f64>), ModelError> {
    let i = agent.id;
    let mut feedback_rng = stream(ctx.seed, StreamRole::Feedback, i as u64, ctx.t);
    let (arms, local_u, global_u, y, pair) = match ctx.env {
        Environment::Synthetic => {
            let truth = ctx.truth.expect("synthetic runs carry a ground truth");
            let arms = gen_arms(&mut stream(ctx.seed, StreamRole::Arms, i as u64, ctx.t), ctx.arms, ctx.dim);
            let pair = agent.select_pair(&arms, ctx.beta, ctx.kappa);
            let y = preference_feedback(
                &mut feedback_rng,
                truth,
                i,
                arms.feature(pair.0),
                arms.feature(pair.1),
            );
            let local_u = utilities(truth.agent_theta(i), &arms);
            let global_u = utilities(&truth.theta_star, &arms);
            (arms, local_u, global_u, y, pair)
        }
        Environment::Ratings(ds) => {
            let round = dataset_round(
                &mut stream(ctx.seed, StreamRole::DatasetRound, i as u64, ctx.t),
                ds,
                ctx.arms,
            );
            let pair = agent.select_pair(&round.arms, ctx.beta, ctx.kappa);
            let y = dataset_feedback(&mut feedback_rng, ds, round.user, round.items[pair.0], round.items[pair.1]);
            let u = round.utilities(ds);
            (round.arms, u.clone(), u, y, pair)
        }
    };
    let sample = agent.observe_and_accumulate(&arms, pair, y);
    let residual = if ctx.algo == Algorithm::Ldb {
        Some(agent.refit_local(&sample.phi_diff, ctx.lambda, ctx.newton)?.residual)
    } else {
        None
    };
    let record = RoundRecord {
        t: ctx.t,
        agent: i,
        algo: ctx.algo,
        idx1: pair.0,
        idx2: pair.1,
        y,
        inst_regret: instantaneous_regret(&local_u, pair),
        inst_regret_global: instantaneous_regret(&global_u, pair),
        comm_event: ctx.barrier,
    };
    Ok((record, residual))
}

fn collect_uploads(agents: &mut [AgentState]) -> Vec<Upload> {
    agents.iter_mut().map(AgentState::upload).collect()
}

fn distribute<E: AgentExecutor>(exec: &E, agents: &mut [AgentState], msg: &Broadcast) -> Result<(), ProtocolError> {
    exec.map_agents(agents, |a| a.download(msg)).into_iter().collect()
}

/// Draws `θ*` and the per-agent parameters for a synthetic trial.
pub fn ground_truth(config: &TrialConfig) -> GroundTruth {
    let theta_star = draw_theta_star(
        &mut stream(config.seed, StreamRole::GroundTruth, 0, 0),
        config.dim,
        config.normalize_theta_star,
    );
    perturb_agents(
        &mut stream(config.seed, StreamRole::Perturbation, 0, 0),
        &theta_star,
        config.agents,
        config.sigma,
    )
}

enum Server {
    None,
    Gd(GdServer),
    Ogd(Option<OgdServer>),
}

/// Runs one trial to completion.
pub fn run_trial<E: AgentExecutor>(
    config: &TrialConfig,
    env: Environment<'_>,
    exec: &E,
) -> Result<TrialOutput, TrialError> {
    config.validate()?;
    let dim = match env {
        Environment::Synthetic => config.dim,
        Environment::Ratings(ds) => {
            if config.arms > ds.n_items() {
                return Err(ConfigError::new(
                    "K",
                    format!("{} exceeds the {} items in the dataset", config.arms, ds.n_items()),
                )
                .into());
            }
            ds.dim()
        }
    };
    let n = config.agents;
    let lambda = config.lambda();
    let kappa = config.kappa();
    let ridge = lambda / kappa;
    let schedule = config.schedule(dim);
    let truth = match env {
        Environment::Synthetic => Some(ground_truth(config)),
        Environment::Ratings(_) => None,
    };

    let mut agents: Vec<AgentState> = (0..n).map(|i| AgentState::new(i, dim, ridge)).collect();
    let mut server = match config.algo {
        Algorithm::Ldb => Server::None,
        Algorithm::FldbGd => Server::Gd(GdServer::new(GdParams {
            agents: n,
            dim,
            lambda,
            ridge,
            newton: config.newton,
        })),
        Algorithm::FldbOgd => Server::Ogd(None),
    };
    let ogd_params = OgdParams {
        agents: n,
        dim,
        lambda,
        ridge,
        alpha: config.alpha,
        radius: schedule.projection_radius(config.horizon),
        center: if config.recenter_projection {
            ProjectionCenter::Current
        } else {
            ProjectionCenter::Initial
        },
        newton: config.newton,
    };

    let mut curve = RegretCurve::new(n);
    let mut records = Vec::with_capacity(n * config.horizon as usize);
    let mut max_residual: f64 = 0.0;
    let mut solves = 0u64;
    let mut hits = 0u64;

    for t in 1..=config.horizon {
        let beta = schedule.beta(t);
        let barrier = match config.algo {
            Algorithm::Ldb => false,
            Algorithm::FldbGd => true,
            Algorithm::FldbOgd => t % config.tau == 0,
        };
        let ctx = RoundContext {
            seed: config.seed,
            t,
            arms: config.arms,
            dim,
            beta,
            kappa,
            algo: config.algo,
            lambda,
            newton: config.newton,
            env,
            truth: truth.as_ref(),
            barrier,
        };
        let outcomes = exec.map_agents(&mut agents, |a| play_round(&ctx, a));
        let mut round = Vec::with_capacity(n);
        for outcome in outcomes {
            let (record, residual) = outcome.map_err(|source| TrialError::Model { t, source })?;
            if let Some(r) = residual {
                max_residual = max_residual.max(r);
                solves += 1;
            }
            round.push(record);
        }

        let estimate = match &mut server {
            Server::None => None,
            Server::Gd(gd) => {
                let uploads = collect_uploads(&mut agents);
                let mut objective = Federated {
                    exec,
                    agents: &agents,
                    dim,
                };
                let sol = gd.iterate(&mut objective, &uploads).map_err(|e| TrialError::at(t, e))?;
                max_residual = max_residual.max(sol.residual);
                solves += 1;
                distribute(exec, &mut agents, &gd.broadcast())?;
                Some((gd.theta_sync().clone(), gd.w_sync().clone()))
            }
            Server::Ogd(slot) => {
                match slot {
                    None => {
                        let uploads = collect_uploads(&mut agents);
                        let mut objective = Federated {
                            exec,
                            agents: &agents,
                            dim,
                        };
                        let s = OgdServer::initialize(ogd_params, &mut objective, &uploads, config.tau == 1)
                            .map_err(|e| TrialError::at(t, e))?;
                        max_residual = max_residual.max(s.init_residual());
                        solves += 1;
                        for a in agents.iter_mut() {
                            a.discard_history();
                        }
                        distribute(exec, &mut agents, &s.broadcast())?;
                        *slot = Some(s);
                    }
                    Some(s) if barrier => {
                        let uploads = collect_uploads(&mut agents);
                        let msg = s.step(&uploads)?;
                        distribute(exec, &mut agents, &msg)?;
                    }
                    Some(_) => {}
                }
                slot.as_ref()
                    .map(|s| (s.theta_tilde().clone(), s.w_sync().clone()))
            }
        };

        if let (Some((theta, w)), Some(truth)) = (estimate, truth.as_ref()) {
            if concentration_monitor(&theta, &truth.theta_star, &w, beta, kappa) {
                hits += 1;
            }
        }
        let comm = match &server {
            Server::None => 0,
            Server::Gd(gd) => gd.ledger().rounds,
            Server::Ogd(s) => s.as_ref().map_or(0, |s| s.ledger().rounds),
        };
        curve.push_iteration(&round, comm, hits);
        records.extend(round);
    }

    let ledger = match &server {
        Server::None => CommLedger::default(),
        Server::Gd(gd) => gd.ledger(),
        Server::Ogd(s) => s.as_ref().map(|s| s.ledger()).unwrap_or_default(),
    };
    Ok(TrialOutput {
        config: config.clone(),
        curve,
        records,
        ledger,
        max_residual,
        solves,
        kappa,
        theta_star: truth.map(|g| g.theta_star),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(algo: Algorithm) -> TrialConfig {
        TrialConfig {
            algo,
            horizon: 12,
            agents: 3,
            arms: 4,
            dim: 3,
            ..TrialConfig::default()
        }
    }

    #[test]
    fn forced_choice_has_zero_regret() {
        for algo in Algorithm::ALL {
            let cfg = TrialConfig {
                algo,
                horizon: 1,
                agents: 1,
                arms: 1,
                ..TrialConfig::default()
            };
            let out = run_trial(&cfg, Environment::Synthetic, &Sequential).unwrap();
            assert_eq!(out.curve.cum_regret_total, alloc::vec![0.0]);
            assert_eq!(out.records.len(), 1);
        }
    }

    #[test]
    fn validation_names_the_field() {
        let bad = TrialConfig {
            horizon: 10,
            tau: 4,
            ..TrialConfig::default()
        };
        assert_eq!(bad.validate().unwrap_err().field, "tau");
        let bad = TrialConfig {
            delta: 1.0,
            ..TrialConfig::default()
        };
        assert_eq!(bad.validate().unwrap_err().field, "delta");
        let bad = TrialConfig {
            alpha: 0.0,
            ..TrialConfig::default()
        };
        assert_eq!(bad.validate().unwrap_err().field, "alpha");
        let bad = TrialConfig {
            lambda: Some(-1.0),
            ..TrialConfig::default()
        };
        assert_eq!(bad.validate().unwrap_err().field, "lambda");
    }

    #[test]
    fn default_lambda_is_inverse_horizon() {
        let cfg = TrialConfig::default();
        assert_eq!(cfg.lambda(), 0.002);
    }

    #[test]
    fn ogd_barrier_schedule() {
        for tau in [1, 2, 3, 4, 6, 12] {
            let cfg = TrialConfig {
                tau,
                ..small(Algorithm::FldbOgd)
            };
            let out = run_trial(&cfg, Environment::Synthetic, &Sequential).unwrap();
            assert_eq!(out.curve.final_comm_rounds(), 12 / tau);
            for r in &out.records {
                assert_eq!(r.comm_event, r.t % tau == 0);
            }
            let rounds = &out.curve.comm_rounds;
            for t in 1..=12u64 {
                assert_eq!(rounds[t as usize - 1], t / tau);
            }
        }
    }

    #[test]
    fn ldb_never_communicates() {
        let out = run_trial(&small(Algorithm::Ldb), Environment::Synthetic, &Sequential).unwrap();
        assert_eq!(out.ledger, CommLedger::default());
        assert!(out.curve.comm_rounds.iter().all(|&c| c == 0));
        assert_eq!(out.solves, 36);
    }

    #[test]
    fn gd_rounds_are_query_counts() {
        let out = run_trial(&small(Algorithm::FldbGd), Environment::Synthetic, &Sequential).unwrap();
        assert_eq!(out.ledger.rounds, out.ledger.queries);
        assert!(out.ledger.rounds >= 12);
        assert!(out.max_residual <= 1e-8);
    }

    #[test]
    fn gd_and_ldb_agree_for_one_agent() {
        let base = TrialConfig {
            agents: 1,
            horizon: 40,
            ..small(Algorithm::Ldb)
        };
        let ldb = run_trial(&base, Environment::Synthetic, &Sequential).unwrap();
        let gd = run_trial(
            &TrialConfig {
                algo: Algorithm::FldbGd,
                ..base
            },
            Environment::Synthetic,
            &Sequential,
        )
        .unwrap();
        let pairs = |o: &TrialOutput| -> Vec<(usize, usize)> { o.records.iter().map(|r| (r.idx1, r.idx2)).collect() };
        assert_eq!(pairs(&ldb), pairs(&gd));
    }

    #[test]
    fn heterogeneity_zero_means_identical_regrets() {
        let out = run_trial(&small(Algorithm::FldbOgd), Environment::Synthetic, &Sequential).unwrap();
        for r in &out.records {
            assert_eq!(r.inst_regret, r.inst_regret_global);
            assert!(r.inst_regret >= 0.0);
        }
    }

    #[test]
    fn repeated_runs_are_identical() {
        for algo in Algorithm::ALL {
            let a = run_trial(&small(algo), Environment::Synthetic, &Sequential).unwrap();
            let b = run_trial(&small(algo), Environment::Synthetic, &Sequential).unwrap();
            assert_eq!(a.records, b.records);
            assert_eq!(a.curve, b.curve);
        }
    }
}
