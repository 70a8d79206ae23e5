//! Regret, confidence-bound monitoring and seed summaries.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::environment::ArmSet;
use crate::linalg::{dot, InfoMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    /// Independent single-agent dueling bandits, no communication.
    Ldb,
    /// Federated full solve every iteration.
    FldbGd,
    /// Federated online gradient descent with periodic barriers.
    FldbOgd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Ldb, Algorithm::FldbGd, Algorithm::FldbOgd];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ldb => "LDB",
            Algorithm::FldbGd => "FLDB-GD",
            Algorithm::FldbOgd => "FLDB-OGD",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownAlgorithm;

impl fmt::Display for UnknownAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("expected one of LDB, FLDB-GD, FLDB-OGD")
    }
}

impl FromStr for Algorithm {
    type Err = UnknownAlgorithm;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: Vec<u8> = s
            .bytes()
            .filter(|b| *b != b'-' && *b != b'_')
            .map(|b| b.to_ascii_lowercase())
            .collect();
        match key.as_slice() {
            b"ldb" => Ok(Algorithm::Ldb),
            b"fldbgd" | b"gd" => Ok(Algorithm::FldbGd),
            b"fldbogd" | b"ogd" => Ok(Algorithm::FldbOgd),
            _ => Err(UnknownAlgorithm),
        }
    }
}

/// Linear utilities `θᵀφ(x)` of every arm.
pub fn utilities(theta: &[f64], arms: &ArmSet) -> Vec<f64> {
    arms.features().iter().map(|phi| dot(theta, phi)).collect()
}

/// `2 max_j u_j − u_{idx1} − u_{idx2}`.
pub fn instantaneous_regret(utilities: &[f64], pair: (usize, usize)) -> f64 {
    let best = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    2.0 * best - utilities[pair.0] - utilities[pair.1]
}

/// Whether `‖θ* − θ̂‖_V ≤ β/κ`.
pub fn concentration_monitor(
    theta_est: &[f64],
    theta_star: &[f64],
    v: &InfoMatrix,
    beta: f64,
    kappa: f64,
) -> bool {
    let err: Vec<f64> = theta_star.iter().zip(theta_est).map(|(a, b)| a - b).collect();
    v.norm(&err) <= beta / kappa
}

/// One agent's round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub t: u64,
    pub agent: usize,
    pub algo: Algorithm,
    pub idx1: usize,
    pub idx2: usize,
    pub y: bool,
    /// Regret against the agent's own utility (`θ*_i`, or the ratings row).
    pub inst_regret: f64,
    /// Regret against the shared `θ*`; equals `inst_regret` without
    /// heterogeneity and in ratings mode.
    pub inst_regret_global: f64,
    /// Whether this round ended with a communication barrier.
    pub comm_event: bool,
}

/// Per-iteration cumulative series of one trial; index `t − 1` holds the
/// value after iteration `t`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegretCurve {
    pub agents: usize,
    pub cum_regret_total: Vec<f64>,
    pub avg_per_agent: Vec<f64>,
    pub cum_regret_global: Vec<f64>,
    pub comm_rounds: Vec<u64>,
    pub monitor_hits: Vec<u64>,
}

impl RegretCurve {
    pub fn new(agents: usize) -> Self {
        assert!(agents >= 1);
        RegretCurve {
            agents,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.cum_regret_total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cum_regret_total.is_empty()
    }

    /// Appends one iteration from its per-agent records (summed in agent
    /// order) and the cumulative communication and monitor counters.
    pub fn push_iteration(&mut self, records: &[RoundRecord], comm_rounds: u64, monitor_hits: u64) {
        let mut ordered: Vec<&RoundRecord> = records.iter().collect();
        ordered.sort_by_key(|r| r.agent);
        let local: f64 = ordered.iter().map(|r| r.inst_regret).sum();
        let global: f64 = ordered.iter().map(|r| r.inst_regret_global).sum();
        let prev = self.cum_regret_total.last().copied().unwrap_or(0.0);
        let prev_global = self.cum_regret_global.last().copied().unwrap_or(0.0);
        let total = prev + local;
        self.cum_regret_total.push(total);
        self.avg_per_agent.push(total / self.agents as f64);
        self.cum_regret_global.push(prev_global + global);
        self.comm_rounds.push(comm_rounds);
        self.monitor_hits.push(monitor_hits);
    }

    /// Final average cumulative regret per agent.
    pub fn final_avg(&self) -> f64 {
        self.avg_per_agent.last().copied().unwrap_or(0.0)
    }

    pub fn final_comm_rounds(&self) -> u64 {
        self.comm_rounds.last().copied().unwrap_or(0)
    }

    /// Fraction of iterations in which the monitor held.
    pub fn monitor_rate(&self) -> f64 {
        match self.monitor_hits.last() {
            Some(&hits) => hits as f64 / self.len() as f64,
            None => 0.0,
        }
    }
}

/// Mean and standard error (unbiased variance) over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            n,
            mean: f64::NAN,
            stderr: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let stderr = if n < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        libm::sqrt(var / n as f64)
    };
    Summary { n, mean, stderr }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vector;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn record(t: u64, agent: usize, regret: f64) -> RoundRecord {
        RoundRecord {
            t,
            agent,
            algo: Algorithm::FldbOgd,
            idx1: 0,
            idx2: 0,
            y: true,
            inst_regret: regret,
            inst_regret_global: regret,
            comm_event: false,
        }
    }

    #[test]
    fn regret_zero_at_optimum() {
        let u = [0.3, 0.9, -0.1];
        assert_eq!(instantaneous_regret(&u, (1, 1)), 0.0);
    }

    #[test]
    fn regret_two_arm_arithmetic() {
        assert_eq!(instantaneous_regret(&[1.0, 0.0], (1, 1)), 2.0);
    }

    #[test]
    fn regret_matches_raw_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let k = rng.random_range(1..=10);
            let arms = crate::environment::gen_arms(&mut rng, k, 4);
            let theta: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.5).collect();
            let pair = (rng.random_range(0..k), rng.random_range(0..k));
            let f = |j: usize| -> f64 { (0..4).map(|c| theta[c] * arms.feature(j)[c]).sum() };
            let best = (0..k).map(f).fold(f64::NEG_INFINITY, f64::max);
            let expected = 2.0 * best - f(pair.0) - f(pair.1);
            let got = instantaneous_regret(&utilities(&theta, &arms), pair);
            assert!((got - expected).abs() < 1e-14);
            assert!(got >= 0.0);
        }
    }

    #[test]
    fn monitor_trivial_cases() {
        let v = InfoMatrix::scaled_identity(2, 3.0);
        let star = [0.4, -0.2];
        assert!(concentration_monitor(&star, &star, &v, 1e-3, 0.2));
        assert!(!concentration_monitor(&[0.4, -0.1], &star, &v, 0.0, 0.2));
    }

    #[test]
    fn monitor_boundary() {
        let v = InfoMatrix::scaled_identity(1, 4.0);
        // ‖(0.5)‖_V = 1, bound β/κ = 1.
        assert!(concentration_monitor(&[0.0], &[0.5], &v, 0.25, 0.25));
        assert!(!concentration_monitor(&[0.0], &[0.5], &v, 0.2499, 0.25));
    }

    #[test]
    fn single_round_curve() {
        let mut c = RegretCurve::new(1);
        c.push_iteration(&[record(1, 0, 2.0)], 0, 0);
        assert_eq!(c.cum_regret_total, vec![2.0]);
        assert_eq!(c.final_avg(), 2.0);
    }

    #[test]
    fn curve_is_additive_over_agents() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 4;
        let mut c = RegretCurve::new(n);
        let mut per_agent = vec![0.0; n];
        for t in 1..=50 {
            let recs: Vec<RoundRecord> = (0..n).map(|i| record(t, i, rng.random::<f64>())).collect();
            for r in &recs {
                per_agent[r.agent] += r.inst_regret;
            }
            c.push_iteration(&recs, t, 0);
        }
        let total: f64 = per_agent.iter().sum();
        assert!((c.cum_regret_total[49] - total).abs() < 1e-12);
        assert!(c.cum_regret_total.windows(2).all(|w| w[1] >= w[0]));
        for (tot, avg) in c.cum_regret_total.iter().zip(&c.avg_per_agent) {
            assert_eq!(*avg, tot / n as f64);
        }
    }

    #[test]
    fn push_sorts_by_agent() {
        let mut a = RegretCurve::new(3);
        let mut b = RegretCurve::new(3);
        let recs = [record(1, 0, 0.1), record(1, 1, 0.7), record(1, 2, 1e-17)];
        a.push_iteration(&recs, 1, 0);
        let rev = [recs[2].clone(), recs[0].clone(), recs[1].clone()];
        b.push_iteration(&rev, 1, 0);
        assert_eq!(a, b);
    }

    #[test]
    fn summary_matches_recomputation() {
        let s = summarize(&[3.0, 5.0, 10.0]);
        assert_eq!(s.mean, 6.0);
        // var = (9 + 1 + 16) / 2 = 13; stderr = sqrt(13/3).
        assert!((s.stderr - (13.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(summarize(&[4.0]).stderr, 0.0);
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>(), Ok(a));
        }
        assert_eq!("fldb_ogd".parse::<Algorithm>(), Ok(Algorithm::FldbOgd));
        assert!("ucb".parse::<Algorithm>().is_err());
    }

    #[test]
    fn utilities_are_dot_products() {
        let arms = ArmSet::new(vec![Vector::from_slice(&[1.0, 2.0]), Vector::from_slice(&[0.5, -1.0])]);
        assert_eq!(utilities(&[2.0, 1.0], &arms), vec![4.0, 0.0]);
    }
}
