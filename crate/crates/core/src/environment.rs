//! Contexts and preference feedback.
//!
//! Synthetic rounds draw Gaussian arms and answer duels with Bernoulli
//! feedback from a linear ground truth; ratings rounds sample a user and a
//! handful of items from a binarized ratings matrix.

use alloc::vec::Vec;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{norm, Vector};
use crate::model::link;

/// Feature vectors `φ(x)` of the arms offered in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSet {
    features: Vec<Vector>,
}

impl ArmSet {
    /// Panics if `features` is empty or the dimensions disagree.
    pub fn new(features: Vec<Vector>) -> Self {
        assert!(!features.is_empty(), "an arm set needs at least one arm");
        let d = features[0].dim();
        assert!(features.iter().all(|f| f.dim() == d), "arm dimensions differ");
        ArmSet { features }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].dim()
    }

    pub fn feature(&self, idx: usize) -> &Vector {
        &self.features[idx]
    }

    pub fn features(&self) -> &[Vector] {
        &self.features
    }

    /// `φ(x_i) − φ(x_j)`.
    pub fn diff(&self, i: usize, j: usize) -> Vector {
        self.features[i].sub(&self.features[j])
    }

    pub fn max_pairwise_diff_norm(&self) -> f64 {
        max_pairwise_diff_norm(&self.features)
    }

    /// Divides every feature by `max(1, max pairwise difference norm)`.
    pub fn rescale_to_unit_diameter(&mut self) {
        rescale_to_unit_diameter(&mut self.features);
    }
}

fn max_pairwise_diff_norm(features: &[Vector]) -> f64 {
    let mut widest: f64 = 0.0;
    for (i, a) in features.iter().enumerate() {
        for b in &features[i + 1..] {
            let gap: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
            widest = widest.max(norm(&gap));
        }
    }
    widest
}

fn rescale_to_unit_diameter(features: &mut [Vector]) {
    let scale = max_pairwise_diff_norm(features).max(1.0);
    if scale > 1.0 {
        let inv = 1.0 / scale;
        for f in features.iter_mut() {
            f.scale(inv);
        }
    }
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vector {
    (0..dim)
        .map(|_| StandardNormal.sample(rng))
        .collect::<Vec<f64>>()
        .into()
}

/// `K` i.i.d. `N(0, I_d)` arms, rescaled so every pairwise difference has
/// norm at most one.
pub fn gen_arms<R: Rng + ?Sized>(rng: &mut R, k: usize, dim: usize) -> ArmSet {
    assert!(k >= 1 && dim >= 1);
    let mut arms = ArmSet::new((0..k).map(|_| standard_normal(rng, dim)).collect());
    arms.rescale_to_unit_diameter();
    arms
}

/// Draws `θ* ~ N(0, I_d)`, optionally normalized to the unit sphere.
pub fn draw_theta_star<R: Rng + ?Sized>(rng: &mut R, dim: usize, normalize: bool) -> Vector {
    let mut theta = standard_normal(rng, dim);
    if normalize {
        let n = theta.norm();
        if n > 0.0 {
            theta.scale(1.0 / n);
        }
    }
    theta
}

/// Global and per-agent linear utility parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub theta_star: Vector,
    per_agent: Vec<Vector>,
    pub sigma: f64,
}

impl GroundTruth {
    pub fn homogeneous(theta_star: Vector, agents: usize) -> Self {
        GroundTruth {
            per_agent: (0..agents).map(|_| theta_star.clone()).collect(),
            theta_star,
            sigma: 0.0,
        }
    }

    /// `θ*_i`.
    pub fn agent_theta(&self, agent: usize) -> &Vector {
        &self.per_agent[agent]
    }

    pub fn agents(&self) -> usize {
        self.per_agent.len()
    }
}

/// `θ*_i = θ* + ε_i` with `ε_i ~ N(0, σ² I)`, drawn in agent order.
pub fn perturb_agents<R: Rng + ?Sized>(
    rng: &mut R,
    theta_star: &Vector,
    agents: usize,
    sigma: f64,
) -> GroundTruth {
    assert!(sigma >= 0.0 && sigma.is_finite(), "sigma must be non-negative");
    if sigma == 0.0 {
        return GroundTruth::homogeneous(theta_star.clone(), agents);
    }
    let per_agent = (0..agents)
        .map(|_| {
            let mut theta = theta_star.clone();
            theta.add_scaled(sigma, &standard_normal(rng, theta_star.dim()));
            theta
        })
        .collect();
    GroundTruth {
        theta_star: theta_star.clone(),
        per_agent,
        sigma,
    }
}

/// A Bernoulli draw with success probability `μ(gap)`.
pub fn bernoulli_duel<R: Rng + ?Sized>(rng: &mut R, gap: f64) -> bool {
    rng.random::<f64>() < link(gap)
}

/// Whether agent `agent` prefers `x1` over `x2` under the BTL model.
pub fn preference_feedback<R: Rng + ?Sized>(
    rng: &mut R,
    truth: &GroundTruth,
    agent: usize,
    x1: &[f64],
    x2: &[f64],
) -> bool {
    let theta = truth.agent_theta(agent);
    let gap: f64 = theta.iter().zip(x1.iter().zip(x2)).map(|(t, (a, b))| t * (a - b)).sum();
    bernoulli_duel(rng, gap)
}

/// Binarized ratings matrix split into feature rows and feedback rows.
///
/// Rows `0..feature_rows` of `binary` produced `item_features`; the rest form
/// the feedback matrix `F` that answers duels.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsDataset {
    pub user_ids: Vec<u64>,
    pub item_ids: Vec<u64>,
    binary: Vec<Vec<u8>>,
    feature_rows: usize,
    item_features: Vec<Vector>,
}

impl RatingsDataset {
    /// Builds the dataset and rescales the item embedding so that every
    /// pairwise difference has norm at most one.
    ///
    /// Panics on inconsistent shapes; the ingestion pipeline validates its
    /// input before calling this.
    pub fn new(
        user_ids: Vec<u64>,
        item_ids: Vec<u64>,
        binary: Vec<Vec<u8>>,
        feature_rows: usize,
        mut item_features: Vec<Vector>,
    ) -> Self {
        assert_eq!(binary.len(), user_ids.len());
        assert!(feature_rows < binary.len(), "no feedback rows left");
        assert!(binary.iter().all(|row| row.len() == item_ids.len()));
        assert_eq!(item_features.len(), item_ids.len());
        rescale_to_unit_diameter(&mut item_features);
        RatingsDataset {
            user_ids,
            item_ids,
            binary,
            feature_rows,
            item_features,
        }
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn feature_rows(&self) -> usize {
        self.feature_rows
    }

    pub fn n_feedback_users(&self) -> usize {
        self.binary.len() - self.feature_rows
    }

    pub fn dim(&self) -> usize {
        self.item_features[0].dim()
    }

    /// The full binary matrix `H`, feature rows first.
    pub fn binary(&self) -> &[Vec<u8>] {
        &self.binary
    }

    pub fn item_features(&self) -> &[Vector] {
        &self.item_features
    }

    /// `F(user, item)` for a feedback-row index `user`.
    pub fn feedback(&self, user: usize, item: usize) -> u8 {
        self.binary[self.feature_rows + user][item]
    }
}

/// One ratings-driven round: the environment user and the offered items.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRound {
    /// Index into the feedback rows.
    pub user: usize,
    pub items: Vec<usize>,
    pub arms: ArmSet,
}

impl DatasetRound {
    /// Binary utility `F(user, j)` of each offered item.
    pub fn utilities(&self, ds: &RatingsDataset) -> Vec<f64> {
        self.items
            .iter()
            .map(|&j| f64::from(ds.feedback(self.user, j)))
            .collect()
    }
}

/// Samples a feedback user uniformly and `k` distinct items uniformly.
pub fn dataset_round<R: Rng + ?Sized>(rng: &mut R, ds: &RatingsDataset, k: usize) -> DatasetRound {
    assert!(k >= 1 && k <= ds.n_items(), "cannot offer {k} items");
    let user = rng.random_range(0..ds.n_feedback_users());
    let items = index::sample(rng, ds.n_items(), k).into_vec();
    let arms = ArmSet::new(items.iter().map(|&j| ds.item_features[j].clone()).collect());
    DatasetRound { user, items, arms }
}

/// Duel outcome between items `j1` and `j2` for a feedback user: the item
/// with the larger `F` entry wins, ties are a fair coin.
pub fn dataset_feedback<R: Rng + ?Sized>(
    rng: &mut R,
    ds: &RatingsDataset,
    user: usize,
    j1: usize,
    j2: usize,
) -> bool {
    let coin = rng.random::<bool>();
    match ds.feedback(user, j1).cmp(&ds.feedback(user, j2)) {
        core::cmp::Ordering::Greater => true,
        core::cmp::Ordering::Less => false,
        core::cmp::Ordering::Equal => coin,
    }
}
