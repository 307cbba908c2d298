use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::mdp::TabularMdp;
use crate::policy::{CriticTable, SoftmaxPolicy};
use crate::rng::{rng_for, stream};

/// Seeded random MDP: Dirichlet(1) transition rows, rewards uniform in
/// `[-reward_scale, reward_scale]`, uniform initial distribution.
pub fn random_mdp(
    n_states: usize,
    n_actions: usize,
    seed: u64,
    reward_scale: f64,
    gamma: f64,
) -> TabularMdp {
    assert!(n_states >= 1 && n_actions >= 1, "need at least one state and action");
    let mut rng = rng_for(seed, stream::MDP);
    let sa = n_states * n_actions;
    let mut transition = DMatrix::zeros(sa, n_states);
    for row in 0..sa {
        // Normalised Exp(1) draws are Dirichlet(1, ..., 1).
        let draws: Vec<f64> = (0..n_states).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        for (t, x) in draws.into_iter().enumerate() {
            transition[(row, t)] = x / total;
        }
        // Absorb rounding so the row sums to one to the last bit we can manage.
        let drift = 1.0 - transition.row(row).sum();
        transition[(row, 0)] += drift;
    }
    let reward = DVector::from_fn(sa, |_, _| rng.random_range(-reward_scale..=reward_scale));
    let init = DVector::from_element(n_states, 1.0 / n_states as f64);
    TabularMdp::new(n_states, n_actions, transition, reward, init, gamma)
        .expect("generated MDP satisfies invariants")
}

/// Softmax policy with logits drawn from `N(0, scale²)`.
pub fn random_policy(n_states: usize, n_actions: usize, seed: u64, scale: f64) -> SoftmaxPolicy {
    let mut rng = rng_for(seed, stream::POLICY);
    let logits = DVector::from_fn(n_states * n_actions, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        scale * z
    });
    SoftmaxPolicy::new(n_states, n_actions, logits).expect("dimensions agree")
}

/// Critic table with entries drawn from `N(0, scale²)`.
pub fn random_critic(dim: usize, seed: u64, scale: f64) -> CriticTable {
    let mut rng = rng_for(seed, stream::CRITIC);
    CriticTable::new(DVector::from_fn(dim, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        scale * z
    }))
}
