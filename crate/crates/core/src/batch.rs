//! Transitions, replay buffers and (weighted) batches.
//!
//! Sample-based estimators all consume weighted batches. A batch drawn from
//! a replay buffer carries uniform weights `1/n`; an exhaustive batch
//! enumerates every `(s, a, s̃, ã)` with its exact probability, which turns
//! each estimator into the corresponding expectation.

use std::collections::VecDeque;

use nalgebra::DVector;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::policy::SoftmaxPolicy;
use crate::rng::Rng;

/// SARSA-style tuple `(s, a, r, s̃, ã)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub next_action: usize,
}

/// Bounded FIFO transition store. The agents use it unbounded and clear it
/// every episode.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    transitions: VecDeque<Transition>,
    capacity: Option<usize>,
}

impl ReplayBuffer {
    pub fn new(capacity: Option<usize>) -> Self {
        Self {
            transitions: VecDeque::new(),
            capacity,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if let Some(cap) = self.capacity {
            if cap == 0 {
                return;
            }
            if self.transitions.len() == cap {
                self.transitions.pop_front();
            }
        }
        self.transitions.push_back(t);
    }

    pub fn clear(&mut self) {
        self.transitions.clear();
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.transitions.iter()
    }

    /// Uniform draw of `n` transitions with replacement.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Batch> {
        if self.transitions.is_empty() || n == 0 {
            return Err(Error::EmptyBatch);
        }
        let picked = (0..n)
            .map(|_| self.transitions[rng.random_range(0..self.transitions.len())])
            .collect();
        Batch::uniform(picked)
    }
}

/// Unbounded store of initial states.
#[derive(Debug, Clone, Default)]
pub struct InitialStateBuffer {
    states: Vec<usize>,
}

impl InitialStateBuffer {
    pub fn push(&mut self, s: usize) {
        self.states.push(s);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Uniform draw of `n` states with replacement.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<StateBatch> {
        if self.states.is_empty() || n == 0 {
            return Err(Error::EmptyBatch);
        }
        let picked = (0..n)
            .map(|_| self.states[rng.random_range(0..self.states.len())])
            .collect();
        StateBatch::uniform(picked)
    }
}

/// Weighted transitions; weights are nonnegative and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    transitions: Vec<Transition>,
    weights: Vec<f64>,
}

impl Batch {
    pub fn uniform(transitions: Vec<Transition>) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let w = 1.0 / transitions.len() as f64;
        let weights = vec![w; transitions.len()];
        Ok(Self {
            transitions,
            weights,
        })
    }

    pub fn weighted(transitions: Vec<Transition>, weights: Vec<f64>) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if weights.len() != transitions.len() {
            return Err(Error::DimensionMismatch {
                expected: transitions.len(),
                got: weights.len(),
            });
        }
        Ok(Self {
            transitions,
            weights,
        })
    }

    /// Every `(s, a, s̃, ã)` with weight `d(s,a) P(s̃|s,a) π(s̃,ã)`. Zero-weight
    /// tuples are dropped.
    pub fn exhaustive(mdp: &TabularMdp, policy: &SoftmaxPolicy, occupancy: &DVector<f64>) -> Result<Self> {
        let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
        let mut transitions = Vec::new();
        let mut weights = Vec::new();
        for s in 0..n_s {
            for a in 0..n_a {
                let row = mdp.index(s, a);
                for next in 0..n_s {
                    let p = mdp.transition()[(row, next)];
                    for next_a in 0..n_a {
                        let w = occupancy[row] * p * policy.prob(next, next_a);
                        if w > 0.0 {
                            transitions.push(Transition {
                                state: s,
                                action: a,
                                reward: mdp.reward()[row],
                                next_state: next,
                                next_action: next_a,
                            });
                            weights.push(w);
                        }
                    }
                }
            }
        }
        Self::weighted(transitions, weights)
    }

    /// `n` i.i.d. tuples with `(s,a) ∼ occupancy`, `s̃ ∼ P(·|s,a)`,
    /// `ã ∼ π(·|s̃)`, uniformly weighted.
    pub fn sample_on_policy(
        mdp: &TabularMdp,
        policy: &SoftmaxPolicy,
        occupancy: &DVector<f64>,
        n: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let n_a = mdp.n_actions();
        let picked = (0..n)
            .map(|_| {
                let sa = draw_index(occupancy.iter().copied(), rng.random());
                let next = draw_index(mdp.transition().row(sa).iter().copied(), rng.random());
                Transition {
                    state: sa / n_a,
                    action: sa % n_a,
                    reward: mdp.reward()[sa],
                    next_state: next,
                    next_action: policy.sample_action(next, rng.random()),
                }
            })
            .collect();
        Self::uniform(picked)
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Transition, f64)> {
        self.transitions.iter().zip(self.weights.iter().copied())
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Empirical state-action distribution `d'` of the batch.
    pub fn state_action_weights(&self, dim: usize, n_actions: usize) -> DVector<f64> {
        let mut out = DVector::zeros(dim);
        for (t, w) in self.iter() {
            out[t.state * n_actions + t.action] += w;
        }
        out
    }
}

/// Weighted states, e.g. initial states drawn from `𝒪`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBatch {
    states: Vec<usize>,
    weights: Vec<f64>,
}

impl StateBatch {
    pub fn uniform(states: Vec<usize>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let w = 1.0 / states.len() as f64;
        let weights = vec![w; states.len()];
        Ok(Self { states, weights })
    }

    pub fn weighted(states: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if weights.len() != states.len() {
            return Err(Error::DimensionMismatch {
                expected: states.len(),
                got: weights.len(),
            });
        }
        Ok(Self { states, weights })
    }

    /// `n` i.i.d. draws from `μ0`, uniformly weighted.
    pub fn sample_initial(mdp: &TabularMdp, n: usize, rng: &mut Rng) -> Result<Self> {
        let states = (0..n)
            .map(|_| draw_index(mdp.init_dist().iter().copied(), rng.random()))
            .collect();
        Self::uniform(states)
    }

    /// Every state with weight `μ0(s)`.
    pub fn exhaustive_initial(mdp: &TabularMdp) -> Result<Self> {
        let (states, weights) = mdp
            .init_dist()
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(s, &w)| (s, w))
            .unzip();
        Self::weighted(states, weights)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.states.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Inverse-CDF draw; rounding slack goes to the last index with positive
/// mass.
fn draw_index(probs: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}
