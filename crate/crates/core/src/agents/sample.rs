//! Sample-based actor-critic agents: Actor_o-Critic, Actor_g-Critic,
//! Stack-AC and Res-AC, each trained from fixed-length episodes with an
//! episode-local transition buffer `𝒟` and (for Actor_o and Stack-AC) an
//! initial-state buffer `𝒪`.
//!
//! Losses follow the batch formulas exactly: mean squared TD errors without a
//! ½, targets treated as constants, score-function actor gradients. Exact
//! model quantities are computed only for evaluation columns of the trace.

use nalgebra::DVector;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::batch::{Batch, InitialStateBuffer, ReplayBuffer, StateBatch, Transition};
use crate::envs::Simulator;
use crate::error::{Error, Result};
use crate::mdp::{actor_objective, policy_objective, TabularMdp};
use crate::optim::{Direction, Optimizer, OptimizerKind};
use crate::policy::{CriticTable, ResCriticTable, SoftmaxPolicy};
use crate::rng::{rng_for, stream, Rng};
use crate::stackelberg::sampled_cross_term_apply;
use crate::trace::{TrainingTrace, SAMPLE_COLUMNS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SampleAlgorithm {
    ActorO,
    ActorG,
    #[serde(rename = "StackAC")]
    StackAc,
    #[serde(rename = "ResAC")]
    ResAc,
}

impl SampleAlgorithm {
    pub const ALL: [SampleAlgorithm; 4] = [
        SampleAlgorithm::ActorO,
        SampleAlgorithm::ActorG,
        SampleAlgorithm::StackAc,
        SampleAlgorithm::ResAc,
    ];

    pub fn uses_initial_states(self) -> bool {
        matches!(self, SampleAlgorithm::ActorO | SampleAlgorithm::StackAc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleAgentConfig {
    pub algorithm: SampleAlgorithm,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_batch")]
    pub episode_length: usize,
    #[serde(default = "d_episodes")]
    pub episodes: usize,
    #[serde(default = "d_actor_lr")]
    pub actor_lr: f64,
    #[serde(default = "d_critic_lr")]
    pub critic_lr: f64,
    #[serde(default = "d_critic_lr")]
    pub res_critic_lr: f64,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_eta")]
    pub eta: f64,
    #[serde(default)]
    pub clip_c: Option<f64>,
    #[serde(default = "d_one")]
    pub critic_steps: usize,
    #[serde(default = "d_one")]
    pub res_critic_steps: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// Standard deviation of the initial logits and critic entries; 0 starts
    /// from the uniform policy and a zero critic.
    #[serde(default = "d_init_scale")]
    pub init_scale: f64,
}

fn d_init_scale() -> f64 {
    1.0
}
fn d_batch() -> usize {
    300
}
fn d_episodes() -> usize {
    1000
}
fn d_actor_lr() -> f64 {
    0.01
}
fn d_critic_lr() -> f64 {
    0.02
}
fn d_gamma() -> f64 {
    0.9
}
fn d_eta() -> f64 {
    0.5
}
fn d_one() -> usize {
    1
}

impl SampleAgentConfig {
    pub fn new(algorithm: SampleAlgorithm) -> Self {
        Self {
            algorithm,
            batch_size: d_batch(),
            episode_length: d_batch(),
            episodes: d_episodes(),
            actor_lr: d_actor_lr(),
            critic_lr: d_critic_lr(),
            res_critic_lr: d_critic_lr(),
            gamma: d_gamma(),
            eta: d_eta(),
            clip_c: None,
            critic_steps: 1,
            res_critic_steps: 1,
            optimizer: OptimizerKind::Adam,
            init_scale: d_init_scale(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.batch_size == 0 || self.episode_length == 0 {
            return bad("batch_size and episode_length must be positive".into());
        }
        if self.critic_steps == 0 || self.res_critic_steps == 0 {
            return bad("critic_steps and res_critic_steps must be at least 1".into());
        }
        for (name, lr) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("res_critic_lr", self.res_critic_lr),
        ] {
            if !(lr >= 0.0) || !lr.is_finite() {
                return bad(format!("{name} must be a finite nonnegative number, got {lr}"));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if self.algorithm == SampleAlgorithm::StackAc && !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("Stack-AC needs a finite eta > 0, got {}", self.eta));
        }
        if !(self.init_scale >= 0.0) || !self.init_scale.is_finite() {
            return bad("init_scale must be finite and nonnegative".into());
        }
        if let Some(c) = self.clip_c {
            if !(c > 0.0) {
                return bad(format!("clip_c must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

/// One rollout of fixed length.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub initial_state: usize,
    pub transitions: Vec<Transition>,
    /// `(1−γ) Σ_t γ^t r_t`, on the same scale as `J(θ)`.
    pub discounted_return: f64,
}

pub fn collect_episode(
    sim: &Simulator,
    policy: &SoftmaxPolicy,
    episode_length: usize,
    gamma: f64,
    rng: &mut Rng,
) -> Episode {
    let s0 = sim.reset(rng);
    let mut s = s0;
    let mut a = policy.sample_action(s, rng.random());
    let mut transitions = Vec::with_capacity(episode_length);
    let (mut ret, mut discount) = (0.0, 1.0);
    for _ in 0..episode_length {
        let (r, next) = sim.step(s, a, rng);
        let next_a = policy.sample_action(next, rng.random());
        transitions.push(Transition {
            state: s,
            action: a,
            reward: r,
            next_state: next,
            next_action: next_a,
        });
        ret += discount * r;
        discount *= gamma;
        s = next;
        a = next_a;
    }
    Episode {
        initial_state: s0,
        transitions,
        discounted_return: (1.0 - gamma) * ret,
    }
}

/// `Σ w log π(a|s) v` and its θ-gradient `Σ w v ∇θ log π(a|s)`, with `v`
/// held constant.
pub fn score_function_gradient(
    policy: &SoftmaxPolicy,
    items: impl IntoIterator<Item = (usize, usize, f64, f64)>,
) -> (f64, DVector<f64>) {
    let mut grad = DVector::zeros(policy.dim());
    let mut objective = 0.0;
    for (s, a, w, v) in items {
        objective += w * policy.log_prob(s, a) * v;
        policy.grad_log_prob_into(s, a, w * v, &mut grad);
    }
    (objective, grad)
}

/// Semi-gradient critic loss `mean (q(s,a) − (r + γ q'(s̃,ã)))²` and its
/// gradient, which flows only through `q(s,a)`.
pub fn sample_critic_loss(
    batch: &Batch,
    policy: &SoftmaxPolicy,
    critic: &CriticTable,
    gamma: f64,
) -> Result<(f64, DVector<f64>)> {
    td_loss(batch, policy.n_actions(), &critic.values, gamma, |t| t.reward)
}

/// Res-critic loss `mean (w(s,a) − (clip(δ') + γ w'(s̃,ã)))²` with
/// `δ' = r + γ q(s̃,ã) − q(s,a)`; gradients stop at δ' and at w'.
pub fn res_critic_loss(
    batch: &Batch,
    policy: &SoftmaxPolicy,
    critic: &CriticTable,
    res_critic: &ResCriticTable,
    gamma: f64,
    clip_c: Option<f64>,
) -> Result<(f64, DVector<f64>)> {
    let n_a = policy.n_actions();
    let q = &critic.values;
    td_loss(batch, n_a, &res_critic.values, gamma, |t| {
        let delta = t.reward + gamma * q[t.next_state * n_a + t.next_action] - q[t.state * n_a + t.action];
        match clip_c {
            Some(c) => delta.clamp(-c, c),
            None => delta,
        }
    })
}

fn td_loss(
    batch: &Batch,
    n_a: usize,
    table: &DVector<f64>,
    gamma: f64,
    reward: impl Fn(&Transition) -> f64,
) -> Result<(f64, DVector<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut grad = DVector::zeros(table.len());
    let mut loss = 0.0;
    for (t, w) in batch.iter() {
        let i = t.state * n_a + t.action;
        let target = reward(t) + gamma * table[t.next_state * n_a + t.next_action];
        let err = table[i] - target;
        loss += w * err * err;
        grad[i] += w * 2.0 * err;
    }
    Ok((loss, grad))
}

/// `J̃π^o = mean_s log π(a|s) q(s,a)` over initial states, with a fresh
/// action `a ∼ π(·|s)` per state. Carries no `(1−γ)`: its expectation is
/// `∂θJπ / (1−γ)`.
pub fn actor_o_objective(
    states: &StateBatch,
    policy: &SoftmaxPolicy,
    critic: &CriticTable,
    rng: &mut Rng,
) -> Result<(f64, DVector<f64>)> {
    if states.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n_a = policy.n_actions();
    let items: Vec<_> = states
        .iter()
        .map(|(s, w)| {
            let a = policy.sample_action(s, rng.random());
            (s, a, w, critic.values[s * n_a + a])
        })
        .collect();
    Ok(score_function_gradient(policy, items))
}

/// `J̃π^g = mean log π(a|s) q(s,a)` over stored transitions.
pub fn actor_g_objective(
    batch: &Batch,
    policy: &SoftmaxPolicy,
    critic: &CriticTable,
) -> Result<(f64, DVector<f64>)> {
    transition_score(batch, policy, |j| critic.values[j])
}

/// `J̃π^res = mean log π(a|s) (q(s,a) + w(s,a))`.
pub fn res_actor_objective(
    batch: &Batch,
    policy: &SoftmaxPolicy,
    critic: &CriticTable,
    res_critic: &ResCriticTable,
) -> Result<(f64, DVector<f64>)> {
    transition_score(batch, policy, |j| critic.values[j] + res_critic.values[j])
}

fn transition_score(
    batch: &Batch,
    policy: &SoftmaxPolicy,
    value: impl Fn(usize) -> f64,
) -> Result<(f64, DVector<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n_a = policy.n_actions();
    Ok(score_function_gradient(
        policy,
        batch
            .iter()
            .map(|(t, w)| (t.state, t.action, w, value(t.state * n_a + t.action))),
    ))
}

/// The pieces of a Stack-AC actor step; `direction = actor_term + correction`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackUpdate {
    pub direction: DVector<f64>,
    /// Estimate of `∂θJπ`.
    pub actor_term: DVector<f64>,
    /// `−C̃ (D̂ + ηI)^{-1} d̂` with the biased sampled cross term `C̃`.
    pub correction: DVector<f64>,
}

/// Stack-AC actor direction from an already estimated `∂θJπ`. The batch
/// supplies the empirical `d̂` used both as `∂q^semi J̃π` and as the diagonal
/// semi-Hessian; pairs missing from the batch get `d̂ = 0` and drop out.
/// `eta = 0` is accepted only when every pair has mass.
pub fn stack_direction(
    actor_term: DVector<f64>,
    batch: &Batch,
    policy: &SoftmaxPolicy,
    critic: &CriticTable,
    gamma: f64,
    eta: f64,
) -> Result<StackUpdate> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::InvalidEta("finite and nonnegative"));
    }
    let d_hat = batch.state_action_weights(policy.dim(), policy.n_actions());
    if eta == 0.0 && d_hat.iter().any(|&w| w <= 0.0) {
        return Err(Error::InvalidEta("positive when the batch misses state-action pairs"));
    }
    let x = d_hat.map(|w| if w > 0.0 { w / (w + eta) } else { 0.0 });
    let correction = -sampled_cross_term_apply(batch, policy, critic, gamma, &x)?;
    Ok(StackUpdate {
        direction: &actor_term + &correction,
        actor_term,
        correction,
    })
}

/// Sampled Stack-AC actor step. The Actor_o estimate is rescaled by `(1−γ)`
/// so that it estimates `∂θJπ` on the same scale as the correction.
pub fn stack_actor_update(
    batch_o: &StateBatch,
    batch_d: &Batch,
    policy: &SoftmaxPolicy,
    critic: &CriticTable,
    gamma: f64,
    eta: f64,
    rng: &mut Rng,
) -> Result<StackUpdate> {
    if !(eta > 0.0) {
        return Err(Error::InvalidEta("positive for sampled batches"));
    }
    if batch_d.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (_, g_o) = actor_o_objective(batch_o, policy, critic, rng)?;
    stack_direction((1.0 - gamma) * g_o, batch_d, policy, critic, gamma, eta)
}

/// Parameters and buffers of one sample-based agent.
#[derive(Debug, Clone)]
pub struct SampleAgentState {
    pub policy: SoftmaxPolicy,
    pub critic: CriticTable,
    pub res_critic: ResCriticTable,
}

pub fn run_sample_agent(mdp: &TabularMdp, config: &SampleAgentConfig, seed: u64) -> Result<TrainingTrace> {
    run_sample_agent_with(mdp, config, seed, |_, _| {})
}

/// Like [`run_sample_agent`], calling `observe(episode, state)` after every
/// episode's updates.
pub fn run_sample_agent_with(
    mdp: &TabularMdp,
    config: &SampleAgentConfig,
    seed: u64,
    mut observe: impl FnMut(usize, &SampleAgentState),
) -> Result<TrainingTrace> {
    config.validate()?;
    let mdp = if mdp.gamma() == config.gamma {
        mdp.clone()
    } else {
        mdp.with_gamma(config.gamma)?
    };
    let (n_s, n_a, dim) = (mdp.n_states(), mdp.n_actions(), mdp.dim());
    let gamma = config.gamma;
    let sim = Simulator::new(&mdp);
    let mut env_rng = rng_for(seed, stream::AGENT);
    let mut batch_rng = rng_for(seed, stream::BATCH);

    let (policy, critic) = initial_parameters(n_s, n_a, config.init_scale, seed);
    let mut state = SampleAgentState {
        policy,
        critic,
        res_critic: ResCriticTable::zeros(dim),
    };
    let mut actor_opt = Optimizer::new(config.optimizer, dim, config.actor_lr);
    let mut critic_opt = Optimizer::new(config.optimizer, dim, config.critic_lr);
    let mut res_opt = Optimizer::new(config.optimizer, dim, config.res_critic_lr);
    let mut initial_states = InitialStateBuffer::default();
    let mut buffer = ReplayBuffer::new(None);
    let algo = config.algorithm;
    let uses_res = algo == SampleAlgorithm::ResAc;

    let mut trace = TrainingTrace::new(&SAMPLE_COLUMNS);
    trace.push(evaluation_row(&mdp, &state, uses_res, 0, 0, None, None, None)?);
    observe(0, &state);

    for episode in 1..=config.episodes {
        buffer.clear();
        let ep = collect_episode(&sim, &state.policy, config.episode_length, gamma, &mut env_rng);
        if algo.uses_initial_states() {
            initial_states.push(ep.initial_state);
        }
        for t in &ep.transitions {
            buffer.push(*t);
        }

        let actor_grad = match algo {
            SampleAlgorithm::ActorO => {
                let states = initial_states.sample(config.batch_size, &mut batch_rng)?;
                actor_o_objective(&states, &state.policy, &state.critic, &mut batch_rng)?.1
            }
            SampleAlgorithm::ActorG => {
                let batch = buffer.sample(config.batch_size, &mut batch_rng)?;
                actor_g_objective(&batch, &state.policy, &state.critic)?.1
            }
            SampleAlgorithm::StackAc => {
                let states = initial_states.sample(config.batch_size, &mut batch_rng)?;
                let batch = buffer.sample(config.batch_size, &mut batch_rng)?;
                stack_actor_update(
                    &states,
                    &batch,
                    &state.policy,
                    &state.critic,
                    gamma,
                    config.eta,
                    &mut batch_rng,
                )?
                .direction
            }
            SampleAlgorithm::ResAc => {
                let batch = buffer.sample(config.batch_size, &mut batch_rng)?;
                res_actor_objective(&batch, &state.policy, &state.critic, &state.res_critic)?.1
            }
        };
        let mut logits = state.policy.logits().clone();
        actor_opt.step(&mut logits, &actor_grad, Direction::Ascend)?;
        state.policy.set_logits(logits)?;

        let mut critic_loss = 0.0;
        for _ in 0..config.critic_steps {
            let batch = buffer.sample(config.batch_size, &mut batch_rng)?;
            let (loss, g) = sample_critic_loss(&batch, &state.policy, &state.critic, gamma)?;
            critic_opt.step(&mut state.critic.values, &g, Direction::Descend)?;
            critic_loss = loss;
        }

        let mut res_loss = None;
        if uses_res {
            for _ in 0..config.res_critic_steps {
                let batch = buffer.sample(config.batch_size, &mut batch_rng)?;
                let (loss, g) = res_critic_loss(
                    &batch,
                    &state.policy,
                    &state.critic,
                    &state.res_critic,
                    gamma,
                    config.clip_c,
                )?;
                res_opt.step(&mut state.res_critic.values, &g, Direction::Descend)?;
                res_loss = Some(loss);
            }
        }

        trace.push(evaluation_row(
            &mdp,
            &state,
            uses_res,
            episode,
            episode * config.episode_length,
            Some(ep.discounted_return),
            Some(critic_loss),
            res_loss,
        )?);
        observe(episode, &state);
    }
    Ok(trace)
}

/// Logits and critic entries i.i.d. `N(0, scale²)` from the seed's INIT
/// stream; the res-critic always starts at zero.
pub fn initial_parameters(n_s: usize, n_a: usize, scale: f64, seed: u64) -> (SoftmaxPolicy, CriticTable) {
    let dim = n_s * n_a;
    if scale == 0.0 {
        return (SoftmaxPolicy::uniform(n_s, n_a), CriticTable::zeros(dim));
    }
    let mut rng = rng_for(seed, stream::INIT);
    let mut draw = || DVector::from_fn(dim, |_, _| scale * rng.sample::<f64, _>(rand_distr::StandardNormal));
    let logits = draw();
    let critic = draw();
    (
        SoftmaxPolicy::new(n_s, n_a, logits).expect("dimensions agree"),
        CriticTable::new(critic),
    )
}

#[allow(clippy::too_many_arguments)]
fn evaluation_row(
    mdp: &TabularMdp,
    state: &SampleAgentState,
    uses_res: bool,
    episode: usize,
    env_steps: usize,
    empirical_return: Option<f64>,
    critic_loss: Option<f64>,
    res_loss: Option<f64>,
) -> Result<Vec<Option<f64>>> {
    let exact = policy_objective(mdp, &state.policy)?;
    let critic_pred = actor_objective(mdp, &state.policy, &state.critic);
    let combined = uses_res.then(|| {
        let total = CriticTable::new(&state.critic.values + &state.res_critic.values);
        actor_objective(mdp, &state.policy, &total)
    });
    Ok(vec![
        Some(episode as f64),
        Some(env_steps as f64),
        Some(exact),
        empirical_return,
        critic_loss,
        res_loss,
        Some(critic_pred),
        combined,
    ])
}
