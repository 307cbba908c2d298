//! Exact dynamic-programming training loops: every actor rule paired with
//! every critic rule, driven by the true model.
//!
//! Each iteration updates the critic (then the res-critic), then the actor,
//! and records `J(θ)`, `J_q` and, for Res-AC, `J_w` under the new parameters.
//! Iteration 0 is the initial point.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::{
    grad_actor_g, grad_actor_o, grad_critic_full, grad_critic_semi, grad_policy_exact, greedy_policy,
};
use crate::mdp::{policy_objective, residual, solve_q_values, solve_res_q_values, solve_stationary, TabularMdp};
use crate::optim::{Direction, Optimizer, OptimizerKind};
use crate::policy::{CriticTable, ResCriticTable, SoftmaxPolicy};
use crate::agents::sample::initial_parameters;
use crate::stackelberg::{
    stackelberg_gradient_full, stackelberg_gradient_regularized, stackelberg_gradient_semi,
};
use crate::trace::{TrainingTrace, DP_COLUMNS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DpActorRule {
    #[serde(rename = "PG")]
    Pg,
    ActorO,
    ActorG,
    StackFull,
    StackSemi,
    #[serde(rename = "ResAC")]
    ResAc,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DpCriticRule {
    BellmanResidualFull,
    TemporalDifferenceSemi,
    ExactEvaluation,
    None,
}

/// How the res-critic `w_ψ` tracks the residual reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ResCriticRule {
    #[default]
    TemporalDifferenceSemi,
    BellmanResidualFull,
    ExactEvaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpAgentConfig {
    pub actor_rule: DpActorRule,
    pub critic_rule: DpCriticRule,
    #[serde(default = "default_actor_lr")]
    pub actor_lr: f64,
    #[serde(default = "default_critic_lr")]
    pub critic_lr: f64,
    #[serde(default = "default_critic_lr")]
    pub res_critic_lr: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Regularizer for StackSemi; 0 selects the unregularized gradient.
    #[serde(default)]
    pub eta: f64,
    #[serde(default = "one")]
    pub critic_steps: usize,
    #[serde(default = "one")]
    pub res_critic_steps: usize,
    #[serde(default)]
    pub res_critic_rule: ResCriticRule,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// Standard deviation of the initial logits and critic entries; 0 starts
    /// from the uniform policy and a zero critic.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_actor_lr() -> f64 {
    0.01
}

fn default_critic_lr() -> f64 {
    0.02
}

fn default_iterations() -> usize {
    2000
}

fn default_init_scale() -> f64 {
    1.0
}

fn one() -> usize {
    1
}

impl DpAgentConfig {
    pub fn new(actor_rule: DpActorRule, critic_rule: DpCriticRule) -> Self {
        Self {
            actor_rule,
            critic_rule,
            actor_lr: default_actor_lr(),
            critic_lr: default_critic_lr(),
            res_critic_lr: default_critic_lr(),
            iterations: default_iterations(),
            eta: 0.0,
            critic_steps: 1,
            res_critic_steps: 1,
            res_critic_rule: ResCriticRule::default(),
            optimizer: OptimizerKind::Adam,
            init_scale: default_init_scale(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        for (name, lr) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("res_critic_lr", self.res_critic_lr),
        ] {
            if !(lr >= 0.0) || !lr.is_finite() {
                return bad(format!("{name} must be a finite nonnegative number, got {lr}"));
            }
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return bad(format!("eta must be finite and nonnegative, got {}", self.eta));
        }
        if self.critic_steps == 0 || self.res_critic_steps == 0 {
            return bad("critic_steps and res_critic_steps must be at least 1".into());
        }
        if !(self.init_scale >= 0.0) || !self.init_scale.is_finite() {
            return bad("init_scale must be finite and nonnegative".into());
        }
        if self.critic_rule == DpCriticRule::None && self.actor_rule != DpActorRule::Pg {
            // Only the exact policy gradient ignores the critic.
            return bad(format!("{:?} needs a critic rule", self.actor_rule));
        }
        if self.actor_rule == DpActorRule::Greedy && self.critic_rule == DpCriticRule::BellmanResidualFull {
            return bad("Greedy pairs with ExactEvaluation (policy iteration) or TemporalDifferenceSemi (Q-learning)".into());
        }
        Ok(())
    }
}

/// Complete per-iteration state, exposed for tests and the acceptance suite.
#[derive(Debug, Clone)]
pub struct DpState {
    pub policy: SoftmaxPolicy,
    pub critic: CriticTable,
    pub res_critic: ResCriticTable,
}

/// The actor direction for the current state. Errors propagate from the
/// Stackelberg solves.
pub fn dp_actor_direction(
    mdp: &TabularMdp,
    config: &DpAgentConfig,
    state: &DpState,
) -> Result<DVector<f64>> {
    let (pol, critic) = (&state.policy, &state.critic);
    Ok(match config.actor_rule {
        DpActorRule::Pg => grad_policy_exact(mdp, pol)?,
        DpActorRule::ActorO => grad_actor_o(mdp, pol, critic),
        DpActorRule::ActorG => grad_actor_g(mdp, pol, critic)?,
        DpActorRule::StackFull => stackelberg_gradient_full(mdp, pol, critic)?,
        DpActorRule::StackSemi if config.eta > 0.0 => {
            let d = solve_stationary(mdp, pol)?.joint;
            stackelberg_gradient_regularized(mdp, pol, critic, config.eta, &d)?
        }
        DpActorRule::StackSemi => stackelberg_gradient_semi(mdp, pol, critic)?,
        DpActorRule::ResAc => {
            let d = solve_stationary(mdp, pol)?;
            let total = &critic.values + &state.res_critic.values;
            pol.weighted_jacobian_apply(&d.state_marginal, &total)
        }
        DpActorRule::Greedy => unreachable!("greedy improvement has no gradient"),
    })
}

/// `½ Σ d δ_w²` with `δ_w = δ' − Ψ w`, the res-critic's Bellman residual
/// against the critic's residual reward `δ'`.
pub fn res_critic_objective(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    residual_reward: &DVector<f64>,
    res_critic: &ResCriticTable,
    weights: &DVector<f64>,
) -> f64 {
    let delta_w = residual_reward - mdp.psi_apply(policy, &res_critic.values);
    0.5 * weights.iter().zip(delta_w.iter()).map(|(w, x)| w * x * x).sum::<f64>()
}

pub fn run_dp(mdp: &TabularMdp, config: &DpAgentConfig, seed: u64) -> Result<TrainingTrace> {
    run_dp_with(mdp, config, seed, |_, _, _| {})
}

/// Like [`run_dp`], calling `observe(iteration, state, direction)` right
/// before each actor step, once the critics have been updated. `direction`
/// is the ascent direction about to be applied (`None` for greedy
/// improvement).
pub fn run_dp_with(
    mdp: &TabularMdp,
    config: &DpAgentConfig,
    seed: u64,
    mut observe: impl FnMut(usize, &DpState, Option<&DVector<f64>>),
) -> Result<TrainingTrace> {
    config.validate()?;
    let (n_s, n_a, dim) = (mdp.n_states(), mdp.n_actions(), mdp.dim());
    let mut state = initial_state(mdp, config, seed);
    let mut actor_opt = Optimizer::new(config.optimizer, dim, config.actor_lr);
    let mut critic_opt = Optimizer::new(config.optimizer, dim, config.critic_lr);
    let mut res_opt = Optimizer::new(config.optimizer, dim, config.res_critic_lr);
    let uses_res = config.actor_rule == DpActorRule::ResAc;

    let mut trace = TrainingTrace::new(&DP_COLUMNS);
    record(&mut trace, 0, mdp, &state, uses_res)?;

    for it in 1..=config.iterations {
        for _ in 0..config.critic_steps {
            let pol = &state.policy;
            match config.critic_rule {
                DpCriticRule::None => {}
                DpCriticRule::ExactEvaluation => {
                    state.critic = CriticTable::new(solve_q_values(mdp, pol)?);
                }
                DpCriticRule::BellmanResidualFull => {
                    let d = solve_stationary(mdp, pol)?.joint;
                    let g = grad_critic_full(mdp, pol, &state.critic, &d);
                    critic_opt.step(&mut state.critic.values, &g, Direction::Descend)?;
                }
                DpCriticRule::TemporalDifferenceSemi => {
                    let d = solve_stationary(mdp, pol)?.joint;
                    let g = grad_critic_semi(&residual(mdp, pol, &state.critic), &d);
                    critic_opt.step(&mut state.critic.values, &g, Direction::Descend)?;
                }
            }
        }

        if uses_res {
            let pol = &state.policy;
            let delta_prime = residual(mdp, pol, &state.critic);
            for _ in 0..config.res_critic_steps {
                match config.res_critic_rule {
                    ResCriticRule::ExactEvaluation => {
                        state.res_critic = ResCriticTable::new(solve_res_q_values(mdp, pol, &delta_prime)?);
                    }
                    rule => {
                        let d = solve_stationary(mdp, pol)?.joint;
                        let delta_w = &delta_prime - mdp.psi_apply(pol, &state.res_critic.values);
                        let weighted = d.component_mul(&delta_w);
                        let g = if rule == ResCriticRule::BellmanResidualFull {
                            -mdp.psi_transpose_apply(pol, &weighted)
                        } else {
                            -weighted
                        };
                        res_opt.step(&mut state.res_critic.values, &g, Direction::Descend)?;
                    }
                }
            }
        }

        if config.actor_rule == DpActorRule::Greedy {
            observe(it, &state, None);
            state.policy = greedy_policy(&state.critic, n_s, n_a);
        } else {
            let g = dp_actor_direction(mdp, config, &state)?;
            observe(it, &state, Some(&g));
            let mut logits = state.policy.logits().clone();
            actor_opt.step(&mut logits, &g, Direction::Ascend)?;
            state.policy.set_logits(logits)?;
        }

        record(&mut trace, it, mdp, &state, uses_res)?;
    }
    Ok(trace)
}

fn initial_state(mdp: &TabularMdp, config: &DpAgentConfig, seed: u64) -> DpState {
    let (policy, critic) = initial_parameters(mdp.n_states(), mdp.n_actions(), config.init_scale, seed);
    DpState {
        policy,
        critic,
        res_critic: ResCriticTable::zeros(mdp.dim()),
    }
}

fn record(
    trace: &mut TrainingTrace,
    it: usize,
    mdp: &TabularMdp,
    state: &DpState,
    uses_res: bool,
) -> Result<()> {
    let pol = &state.policy;
    let d = solve_stationary(mdp, pol)?.joint;
    let delta = residual(mdp, pol, &state.critic);
    let j_q = 0.5 * d.iter().zip(delta.iter()).map(|(w, x)| w * x * x).sum::<f64>();
    let j_w = uses_res.then(|| res_critic_objective(mdp, pol, &delta, &state.res_critic, &d));
    trace.push(vec![
        Some(it as f64),
        Some(policy_objective(mdp, pol)?),
        Some(j_q),
        j_w,
    ]);
    Ok(())
}
