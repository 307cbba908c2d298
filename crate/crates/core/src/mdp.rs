//! Finite MDPs in dense form and their exact solvers.
//!
//! Solvers go through the policy-reduced state chain `Π P` (an S × S system)
//! rather than the full SA × SA system. Both describe the same fixed point:
//! for occupancy, `d = Π^T d_S` with `d_S = (1−γ)(I − γ(ΠP)^T)^{-1} μ0`, and
//! for any resolvent `Ψ^{-1} x = x + γ P (I − γΠP)^{-1} Π x`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{CriticTable, SoftmaxPolicy};

const PROB_TOL: f64 = 1e-12;

/// Finite MDP `(P, r, μ0, γ)`.
///
/// `transition` is (S·A) × S with row `s * A + a` holding `P(·|s,a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: DMatrix<f64>,
    reward: DVector<f64>,
    init_dist: DVector<f64>,
    gamma: f64,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: DMatrix<f64>,
        reward: DVector<f64>,
        init_dist: DVector<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp("n_states and n_actions must be positive".into()));
        }
        let sa = n_states
            .checked_mul(n_actions)
            .ok_or_else(|| Error::InvalidMdp("S·A overflows".into()))?;
        if transition.shape() != (sa, n_states) {
            return Err(Error::InvalidMdp(format!(
                "transition has shape {:?}, expected ({sa}, {n_states})",
                transition.shape()
            )));
        }
        if reward.len() != sa {
            return Err(Error::InvalidMdp(format!(
                "reward has length {}, expected {sa}",
                reward.len()
            )));
        }
        if init_dist.len() != n_states {
            return Err(Error::InvalidMdp(format!(
                "init_dist has length {}, expected {n_states}",
                init_dist.len()
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidMdp(format!("gamma {gamma} outside [0, 1)")));
        }
        for (row_idx, row) in transition.row_iter().enumerate() {
            check_distribution(row.iter().copied(), || format!("transition row {row_idx}"))?;
        }
        check_distribution(init_dist.iter().copied(), || "init_dist".to_string())?;
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidMdp("reward has non-finite entries".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            init_dist,
            gamma,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// S·A.
    pub fn dim(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn reward(&self) -> &DVector<f64> {
        &self.reward
    }

    pub fn init_dist(&self) -> &DVector<f64> {
        &self.init_dist
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    /// Copy with a different reward vector (same dynamics).
    pub fn with_reward(&self, reward: DVector<f64>) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            reward,
            self.init_dist.clone(),
            self.gamma,
        )
    }

    /// Copy with a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            self.reward.clone(),
            self.init_dist.clone(),
            gamma,
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: MdpJson = serde_json::from_str(text)?;
        raw.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&MdpJson::from(self)).expect("plain numeric struct serialises")
    }

    /// State-to-state chain `Π P` under `policy`.
    pub fn state_chain(&self, policy: &SoftmaxPolicy) -> DMatrix<f64> {
        self.check_policy(policy);
        let a_n = self.n_actions;
        DMatrix::from_fn(self.n_states, self.n_states, |s, t| {
            (0..a_n)
                .map(|a| policy.prob(s, a) * self.transition[(s * a_n + a, t)])
                .sum()
        })
    }

    /// Ψ = I − γ P Π as a dense SA × SA matrix. Only used where the full
    /// matrix is the object of interest (Hessians, tests).
    pub fn psi(&self, policy: &SoftmaxPolicy) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::identity(n, n) - self.gamma * &self.transition * policy.expansion()
    }

    /// Ψ^T x = x − γ Π^T P^T x.
    pub fn psi_transpose_apply(&self, policy: &SoftmaxPolicy, x: &DVector<f64>) -> DVector<f64> {
        let pt_x = self.transition.tr_mul(x);
        x - self.gamma * policy.expect_transpose(&pt_x)
    }

    /// Ψ x = x − γ P Π x.
    pub fn psi_apply(&self, policy: &SoftmaxPolicy, x: &DVector<f64>) -> DVector<f64> {
        x - self.gamma * (&self.transition * policy.expect(x))
    }

    /// Ψ^{-1} x by dense LU on the reduced state system.
    pub fn resolvent_apply(&self, policy: &SoftmaxPolicy, x: &DVector<f64>) -> Result<DVector<f64>> {
        let chain = self.state_chain(policy);
        let system = DMatrix::identity(self.n_states, self.n_states) - self.gamma * chain;
        let v = system
            .lu()
            .solve(&policy.expect(x))
            .ok_or(Error::Singular("resolvent"))?;
        Ok(x + self.gamma * (&self.transition * v))
    }

    /// Dense Ψ^{-1} (SA × SA), built as `I + γ P (I − γΠP)^{-1} Π`.
    pub fn resolvent(&self, policy: &SoftmaxPolicy) -> Result<DMatrix<f64>> {
        let chain = self.state_chain(policy);
        let system = DMatrix::identity(self.n_states, self.n_states) - self.gamma * chain;
        let inv = system.try_inverse().ok_or(Error::Singular("resolvent"))?;
        let n = self.dim();
        Ok(DMatrix::identity(n, n) + self.gamma * &self.transition * inv * policy.expansion())
    }

    fn check_policy(&self, policy: &SoftmaxPolicy) {
        assert_eq!(
            (policy.n_states(), policy.n_actions()),
            (self.n_states, self.n_actions),
            "policy shape does not match MDP"
        );
    }
}

fn check_distribution(
    values: impl Iterator<Item = f64>,
    what: impl Fn() -> String,
) -> Result<()> {
    let mut total = 0.0;
    for v in values {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidMdp(format!("{} has entry {v}", what())));
        }
        total += v;
    }
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidMdp(format!("{} sums to {total}", what())));
    }
    Ok(())
}

/// Flat JSON form of [`TabularMdp`]; `transition` is row-major (S·A) × S.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpJson {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
    pub init_dist: Vec<f64>,
}

impl TryFrom<MdpJson> for TabularMdp {
    type Error = Error;

    fn try_from(raw: MdpJson) -> Result<Self> {
        let sa = raw
            .n_states
            .checked_mul(raw.n_actions)
            .ok_or_else(|| Error::InvalidMdp("S·A overflows".into()))?;
        let cells = sa
            .checked_mul(raw.n_states)
            .ok_or_else(|| Error::InvalidMdp("transition size overflows".into()))?;
        if raw.transition.len() != cells {
            return Err(Error::InvalidMdp(format!(
                "transition has {} entries, expected {cells}",
                raw.transition.len()
            )));
        }
        TabularMdp::new(
            raw.n_states,
            raw.n_actions,
            DMatrix::from_row_slice(sa, raw.n_states, &raw.transition),
            DVector::from_vec(raw.reward),
            DVector::from_vec(raw.init_dist),
            raw.gamma,
        )
    }
}

impl From<&TabularMdp> for MdpJson {
    fn from(mdp: &TabularMdp) -> Self {
        let mut transition = Vec::with_capacity(mdp.dim() * mdp.n_states);
        for row in mdp.transition.row_iter() {
            transition.extend(row.iter().copied());
        }
        Self {
            n_states: mdp.n_states,
            n_actions: mdp.n_actions,
            gamma: mdp.gamma,
            transition,
            reward: mdp.reward.iter().copied().collect(),
            init_dist: mdp.init_dist.iter().copied().collect(),
        }
    }
}

/// Discounted occupancy `d_θ` and its state marginal `d_{S,θ} = Ξ d_θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pub joint: DVector<f64>,
    pub state_marginal: DVector<f64>,
}

/// Solves `d = (1−γ)Π^T μ0 + γ Π^T P^T d` exactly.
pub fn solve_stationary(mdp: &TabularMdp, policy: &SoftmaxPolicy) -> Result<StationaryDistribution> {
    let chain = mdp.state_chain(policy);
    let n = mdp.n_states();
    let system = DMatrix::identity(n, n) - mdp.gamma() * chain.transpose();
    let rhs = (1.0 - mdp.gamma()) * mdp.init_dist();
    let d_states = system.lu().solve(&rhs).ok_or(Error::Singular("occupancy"))?;
    let joint = policy.expect_transpose(&d_states);
    let state_marginal = marginalize(&joint, mdp.n_actions());
    Ok(StationaryDistribution {
        joint,
        state_marginal,
    })
}

/// Ξ x: sums a state-action vector over actions.
pub fn marginalize(x: &DVector<f64>, n_actions: usize) -> DVector<f64> {
    DVector::from_iterator(
        x.len() / n_actions,
        x.as_slice().chunks(n_actions).map(|c| c.iter().sum()),
    )
}

/// Ξ^T v: repeats each state entry across its actions.
pub fn broadcast_states(v: &DVector<f64>, n_actions: usize) -> DVector<f64> {
    DVector::from_fn(v.len() * n_actions, |j, _| v[j / n_actions])
}

/// On-policy Q-values `q_θ = Ψ_θ^{-1} r`.
pub fn solve_q_values(mdp: &TabularMdp, policy: &SoftmaxPolicy) -> Result<DVector<f64>> {
    mdp.resolvent_apply(policy, mdp.reward())
}

/// Q-values of the residual reward: `w_θ = Ψ_θ^{-1} δ'`.
pub fn solve_res_q_values(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    residual_reward: &DVector<f64>,
) -> Result<DVector<f64>> {
    mdp.resolvent_apply(policy, residual_reward)
}

/// Both forms of `J(θ)`; they agree to solver precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyObjective {
    /// `(1−γ) μ0^T Π q_θ`
    pub primal: f64,
    /// `d_θ^T r`
    pub dual: f64,
}

impl PolicyObjective {
    pub fn value(&self) -> f64 {
        self.dual
    }

    pub fn duality_gap(&self) -> f64 {
        (self.primal - self.dual).abs()
    }
}

pub fn policy_objective_parts(mdp: &TabularMdp, policy: &SoftmaxPolicy) -> Result<PolicyObjective> {
    let q = solve_q_values(mdp, policy)?;
    let d = solve_stationary(mdp, policy)?;
    let primal = (1.0 - mdp.gamma()) * mdp.init_dist().dot(&policy.expect(&q));
    let dual = d.joint.dot(mdp.reward());
    Ok(PolicyObjective { primal, dual })
}

/// `J(θ)`. Computes both the primal and dual forms and checks they agree.
pub fn policy_objective(mdp: &TabularMdp, policy: &SoftmaxPolicy) -> Result<f64> {
    let parts = policy_objective_parts(mdp, policy)?;
    let scale = parts.dual.abs().max(1.0);
    debug_assert!(
        parts.duality_gap() <= 1e-10 * scale,
        "primal {} vs dual {}",
        parts.primal,
        parts.dual
    );
    Ok(parts.value())
}

/// Bellman residual `δ = r + γPΠq_φ − q_φ`.
pub fn residual(mdp: &TabularMdp, policy: &SoftmaxPolicy, critic: &CriticTable) -> DVector<f64> {
    mdp.reward() - mdp.psi_apply(policy, &critic.values)
}

/// Actor objective `J_π = (1−γ) μ0^T Π q_φ`.
pub fn actor_objective(mdp: &TabularMdp, policy: &SoftmaxPolicy, critic: &CriticTable) -> f64 {
    (1.0 - mdp.gamma()) * mdp.init_dist().dot(&policy.expect(&critic.values))
}

/// Critic objective `J_q = ½ Σ d(sa) δ(sa)²` under arbitrary nonnegative weights.
pub fn critic_objective(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    critic: &CriticTable,
    weights: &DVector<f64>,
) -> f64 {
    let delta = residual(mdp, policy, critic);
    0.5 * weights
        .iter()
        .zip(delta.iter())
        .map(|(w, d)| w * d * d)
        .sum::<f64>()
}

/// Optimal Q-values by value iteration, iterated until the sup-norm update
/// falls below `tol`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> DVector<f64> {
    let a_n = mdp.n_actions();
    let mut q = DVector::zeros(mdp.dim());
    loop {
        let v = DVector::from_iterator(
            mdp.n_states(),
            q.as_slice()
                .chunks(a_n)
                .map(|c: &[f64]| c.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        );
        let next = mdp.reward() + mdp.gamma() * (mdp.transition() * v);
        let change = (&next - &q).amax();
        q = next;
        if change < tol {
            return q;
        }
    }
}

/// `J* = (1−γ) μ0^T max_a q*(·,a)` from value iteration.
pub fn optimal_objective(mdp: &TabularMdp) -> f64 {
    let q = value_iteration(mdp, 1e-13);
    let a_n = mdp.n_actions();
    let v = q
        .as_slice()
        .chunks(a_n)
        .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    (1.0 - mdp.gamma())
        * mdp
            .init_dist()
            .iter()
            .zip(v)
            .map(|(mu, v)| mu * v)
            .sum::<f64>()
}
