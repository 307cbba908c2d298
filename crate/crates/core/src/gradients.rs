//! Closed-form policy gradients, actor gradients, critic gradients and the
//! corrections that separate them.
//!
//! Every actor-side quantity has the shape `H_θ Δ(Ξ^T w) x` for some state
//! weighting `w` and state-action vector `x`:
//!
//! | quantity            | `w`                 | `x`      |
//! |---------------------|---------------------|----------|
//! | exact PG            | `d_{S,θ}`           | `q_θ`    |
//! | Actor_o             | `(1−γ) μ0`          | `q_φ`    |
//! | Actor_g             | `d_{S,θ}`           | `q_φ`    |
//! | next-state term     | `γ P^T d_θ`         | `q_φ`    |
//! | res-actor           | `d_{S,θ}`           | `w_ψ`    |

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mdp::{residual, solve_q_values, solve_stationary, TabularMdp};
use crate::policy::{CriticTable, ResCriticTable, SoftmaxPolicy};

/// Logit gap used by [`greedy_policy`]. At 40 every non-greedy action has
/// softmax mass below `e^{-40}`.
pub const GREEDY_LOGIT_GAP: f64 = 40.0;

/// `∇θJ = H_θ Δ(Ξ^T d_{S,θ}) q_θ`.
pub fn grad_policy_exact(mdp: &TabularMdp, policy: &SoftmaxPolicy) -> Result<DVector<f64>> {
    let d = solve_stationary(mdp, policy)?;
    let q = solve_q_values(mdp, policy)?;
    Ok(policy.weighted_jacobian_apply(&d.state_marginal, &q))
}

/// `∂θJπ = (1−γ) H_θ Δ(Ξ^T μ0) q_φ`: the critic is held fixed and states are
/// weighted by the initial distribution.
pub fn grad_actor_o(mdp: &TabularMdp, policy: &SoftmaxPolicy, critic: &CriticTable) -> DVector<f64> {
    let w = (1.0 - mdp.gamma()) * mdp.init_dist();
    policy.weighted_jacobian_apply(&w, &critic.values)
}

/// `∇θ^φ J = H_θ Δ(Ξ^T d_{S,θ}) q_φ`.
pub fn grad_actor_g(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    critic: &CriticTable,
) -> Result<DVector<f64>> {
    let d = solve_stationary(mdp, policy)?;
    Ok(policy.weighted_jacobian_apply(&d.state_marginal, &critic.values))
}

/// `∇θ^ψ J_δ = H_θ Δ(Ξ^T d_{S,θ}) w_ψ`.
pub fn grad_res_actor(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    res_critic: &ResCriticTable,
) -> Result<DVector<f64>> {
    let d = solve_stationary(mdp, policy)?;
    Ok(policy.weighted_jacobian_apply(&d.state_marginal, &res_critic.values))
}

/// `Υ = H_θ Δ(Ξ^T d_{S,θ}) Ψ_θ^{-1}`, with `Υ[i, sa] = ∂d_θ(sa)/∂θ_i`.
pub fn stationary_derivative(mdp: &TabularMdp, policy: &SoftmaxPolicy) -> Result<DMatrix<f64>> {
    let d = solve_stationary(mdp, policy)?;
    let resolvent = mdp.resolvent(policy)?;
    let mut upsilon = DMatrix::zeros(policy.dim(), mdp.dim());
    for (j, column) in resolvent.column_iter().enumerate() {
        let col = policy.weighted_jacobian_apply(&d.state_marginal, &column.into_owned());
        upsilon.set_column(j, &col);
    }
    Ok(upsilon)
}

/// The three pieces of `∂θ(d_θ^T δ_{θ,φ})` split by the product rule.
#[derive(Debug, Clone, PartialEq)]
pub struct GapCorrections {
    /// `∂θ(d^T δ)` with both dependencies live.
    pub full: DVector<f64>,
    /// `∂θ((d')^T δ)`: occupancy frozen, δ differentiated.
    pub dprime: DVector<f64>,
    /// `∂θ(d^T δ') = Υ δ`: residual frozen, occupancy differentiated.
    pub deltaprime: DVector<f64>,
}

/// Computes the gap corrections. The frozen-occupancy term is evaluated as
/// the explicit next-state expectation
/// `Σ_{sa} d(sa) γ Σ_{s̃} P(s̃|sa) Σ_{ã} q_φ(s̃ã) ∂θπ(s̃ã)`, independently of
/// the actor gradients it relates.
pub fn gap_corrections(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    critic: &CriticTable,
) -> Result<GapCorrections> {
    let d = solve_stationary(mdp, policy)?;
    let upsilon = stationary_derivative(mdp, policy)?;
    let delta = residual(mdp, policy, critic);
    let deltaprime = &upsilon * &delta;
    let next_state_mass = mdp.gamma() * mdp.transition().tr_mul(&d.joint);
    let dprime = policy.weighted_jacobian_apply(&next_state_mass, &critic.values);
    let full = &dprime + &deltaprime;
    Ok(GapCorrections {
        full,
        dprime,
        deltaprime,
    })
}

/// Full (Bellman-residual) critic gradient `∂φJq = −Ψ_θ^T D δ`.
pub fn grad_critic_full(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    critic: &CriticTable,
    weights: &DVector<f64>,
) -> DVector<f64> {
    let delta = residual(mdp, policy, critic);
    let weighted = weights.component_mul(&delta);
    -mdp.psi_transpose_apply(policy, &weighted)
}

/// Semi-gradient `−D δ`; the bootstrapped target is treated as constant.
pub fn grad_critic_semi(residual: &DVector<f64>, weights: &DVector<f64>) -> DVector<f64> {
    -weights.component_mul(residual)
}

/// `q ← q + α D δ`, i.e. `(I − αD) q + αD q'` with target `q' = q + δ`.
pub fn q_learning_update(
    critic: &CriticTable,
    residual: &DVector<f64>,
    weights: &DVector<f64>,
    alpha: f64,
) -> CriticTable {
    assert!(alpha > 0.0, "alpha must be positive");
    CriticTable::new(&critic.values + alpha * weights.component_mul(residual))
}

/// Softmax approximation of the greedy policy: the argmax action in each
/// state (lowest index on ties) gets logit [`GREEDY_LOGIT_GAP`], the rest 0.
pub fn greedy_policy(critic: &CriticTable, n_states: usize, n_actions: usize) -> SoftmaxPolicy {
    let mut logits = DVector::zeros(n_states * n_actions);
    for s in 0..n_states {
        let block = &critic.values.as_slice()[s * n_actions..(s + 1) * n_actions];
        let mut best = 0;
        for (a, v) in block.iter().enumerate() {
            if *v > block[best] {
                best = a;
            }
        }
        logits[s * n_actions + best] = GREEDY_LOGIT_GAP;
    }
    SoftmaxPolicy::new(n_states, n_actions, logits).expect("dimensions agree")
}

/// Every gradient and correction for one `(MDP, policy, critic)` triple.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub grad_pg: DVector<f64>,
    pub grad_actor_o: DVector<f64>,
    pub grad_actor_g: DVector<f64>,
    pub correction_full: DVector<f64>,
    pub correction_dprime: DVector<f64>,
    pub correction_deltaprime: DVector<f64>,
    pub upsilon: DMatrix<f64>,
}

impl GradientReport {
    pub fn compute(mdp: &TabularMdp, policy: &SoftmaxPolicy, critic: &CriticTable) -> Result<Self> {
        let gaps = gap_corrections(mdp, policy, critic)?;
        Ok(Self {
            grad_pg: grad_policy_exact(mdp, policy)?,
            grad_actor_o: grad_actor_o(mdp, policy, critic),
            grad_actor_g: grad_actor_g(mdp, policy, critic)?,
            correction_full: gaps.full,
            correction_dprime: gaps.dprime,
            correction_deltaprime: gaps.deltaprime,
            upsilon: stationary_derivative(mdp, policy)?,
        })
    }

    /// Largest violation among the four structural identities: the two gap
    /// identities, the Actor_o/Actor_g chain, and conservation of mass in Υ.
    pub fn identity_residuals(&self) -> [f64; 4] {
        let ones = DVector::from_element(self.upsilon.ncols(), 1.0);
        [
            (&self.grad_pg - &self.grad_actor_o - &self.correction_full).amax(),
            (&self.grad_pg - &self.grad_actor_g - &self.correction_deltaprime).amax(),
            (&self.grad_actor_g - &self.grad_actor_o - &self.correction_dprime).amax(),
            (&self.upsilon * ones).amax(),
        ]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&GradientReportJson::from(self)).expect("numeric report serialises")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientReportJson {
    pub grad_pg: Vec<f64>,
    pub grad_actor_o: Vec<f64>,
    pub grad_actor_g: Vec<f64>,
    pub correction_full: Vec<f64>,
    pub correction_dprime: Vec<f64>,
    pub correction_deltaprime: Vec<f64>,
    pub upsilon: Vec<Vec<f64>>,
}

impl From<&GradientReport> for GradientReportJson {
    fn from(r: &GradientReport) -> Self {
        let v = |x: &DVector<f64>| x.iter().copied().collect::<Vec<_>>();
        Self {
            grad_pg: v(&r.grad_pg),
            grad_actor_o: v(&r.grad_actor_o),
            grad_actor_g: v(&r.grad_actor_g),
            correction_full: v(&r.correction_full),
            correction_dprime: v(&r.correction_dprime),
            correction_deltaprime: v(&r.correction_deltaprime),
            upsilon: r
                .upsilon
                .row_iter()
                .map(|row| row.iter().copied().collect())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{random_critic, random_mdp, random_policy};
    use crate::mdp::{
        actor_objective, critic_objective, optimal_objective, policy_objective, value_iteration,
    };

    fn fd_gradient(f: impl Fn(&SoftmaxPolicy) -> f64, policy: &SoftmaxPolicy, eps: f64) -> DVector<f64> {
        DVector::from_fn(policy.dim(), |i, _| {
            let mut e = DVector::zeros(policy.dim());
            e[i] = eps;
            (f(&policy.perturbed(&e)) - f(&policy.perturbed(&(-e)))) / (2.0 * eps)
        })
    }

    fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (a - b).amax() / b.amax().max(1e-3)
    }

    fn bandit(gamma: f64) -> TabularMdp {
        TabularMdp::new(
            1,
            2,
            DMatrix::from_element(2, 1, 1.0),
            DVector::from_vec(vec![0.5, 0.5]),
            DVector::from_element(1, 1.0),
            gamma,
        )
        .unwrap()
    }

    #[test]
    fn symmetric_bandit_and_zero_reward_give_zero_gradient() {
        let g = grad_policy_exact(&bandit(0.9), &SoftmaxPolicy::uniform(1, 2)).unwrap();
        assert!(g.amax() < 1e-15);
        let mdp = random_mdp(3, 2, 1, 1.0, 0.9).with_reward(DVector::zeros(6)).unwrap();
        let g = grad_policy_exact(&mdp, &random_policy(3, 2, 1, 1.0)).unwrap();
        assert_eq!(g.amax(), 0.0);
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let mdp = random_mdp(4, 3, 17, 1.0, 0.9);
        let pol = random_policy(4, 3, 17, 1.0);
        let g = grad_policy_exact(&mdp, &pol).unwrap();
        let fd = fd_gradient(|p| policy_objective(&mdp, p).unwrap(), &pol, 1e-5);
        assert!(rel_err(&g, &fd) < 1e-4);
    }

    #[test]
    fn actor_o_cases() {
        let mdp = random_mdp(4, 3, 2, 1.0, 0.9);
        let pol = random_policy(4, 3, 2, 1.0);
        assert_eq!(grad_actor_o(&mdp, &pol, &CriticTable::zeros(12)).amax(), 0.0);
        let constant = CriticTable::new(DVector::from_element(12, 3.7));
        assert!(grad_actor_o(&mdp, &pol, &constant).amax() < 1e-15);
        let frozen = CriticTable::new(solve_q_values(&mdp, &pol).unwrap());
        let g = grad_actor_o(&mdp, &pol, &frozen);
        let fd = fd_gradient(|p| actor_objective(&mdp, p, &frozen), &pol, 1e-5);
        assert!(rel_err(&g, &fd) < 1e-4);
    }

    #[test]
    fn actor_g_cases() {
        let mdp = random_mdp(4, 3, 3, 1.0, 0.9);
        let pol = random_policy(4, 3, 3, 1.0);
        let exact = CriticTable::new(solve_q_values(&mdp, &pol).unwrap());
        let pg = grad_policy_exact(&mdp, &pol).unwrap();
        assert!((grad_actor_g(&mdp, &pol, &exact).unwrap() - &pg).amax() < 1e-12);
        let constant = CriticTable::new(DVector::from_element(12, -2.0));
        assert!(grad_actor_g(&mdp, &pol, &constant).unwrap().amax() < 1e-15);
        let critic = random_critic(12, 3, 1.0);
        let gaps = gap_corrections(&mdp, &pol, &critic).unwrap();
        let lhs = grad_actor_g(&mdp, &pol, &critic).unwrap();
        let rhs = grad_actor_o(&mdp, &pol, &critic) + gaps.dprime;
        assert!((lhs - rhs).amax() < 1e-9);
    }

    #[test]
    fn upsilon_single_state_single_action_is_zero() {
        let mdp = TabularMdp::new(
            1,
            1,
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 1.0),
            0.9,
        )
        .unwrap();
        let u = stationary_derivative(&mdp, &SoftmaxPolicy::uniform(1, 1)).unwrap();
        assert_eq!(u.shape(), (1, 1));
        assert_eq!(u[(0, 0)], 0.0);
    }

    #[test]
    fn upsilon_matches_finite_differences_and_conserves_mass() {
        let mdp = random_mdp(4, 3, 23, 1.0, 0.9);
        let pol = random_policy(4, 3, 23, 1.0);
        let u = stationary_derivative(&mdp, &pol).unwrap();
        let ones = DVector::from_element(12, 1.0);
        assert!((&u * ones).amax() < 1e-9);
        let eps = 1e-5;
        for i in 0..12 {
            let mut e = DVector::zeros(12);
            e[i] = eps;
            let plus = solve_stationary(&mdp, &pol.perturbed(&e)).unwrap().joint;
            let minus = solve_stationary(&mdp, &pol.perturbed(&(-e))).unwrap().joint;
            let fd = (plus - minus) / (2.0 * eps);
            let row = u.row(i).transpose();
            assert!(rel_err(&row, &fd) < 1e-4);
        }
    }

    #[test]
    fn exact_critic_leaves_only_the_frozen_occupancy_term() {
        let mdp = random_mdp(4, 3, 5, 1.0, 0.9);
        let pol = random_policy(4, 3, 5, 1.0);
        let exact = CriticTable::new(solve_q_values(&mdp, &pol).unwrap());
        let gaps = gap_corrections(&mdp, &pol, &exact).unwrap();
        assert!(gaps.deltaprime.amax() < 1e-9);
        // δ = 0 but ∂θδ ≠ 0, so the frozen-occupancy term survives and
        // carries the whole PG_g vs PG_o difference.
        assert!((&gaps.full - &gaps.dprime).amax() < 1e-9);
        let pg = grad_policy_exact(&mdp, &pol).unwrap();
        let pg_o = grad_actor_o(&mdp, &pol, &exact);
        assert!((pg - pg_o - &gaps.full).amax() < 1e-9);
        assert!(gaps.full.amax() > 1e-6);
    }

    #[test]
    fn zero_critic_deltaprime_is_upsilon_times_reward() {
        let mdp = random_mdp(3, 2, 6, 1.0, 0.9);
        let pol = random_policy(3, 2, 6, 1.0);
        let gaps = gap_corrections(&mdp, &pol, &CriticTable::zeros(6)).unwrap();
        let u = stationary_derivative(&mdp, &pol).unwrap();
        assert!((gaps.deltaprime - u * mdp.reward()).amax() < 1e-14);
    }

    #[test]
    fn full_correction_matches_finite_differences_of_scalar_gap() {
        let mdp = random_mdp(4, 3, 29, 1.0, 0.9);
        let pol = random_policy(4, 3, 29, 1.0);
        let critic = random_critic(12, 29, 1.0);
        let gaps = gap_corrections(&mdp, &pol, &critic).unwrap();
        let gap = |p: &SoftmaxPolicy| {
            let d = solve_stationary(&mdp, p).unwrap();
            d.joint.dot(&residual(&mdp, p, &critic))
        };
        let fd = fd_gradient(gap, &pol, 1e-5);
        assert!(rel_err(&gaps.full, &fd) < 1e-4);
    }

    #[test]
    fn critic_gradient_cases() {
        let mdp = random_mdp(4, 3, 31, 1.0, 0.9);
        let pol = random_policy(4, 3, 31, 1.0);
        let exact = CriticTable::new(solve_q_values(&mdp, &pol).unwrap());
        let w = solve_stationary(&mdp, &pol).unwrap().joint;
        assert!(grad_critic_full(&mdp, &pol, &exact, &w).amax() < 1e-10);
        let delta0 = residual(&mdp, &pol, &exact);
        assert!(grad_critic_semi(&delta0, &w).amax() < 1e-10);

        let critic = random_critic(12, 31, 1.0);
        let zero = DVector::zeros(12);
        assert_eq!(grad_critic_full(&mdp, &pol, &critic, &zero).amax(), 0.0);
        assert_eq!(grad_critic_semi(&residual(&mdp, &pol, &critic), &zero).amax(), 0.0);

        let g = grad_critic_full(&mdp, &pol, &critic, &w);
        let eps = 1e-5;
        let fd = DVector::from_fn(12, |i, _| {
            let mut plus = critic.clone();
            plus.values[i] += eps;
            let mut minus = critic.clone();
            minus.values[i] -= eps;
            (critic_objective(&mdp, &pol, &plus, &w) - critic_objective(&mdp, &pol, &minus, &w))
                / (2.0 * eps)
        });
        assert!(rel_err(&g, &fd) < 1e-4);
    }

    #[test]
    fn res_actor_cases() {
        let mdp = random_mdp(4, 3, 37, 1.0, 0.9);
        let pol = random_policy(4, 3, 37, 1.0);
        assert_eq!(grad_res_actor(&mdp, &pol, &ResCriticTable::zeros(12)).unwrap().amax(), 0.0);
        let constant = ResCriticTable::new(DVector::from_element(12, 0.25));
        assert!(grad_res_actor(&mdp, &pol, &constant).unwrap().amax() < 1e-15);

        let critic = random_critic(12, 37, 1.0);
        let w = crate::mdp::solve_res_q_values(&mdp, &pol, &residual(&mdp, &pol, &critic)).unwrap();
        let total = grad_actor_g(&mdp, &pol, &critic).unwrap()
            + grad_res_actor(&mdp, &pol, &ResCriticTable::new(w)).unwrap();
        assert!((total - grad_policy_exact(&mdp, &pol).unwrap()).amax() < 1e-9);
    }

    #[test]
    fn q_learning_update_cases() {
        let critic = CriticTable::new(DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]));
        let zero = DVector::zeros(4);
        let w = DVector::from_element(4, 0.25);
        assert_eq!(q_learning_update(&critic, &zero, &w, 0.5), critic);

        let delta = DVector::from_vec(vec![0.5, -1.0, 2.0, 0.0]);
        let mut one_hot = DVector::zeros(4);
        one_hot[1] = 1.0;
        let updated = q_learning_update(&critic, &delta, &one_hot, 1.0);
        let target_1 = critic.values[1] + delta[1];
        assert_eq!(updated.values[1], target_1);
        assert_eq!(updated.values[0], 1.0);
        assert_eq!(updated.values[2], 3.0);
    }

    #[test]
    fn repeated_q_learning_converges_to_on_policy_values() {
        let mdp = random_mdp(3, 2, 41, 1.0, 0.9);
        let pol = random_policy(3, 2, 41, 1.0);
        let d = solve_stationary(&mdp, &pol).unwrap().joint;
        let q_true = solve_q_values(&mdp, &pol).unwrap();
        let mut critic = CriticTable::zeros(6);
        for _ in 0..200_000 {
            let delta = residual(&mdp, &pol, &critic);
            if delta.amax() < 1e-9 {
                break;
            }
            critic = q_learning_update(&critic, &delta, &d, 0.1);
        }
        assert!((critic.values - q_true).amax() < 1e-6);
    }

    #[test]
    fn greedy_policy_cases() {
        let constant = CriticTable::new(DVector::from_element(6, 1.0));
        let g = greedy_policy(&constant, 3, 2);
        for s in 0..3 {
            assert!(g.prob(s, 0) >= 1.0 - 1e-9);
        }
        let mut one_hot = DVector::zeros(6);
        one_hot[1] = 1.0;
        assert!(greedy_policy(&CriticTable::new(one_hot), 3, 2).prob(0, 1) >= 1.0 - 1e-9);

        let mdp = random_mdp(2, 2, 43, 1.0, 0.9);
        let q_star = value_iteration(&mdp, 1e-13);
        let pol = greedy_policy(&CriticTable::new(q_star), 2, 2);
        let j = policy_objective(&mdp, &pol).unwrap();
        assert!((j - optimal_objective(&mdp)).abs() < 1e-6);
    }

    #[test]
    fn report_identities_hold() {
        let mdp = random_mdp(4, 3, 47, 1.0, 0.95);
        let pol = random_policy(4, 3, 47, 1.0);
        let report = GradientReport::compute(&mdp, &pol, &random_critic(12, 47, 2.0)).unwrap();
        for r in report.identity_residuals() {
            assert!(r < 1e-9, "identity residual {r}");
        }
        let json: GradientReportJson = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(json.upsilon.len(), 12);
    }

    #[test]
    fn per_state_constant_shift_leaves_actor_gradients_unchanged() {
        let mdp = random_mdp(4, 3, 53, 1.0, 0.9);
        let pol = random_policy(4, 3, 53, 1.0);
        let critic = random_critic(12, 53, 1.0);
        let shifted = CriticTable::new(DVector::from_fn(12, |j, _| critic.values[j] + (j / 3) as f64 * 1.7));
        assert!((grad_actor_o(&mdp, &pol, &critic) - grad_actor_o(&mdp, &pol, &shifted)).amax() < 1e-10);
        let a = grad_actor_g(&mdp, &pol, &critic).unwrap();
        let b = grad_actor_g(&mdp, &pol, &shifted).unwrap();
        assert!((a - b).amax() < 1e-10);
    }
}
