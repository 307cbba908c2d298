//! Stackelberg gradients with the actor as leader and the critic as a
//! best-responding follower.
//!
//! With `C = ∂θ∂qJq` (dim θ × S·A), `H = ∂q²Jq` and `b = ∂qJπ` the leader's
//! total derivative is `∂θJπ − C H^{-1} b`. Three versions are exposed:
//! the full one (critic gradient through Ψ and D), the semi one (critic
//! semi-gradient, Hessian `D_θ`), and an η-regularized semi version whose
//! Hessian weights may come from a replay buffer. The sample estimate of the
//! cross term treats the batch distribution as fixed and is therefore biased.

use nalgebra::{DMatrix, DVector};

use crate::batch::Batch;
use crate::error::{Error, Result};
use crate::gradients::{grad_actor_o, stationary_derivative};
use crate::mdp::{broadcast_states, residual, solve_stationary, TabularMdp};
use crate::policy::{CriticTable, SoftmaxPolicy};

/// Entries of μ0 and π at or below this count as missing support.
pub const SUPPORT_THRESHOLD: f64 = 1e-300;
/// Hessians with a smaller eigenvalue are rejected.
pub const SINGULAR_EIGENVALUE: f64 = 1e-12;
/// Below this eigenvalue the Cholesky solve gives way to least squares.
pub const LEAST_SQUARES_EIGENVALUE: f64 = 1e-10;

/// Every ingredient of the exact Stackelberg gradients at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct StackelbergTerms {
    /// `∂θ∂qJq` for the full critic gradient `−Ψ^T D δ`.
    pub cross_term: DMatrix<f64>,
    /// `∂θ∂q^semi Jq` for the semi-gradient `−D δ`.
    pub semi_cross_term: DMatrix<f64>,
    /// `Ψ^T D Ψ`.
    pub hessian: DMatrix<f64>,
    /// Diagonal of the semi-Hessian, `d_θ`.
    pub semi_hessian: DVector<f64>,
    /// `(1−γ) Π^T μ0`.
    pub dq_jpi: DVector<f64>,
    /// `d_θ`.
    pub dq_jpi_semi: DVector<f64>,
    /// `∂θJπ`, the Actor_o direction.
    pub dtheta_jpi: DVector<f64>,
    pub eta: f64,
}

impl StackelbergTerms {
    pub fn compute(mdp: &TabularMdp, policy: &SoftmaxPolicy, critic: &CriticTable) -> Result<Self> {
        check_dims(mdp, policy, critic)?;
        let gamma = mdp.gamma();
        let n_a = mdp.n_actions();
        let d = solve_stationary(mdp, policy)?.joint;
        let delta = residual(mdp, policy, critic);
        let upsilon = stationary_derivative(mdp, policy)?;
        let jac = policy.jacobian();

        // ∂θ(−D δ) with d = d_θ:  −(Υ_i ∘ δ + d ∘ ∂_i δ).
        let mut semi = frozen_cross_term(mdp, policy, critic, &d);
        for i in 0..policy.dim() {
            for j in 0..mdp.dim() {
                semi[(i, j)] -= upsilon[(i, j)] * delta[j];
            }
        }

        // ∂θ(−Ψ^T D δ) = γ (∂θΠ)^T P^T D δ + Ψ^T ∂θ(−D δ).
        let u = d.component_mul(&delta);
        let next_mass = broadcast_states(&mdp.transition().tr_mul(&u), n_a);
        let mut cross = DMatrix::zeros(policy.dim(), mdp.dim());
        for i in 0..policy.dim() {
            let semi_row = semi.row(i).transpose();
            let mut row = mdp.psi_transpose_apply(policy, &semi_row);
            for j in 0..mdp.dim() {
                row[j] += gamma * jac[(i, j)] * next_mass[j];
            }
            cross.set_row(i, &row.transpose());
        }

        let psi = mdp.psi(policy);
        let hessian = psi.tr_mul(&DMatrix::from_diagonal(&d)) * &psi;
        let dq_jpi = (1.0 - gamma) * policy.expect_transpose(mdp.init_dist());
        Ok(Self {
            cross_term: cross,
            semi_cross_term: semi,
            hessian,
            semi_hessian: d.clone(),
            dq_jpi,
            dq_jpi_semi: d,
            dtheta_jpi: grad_actor_o(mdp, policy, critic),
            eta: 0.0,
        })
    }
}

fn check_dims(mdp: &TabularMdp, policy: &SoftmaxPolicy, critic: &CriticTable) -> Result<()> {
    if (policy.n_states(), policy.n_actions()) != (mdp.n_states(), mdp.n_actions()) {
        return Err(Error::DimensionMismatch {
            expected: mdp.dim(),
            got: policy.dim(),
        });
    }
    if critic.values.len() != mdp.dim() {
        return Err(Error::DimensionMismatch {
            expected: mdp.dim(),
            got: critic.values.len(),
        });
    }
    Ok(())
}

fn check_support(values: &DVector<f64>) -> Result<()> {
    match values.iter().position(|&v| !(v > SUPPORT_THRESHOLD)) {
        Some(index) => Err(Error::MissingSupport {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

fn check_full_support(mdp: &TabularMdp, policy: &SoftmaxPolicy) -> Result<()> {
    check_support(mdp.init_dist())?;
    check_support(policy.probs())
}

/// `∂θ δ(sa) = γ Σ_s̃ P(s̃|sa) Σ_ã ∂θπ(s̃ã) q(s̃ã)`, stacked as
/// `−Δ(weights) ∂θδ` with the weights held fixed.
pub fn frozen_cross_term(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    critic: &CriticTable,
    weights: &DVector<f64>,
) -> DMatrix<f64> {
    let n_a = mdp.n_actions();
    let gamma = mdp.gamma();
    let q = &critic.values;
    let mut out = DMatrix::zeros(policy.dim(), mdp.dim());
    for s_next in 0..mdp.n_states() {
        let probs = policy.state_probs(s_next);
        let v: f64 = (0..n_a).map(|a| probs[a] * q[s_next * n_a + a]).sum();
        for b in 0..n_a {
            // ∂/∂θ(s̃,b) of Σ_ã π(s̃ã) q(s̃ã)
            let h = probs[b] * (q[s_next * n_a + b] - v);
            if h == 0.0 {
                continue;
            }
            let i = s_next * n_a + b;
            for j in 0..mdp.dim() {
                let p = mdp.transition()[(j, s_next)];
                if p != 0.0 {
                    out[(i, j)] -= weights[j] * gamma * p * h;
                }
            }
        }
    }
    out
}

/// Solves `H x = b` for a symmetric PSD Hessian: Cholesky when well
/// conditioned, least squares when the smallest eigenvalue is marginal, an
/// error when it is effectively singular.
pub fn solve_hessian(hessian: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let min_eigenvalue = hessian.clone().symmetric_eigenvalues().min();
    if !(min_eigenvalue >= SINGULAR_EIGENVALUE) {
        return Err(Error::NearSingularHessian { min_eigenvalue });
    }
    if min_eigenvalue >= LEAST_SQUARES_EIGENVALUE {
        if let Some(chol) = hessian.clone().cholesky() {
            return Ok(chol.solve(rhs));
        }
    }
    hessian
        .clone()
        .svd(true, true)
        .solve(rhs, 0.0)
        .map_err(|_| Error::Singular("Stackelberg Hessian"))
}

/// `∂θJπ − C (Ψ^T D Ψ)^{-1} (1−γ)Π^T μ0`, with the critic gradient taken
/// through both Ψ_θ and D_θ.
pub fn stackelberg_gradient_full(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    critic: &CriticTable,
) -> Result<DVector<f64>> {
    check_dims(mdp, policy, critic)?;
    check_full_support(mdp, policy)?;
    let terms = StackelbergTerms::compute(mdp, policy, critic)?;
    let x = solve_hessian(&terms.hessian, &terms.dq_jpi)?;
    Ok(&terms.dtheta_jpi - &terms.cross_term * x)
}

/// `∂θJπ − C^semi D_θ^{-1} d_θ`.
pub fn stackelberg_gradient_semi(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    critic: &CriticTable,
) -> Result<DVector<f64>> {
    check_dims(mdp, policy, critic)?;
    check_full_support(mdp, policy)?;
    let terms = StackelbergTerms::compute(mdp, policy, critic)?;
    check_support(&terms.semi_hessian)?;
    let x = terms.dq_jpi_semi.component_div(&terms.semi_hessian);
    Ok(&terms.dtheta_jpi - &terms.semi_cross_term * x)
}

/// `∂θJπ − C^semi (Δ(weights) + ηI)^{-1} d_θ`. The cross term and `d_θ` are
/// exact; only the semi-Hessian is replaced by the supplied weights.
pub fn stackelberg_gradient_regularized(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    critic: &CriticTable,
    eta: f64,
    weights: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dims(mdp, policy, critic)?;
    if weights.len() != mdp.dim() {
        return Err(Error::DimensionMismatch {
            expected: mdp.dim(),
            got: weights.len(),
        });
    }
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::InvalidEta("finite and nonnegative"));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidConfig("Hessian weights must be nonnegative".into()));
    }
    if eta == 0.0 && weights.iter().any(|&w| w <= 0.0) {
        return Err(Error::InvalidEta("positive when weights lack full support"));
    }
    let mut terms = StackelbergTerms::compute(mdp, policy, critic)?;
    terms.eta = eta;
    let x = DVector::from_fn(mdp.dim(), |j, _| terms.dq_jpi_semi[j] / (weights[j] + eta));
    Ok(&terms.dtheta_jpi - &terms.semi_cross_term * x)
}

/// Sample estimate of `∂θ∂q^semi Jq` that freezes the batch distribution:
/// column `(s,a)` accumulates `−w_k ∂θδ̂_k` over the transitions from
/// `(s,a)`, where `δ̂_k = r_k + γ Σ_ã π(s̃_k,ã) q(s̃_k,ã) − q(s_k,a_k)`.
/// The `∂θ d_θ` contribution is missing, so the estimate is biased.
pub fn stackelberg_cross_term_sampled(
    batch: &Batch,
    policy: &SoftmaxPolicy,
    critic: &CriticTable,
    gamma: f64,
) -> Result<DMatrix<f64>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n_a = policy.n_actions();
    let mut out = DMatrix::zeros(policy.dim(), policy.dim());
    for (t, w) in batch.iter() {
        let col = t.state * n_a + t.action;
        for_next_value_gradient(policy, critic, t.next_state, |i, g| {
            out[(i, col)] -= w * gamma * g;
        });
    }
    Ok(out)
}

/// `C̃ v` without materialising `C̃`.
pub fn sampled_cross_term_apply(
    batch: &Batch,
    policy: &SoftmaxPolicy,
    critic: &CriticTable,
    gamma: f64,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n_a = policy.n_actions();
    let mut out = DVector::zeros(policy.dim());
    for (t, w) in batch.iter() {
        let scale = w * gamma * v[t.state * n_a + t.action];
        if scale == 0.0 {
            continue;
        }
        for_next_value_gradient(policy, critic, t.next_state, |i, g| {
            out[i] -= scale * g;
        });
    }
    Ok(out)
}

/// Calls `f(i, ∂V(s̃)/∂θ_i)` for the nonzero block of `V(s̃) = Σ_ã π q`.
fn for_next_value_gradient(
    policy: &SoftmaxPolicy,
    critic: &CriticTable,
    s_next: usize,
    mut f: impl FnMut(usize, f64),
) {
    let n_a = policy.n_actions();
    let probs = policy.state_probs(s_next);
    let q = &critic.values.as_slice()[s_next * n_a..(s_next + 1) * n_a];
    let v: f64 = probs.iter().zip(q).map(|(p, x)| p * x).sum();
    for b in 0..n_a {
        f(s_next * n_a + b, probs[b] * (q[b] - v));
    }
}
