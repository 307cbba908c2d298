//! Reference computations that share no code with the closed forms they
//! check: truncated Neumann series for occupancies and Q-values, and central
//! finite differences over the logits.
//!
//! Everything here works directly from `P`, `r`, `μ0` and the policy's
//! probabilities with explicit loops.

use nalgebra::{DMatrix, DVector};

use crate::mdp::TabularMdp;
use crate::policy::{CriticTable, SoftmaxPolicy};

/// Central-difference step over the logits.
pub const FD_EPS: f64 = 1e-5;

/// Denominator floor for relative errors, so that near-zero references do
/// not turn rounding noise into large ratios.
pub const REL_FLOOR: f64 = 1e-3;

/// `‖a − b‖∞ / max(‖b‖∞, REL_FLOOR)`; `b` is the reference.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shapes must agree");
    (a - b).amax() / b.amax().max(REL_FLOOR)
}

pub fn relative_error_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    assert_eq!(a.len(), b.len(), "lengths must agree");
    (a - b).amax() / b.amax().max(REL_FLOOR)
}

/// Terms needed for `γ^k` to drop below `1e-17`.
fn series_terms(gamma: f64) -> usize {
    if gamma == 0.0 {
        1
    } else {
        ((1e-17f64).ln() / gamma.ln()).ceil() as usize + 1
    }
}

/// State-to-next-state mass under the policy, computed by summing
/// `π(a|s) P(s'|s,a)` explicitly.
fn next_state_mass(mdp: &TabularMdp, policy: &SoftmaxPolicy, rho: &[f64]) -> Vec<f64> {
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let p = mdp.transition();
    let mut out = vec![0.0; n_s];
    for s in 0..n_s {
        if rho[s] == 0.0 {
            continue;
        }
        for a in 0..n_a {
            let w = rho[s] * policy.prob(s, a);
            for (t, o) in out.iter_mut().enumerate() {
                *o += w * p[(s * n_a + a, t)];
            }
        }
    }
    out
}

/// `d_θ = (1−γ) Σ_k γ^k (state-action mass after k steps from μ0)`.
pub fn occupancy_series(mdp: &TabularMdp, policy: &SoftmaxPolicy) -> DVector<f64> {
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.gamma();
    let mut rho: Vec<f64> = mdp.init_dist().iter().copied().collect();
    let mut d = DVector::zeros(n_s * n_a);
    let mut discount = 1.0 - gamma;
    for _ in 0..series_terms(gamma) {
        for s in 0..n_s {
            for a in 0..n_a {
                d[s * n_a + a] += discount * rho[s] * policy.prob(s, a);
            }
        }
        rho = next_state_mass(mdp, policy, &rho);
        discount *= gamma;
    }
    d
}

/// `q_θ = Σ_k (γ P Π)^k r`.
pub fn q_series(mdp: &TabularMdp, policy: &SoftmaxPolicy) -> DVector<f64> {
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let p = mdp.transition();
    let gamma = mdp.gamma();
    let mut term = mdp.reward().clone();
    let mut q = term.clone();
    for _ in 1..series_terms(gamma) {
        let v: Vec<f64> = (0..n_s)
            .map(|s| (0..n_a).map(|a| policy.prob(s, a) * term[s * n_a + a]).sum())
            .collect();
        term = DVector::from_fn(n_s * n_a, |sa, _| {
            gamma * (0..n_s).map(|t| p[(sa, t)] * v[t]).sum::<f64>()
        });
        q += &term;
    }
    q
}

/// `J(θ) = d_θ^T r` from the series occupancy.
pub fn objective(mdp: &TabularMdp, policy: &SoftmaxPolicy) -> f64 {
    occupancy_series(mdp, policy).dot(mdp.reward())
}

/// `J_π = (1−γ) Σ_s μ0(s) Σ_a π(a|s) q(s,a)`.
pub fn actor_objective(mdp: &TabularMdp, policy: &SoftmaxPolicy, critic: &CriticTable) -> f64 {
    let n_a = mdp.n_actions();
    let mut total = 0.0;
    for (s, mu) in mdp.init_dist().iter().enumerate() {
        for a in 0..n_a {
            total += mu * policy.prob(s, a) * critic.values[s * n_a + a];
        }
    }
    (1.0 - mdp.gamma()) * total
}

/// `δ(sa) = r(sa) + γ Σ_t P(t|sa) Σ_b π(b|t) q(t,b) − q(sa)`.
pub fn residual(mdp: &TabularMdp, policy: &SoftmaxPolicy, critic: &CriticTable) -> DVector<f64> {
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let p = mdp.transition();
    let v: Vec<f64> = (0..n_s)
        .map(|t| (0..n_a).map(|b| policy.prob(t, b) * critic.values[t * n_a + b]).sum())
        .collect();
    DVector::from_fn(n_s * n_a, |sa, _| {
        let next: f64 = (0..n_s).map(|t| p[(sa, t)] * v[t]).sum();
        mdp.reward()[sa] + mdp.gamma() * next - critic.values[sa]
    })
}

/// Scalar gap `d_θ^T δ_{θ,φ}` with both θ-dependencies live.
pub fn scalar_gap(mdp: &TabularMdp, policy: &SoftmaxPolicy, critic: &CriticTable) -> f64 {
    occupancy_series(mdp, policy).dot(&residual(mdp, policy, critic))
}

fn bumped(policy: &SoftmaxPolicy, i: usize, h: f64) -> SoftmaxPolicy {
    let mut e = DVector::zeros(policy.dim());
    e[i] = h;
    policy.perturbed(&e)
}

/// Central differences of a scalar map over the logits.
pub fn fd_gradient(policy: &SoftmaxPolicy, f: impl Fn(&SoftmaxPolicy) -> f64) -> DVector<f64> {
    DVector::from_fn(policy.dim(), |i, _| {
        (f(&bumped(policy, i, FD_EPS)) - f(&bumped(policy, i, -FD_EPS))) / (2.0 * FD_EPS)
    })
}

/// Central differences of a vector map; row `i` is `∂/∂θ_i`, matching the
/// `dimθ × dim` layout of Υ.
pub fn fd_jacobian(policy: &SoftmaxPolicy, f: impl Fn(&SoftmaxPolicy) -> DVector<f64>) -> DMatrix<f64> {
    let rows: Vec<DVector<f64>> = (0..policy.dim())
        .map(|i| (f(&bumped(policy, i, FD_EPS)) - f(&bumped(policy, i, -FD_EPS))) / (2.0 * FD_EPS))
        .collect();
    let cols = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j])
}

/// Finite-difference Υ: derivative of the series occupancy.
pub fn upsilon_fd(mdp: &TabularMdp, policy: &SoftmaxPolicy) -> DMatrix<f64> {
    fd_jacobian(policy, |p| occupancy_series(mdp, p))
}
