//! Tabular softmax actor and lookup-table critics.
//!
//! All state-action vectors use the flat index `s * n_actions + a`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Per-state softmax policy over tabular logits.
///
/// The probabilities are cached and recomputed whenever the logits change.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    n_states: usize,
    n_actions: usize,
    logits: DVector<f64>,
    probs: DVector<f64>,
}

impl SoftmaxPolicy {
    pub fn new(n_states: usize, n_actions: usize, logits: DVector<f64>) -> Result<Self> {
        if logits.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch {
                expected: n_states * n_actions,
                got: logits.len(),
            });
        }
        let probs = softmax_blocks(&logits, n_actions);
        Ok(Self {
            n_states,
            n_actions,
            logits,
            probs,
        })
    }

    /// All-zero logits, i.e. the uniform policy.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self::new(
            n_states,
            n_actions,
            DVector::zeros(n_states * n_actions),
        )
        .expect("dimensions agree by construction")
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn dim(&self) -> usize {
        self.logits.len()
    }

    pub fn logits(&self) -> &DVector<f64> {
        &self.logits
    }

    pub fn probs(&self) -> &DVector<f64> {
        &self.probs
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn state_probs(&self, s: usize) -> &[f64] {
        let start = s * self.n_actions;
        &self.probs.as_slice()[start..start + self.n_actions]
    }

    pub fn set_logits(&mut self, logits: DVector<f64>) -> Result<()> {
        if logits.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: logits.len(),
            });
        }
        self.probs = softmax_blocks(&logits, self.n_actions);
        self.logits = logits;
        Ok(())
    }

    /// Returns a copy with logits `θ + step`.
    pub fn perturbed(&self, step: &DVector<f64>) -> Self {
        Self::new(self.n_states, self.n_actions, &self.logits + step)
            .expect("perturbation has matching dimension")
    }

    /// Expanded block matrix Π (S × SA): row `s` holds π(s,·) in block `s`.
    pub fn expansion(&self) -> DMatrix<f64> {
        let a_n = self.n_actions;
        DMatrix::from_fn(self.n_states, self.dim(), |s, j| {
            if j / a_n == s {
                self.probs[j]
            } else {
                0.0
            }
        })
    }

    /// Softmax Jacobian H (dim θ × SA), `H[i, sa] = ∂π(sa)/∂θ_i`.
    pub fn jacobian(&self) -> DMatrix<f64> {
        let a_n = self.n_actions;
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            if i / a_n != j / a_n {
                return 0.0;
            }
            let p_j = self.probs[j];
            let indicator = if i == j { 1.0 } else { 0.0 };
            p_j * (indicator - self.probs[i])
        })
    }

    /// Π x: per-state expectation of a state-action vector.
    pub fn expect(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n_states, |s, _| {
            let base = s * self.n_actions;
            (0..self.n_actions)
                .map(|a| self.probs[base + a] * x[base + a])
                .sum()
        })
    }

    /// Π^T v: spreads a state vector over actions, weighted by π.
    pub fn expect_transpose(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |j, _| self.probs[j] * v[j / self.n_actions])
    }

    /// H Δ(Ξ^T w) x without materialising H.
    ///
    /// Entry `(s,b)` is `w(s) π(s,b) (x(s,b) − Σ_a π(s,a) x(s,a))`. Every
    /// actor-style gradient in the crate is this product with a different
    /// state weighting `w`.
    pub fn weighted_jacobian_apply(
        &self,
        state_weights: &DVector<f64>,
        x: &DVector<f64>,
    ) -> DVector<f64> {
        let a_n = self.n_actions;
        let mut out = DVector::zeros(self.dim());
        for s in 0..self.n_states {
            let base = s * a_n;
            let mean: f64 = (0..a_n).map(|a| self.probs[base + a] * x[base + a]).sum();
            for b in 0..a_n {
                out[base + b] = state_weights[s] * self.probs[base + b] * (x[base + b] - mean);
            }
        }
        out
    }

    /// ∇θ log π(a|s), which is supported on state `s`'s logit block only.
    pub fn grad_log_prob_into(&self, s: usize, a: usize, scale: f64, out: &mut DVector<f64>) {
        let base = s * self.n_actions;
        for b in 0..self.n_actions {
            let indicator = if a == b { 1.0 } else { 0.0 };
            out[base + b] += scale * (indicator - self.probs[base + b]);
        }
    }

    /// Log-probability of `a` in state `s`, computed from logits directly.
    pub fn log_prob(&self, s: usize, a: usize) -> f64 {
        let base = s * self.n_actions;
        let block = &self.logits.as_slice()[base..base + self.n_actions];
        let max = block.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + block.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        block[a] - lse
    }

    /// Inverse-CDF action draw from `π(·|s)` given a uniform `u ∈ [0,1)`.
    pub fn sample_action(&self, s: usize, u: f64) -> usize {
        let probs = self.state_probs(s);
        let mut acc = 0.0;
        for (a, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        probs.len() - 1
    }
}

fn softmax_blocks(logits: &DVector<f64>, n_actions: usize) -> DVector<f64> {
    let mut probs = DVector::zeros(logits.len());
    for (block_in, block_out) in logits
        .as_slice()
        .chunks(n_actions)
        .zip(probs.as_mut_slice().chunks_mut(n_actions))
    {
        let max = block_in.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (o, l) in block_out.iter_mut().zip(block_in) {
            *o = (l - max).exp();
            total += *o;
        }
        for o in block_out.iter_mut() {
            *o /= total;
        }
    }
    probs
}

/// Directly parametrised critic table q_φ = φ.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticTable {
    pub values: DVector<f64>,
}

impl CriticTable {
    pub fn new(values: DVector<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(DVector::zeros(dim))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Residual critic table w_ψ = ψ: the value of the critic's residual treated
/// as a reward.
#[derive(Debug, Clone, PartialEq)]
pub struct ResCriticTable {
    pub values: DVector<f64>,
}

impl ResCriticTable {
    pub fn new(values: DVector<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(DVector::zeros(dim))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy() -> SoftmaxPolicy {
        SoftmaxPolicy::new(
            2,
            3,
            DVector::from_vec(vec![0.3, -1.2, 2.0, 0.0, 0.5, -0.5]),
        )
        .unwrap()
    }

    #[test]
    fn probabilities_normalised_and_positive() {
        let p = policy();
        for s in 0..2 {
            let total: f64 = p.state_probs(s).iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(p.state_probs(s).iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let p = SoftmaxPolicy::new(1, 2, DVector::from_vec(vec![1000.0, -1000.0])).unwrap();
        assert!(p.probs().iter().all(|x| x.is_finite()));
        assert!((p.prob(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn expansion_is_block_diagonal() {
        let p = policy();
        let pi = p.expansion();
        assert_eq!(pi.shape(), (2, 6));
        assert_eq!(pi[(0, 4)], 0.0);
        assert_eq!(pi[(1, 1)], 0.0);
        assert_eq!(pi[(1, 4)], p.prob(1, 1));
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let p = policy();
        let h = p.jacobian();
        let eps = 1e-6;
        for i in 0..p.dim() {
            let mut e = DVector::zeros(p.dim());
            e[i] = eps;
            let plus = p.perturbed(&e);
            let minus = p.perturbed(&(-e));
            for j in 0..p.dim() {
                let fd = (plus.probs()[j] - minus.probs()[j]) / (2.0 * eps);
                let rel = (fd - h[(i, j)]).abs() / h[(i, j)].abs().max(1e-3);
                assert!(rel < 1e-5, "H[{i},{j}] = {} vs fd {fd}", h[(i, j)]);
            }
        }
    }

    #[test]
    fn weighted_apply_matches_dense_product() {
        let p = policy();
        let w = DVector::from_vec(vec![0.7, 0.2]);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0, 0.1, -0.4]);
        let spread = DVector::from_fn(6, |j, _| w[j / 3]);
        let dense = p.jacobian() * DMatrix::from_diagonal(&spread) * &x;
        let fast = p.weighted_jacobian_apply(&w, &x);
        assert!((dense - fast).amax() < 1e-14);
    }

    #[test]
    fn grad_log_prob_matches_log_prob_differences() {
        let p = policy();
        let eps = 1e-6;
        let mut g = DVector::zeros(6);
        p.grad_log_prob_into(1, 2, 1.0, &mut g);
        for i in 0..6 {
            let mut e = DVector::zeros(6);
            e[i] = eps;
            let fd = (p.perturbed(&e).log_prob(1, 2) - p.perturbed(&(-e)).log_prob(1, 2)) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn wrong_dimension_rejected() {
        assert!(SoftmaxPolicy::new(2, 2, DVector::zeros(3)).is_err());
    }
}
