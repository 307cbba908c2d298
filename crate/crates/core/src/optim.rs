//! First-order optimizers: Adam with bias correction and plain SGD.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Ascend,
    Descend,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Ascend => 1.0,
            Direction::Descend => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: DVector<f64>,
    pub second_moment: DVector<f64>,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Zero moments with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(dim: usize, alpha: f64) -> Self {
        Self {
            step_count: 0,
            first_moment: DVector::zeros(dim),
            second_moment: DVector::zeros(dim),
            alpha,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam step, in place.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut DVector<f64>,
    gradient: &DVector<f64>,
    direction: Direction,
) -> Result<()> {
    let n = state.first_moment.len();
    for len in [params.len(), gradient.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, got: len });
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let sign = direction.sign();
    for i in 0..n {
        let g = gradient[i];
        let m = b1 * state.first_moment[i] + (1.0 - b1) * g;
        let v = b2 * state.second_moment[i] + (1.0 - b2) * g * g;
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        let m_hat = m / c1;
        let v_hat = v / c2;
        params[i] += sign * state.alpha * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Either optimizer behind one interface; agents hold one per parameter
/// vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd { alpha: f64 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, dim: usize, alpha: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(dim, alpha)),
            OptimizerKind::Sgd => Optimizer::Sgd { alpha },
        }
    }

    pub fn step(
        &mut self,
        params: &mut DVector<f64>,
        gradient: &DVector<f64>,
        direction: Direction,
    ) -> Result<()> {
        match self {
            Optimizer::Adam(state) => adam_step(state, params, gradient, direction),
            Optimizer::Sgd { alpha } => {
                if params.len() != gradient.len() {
                    return Err(Error::DimensionMismatch {
                        expected: params.len(),
                        got: gradient.len(),
                    });
                }
                params.axpy(direction.sign() * *alpha, gradient, 1.0);
                Ok(())
            }
        }
    }
}
