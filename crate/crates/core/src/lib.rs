//! Exact tabular laboratory for actor-critic versus policy-gradient methods.
//!
//! Everything is computed in closed matrix-vector form on dense tabular
//! MDPs: occupancy measures, Q-values, policy and actor gradients, the
//! corrections that turn actor-critic updates into exact policy gradients,
//! and Stackelberg (bilevel) gradients. On top sit dynamic-programming and
//! sample-based training agents, the FourRoom gridworld, a verification
//! harness and an experiment runner.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod batch;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod gradients;
pub mod mdp;
pub mod optim;
pub mod policy;
pub mod rng;
pub mod stackelberg;
pub mod trace;
pub mod verify;

pub use error::{Error, Result};
pub use mdp::{StationaryDistribution, TabularMdp};
pub use policy::{CriticTable, ResCriticTable, SoftmaxPolicy};
