//! Training agents: exact dynamic programming with the true model, and
//! sample-based actor-critic from simulated episodes.

pub mod dp;
pub mod sample;

pub use dp::{run_dp, DpActorRule, DpAgentConfig, DpCriticRule, ResCriticRule};
pub use sample::{run_sample_agent, SampleAgentConfig, SampleAlgorithm};
