//! Environments: the FourRoom gridworld, seeded random MDPs, and a sampler
//! that rolls out any [`TabularMdp`](crate::mdp::TabularMdp).

mod fourroom;
mod random;
mod simulator;

pub use fourroom::{Action, FourRoomSpec, CLASSIC_LAYOUT, MAX_GRID_CELLS};
pub use random::{random_critic, random_mdp, random_policy};
pub use simulator::Simulator;

use crate::error::Result;
use crate::mdp::TabularMdp;

/// Builds the tabular MDP for a FourRoom spec.
pub fn fourroom_mdp(spec: &FourRoomSpec) -> Result<TabularMdp> {
    spec.to_mdp()
}
