//! Safe online POMDP planning among dynamic agents.
//!
//! Trajectory predictions for the agents are wrapped in adaptive conformal
//! prediction regions ([`acp`]). The regions mark grid states as unsafe. A
//! shield built from the winning regions of a belief-support transition
//! system ([`shield`]) then prunes actions inside a POMCP planner
//! ([`planner`]). The [`harness`] module runs episodes and benchmarks on the
//! [`gridworld`] environment.

pub mod pomdp;
pub mod geom;
pub mod gridworld;
pub mod trajectory;
pub mod acp;
pub mod shield;
pub mod planner;
pub mod harness;
