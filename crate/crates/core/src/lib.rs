//! Distributed neural actor-critic for networked multi-agent reinforcement learning.

pub mod checkpoint;
pub mod comm;
pub mod config;
pub mod env;
pub mod harness;
pub mod learner;
pub mod neural;
pub mod oracle;
pub mod par;
