//! Hierarchical multi-agent reinforcement learning for proactive emergency
//! responder stationing.

pub mod agents;
pub mod baselines;
pub mod error;
pub mod features;
pub mod geo;
pub mod harness;
pub mod hierarchy;
pub mod nn;
pub mod optim;
pub mod scenarios;
pub mod sim;

pub use error::{Error, Result};
