//! Simulation and sensitivity analysis for stiff stochastic reaction
//! networks with fast and slow reactions.

pub mod batchmeans;
pub mod compare;
pub mod error;
pub mod likelihood;
pub mod models;
pub mod network;
pub mod oracle;
pub mod rng;
pub mod ssa;
pub mod twoscale;

pub use error::{Error, Result};
