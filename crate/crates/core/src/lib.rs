//! Scenario-based underapproximation of the terminal-time stochastic
//! reach-avoid probability for linear systems with additive noise.
//!
//! The pipeline samples `K` disturbance trajectories, clusters their images
//! under the disturbance-to-state map into `K̂` Voronoi cells, tightens the
//! reach-avoid constraints of each cell representative by a buffer that covers
//! every cell member, and solves a small big-M MILP over the representatives.
//! Re-evaluating the resulting open-loop input on all `K` scenarios gives the
//! reported estimate, which is sandwiched between the partitioned optimum and
//! the full scenario optimum.

// index loops read more naturally in the dense kernels
#![allow(clippy::needless_range_loop)]

pub mod engine;
pub mod linops;
pub mod milp;
pub mod partition;
pub mod rendezvous;
pub mod scenarios;
pub mod sets;
pub mod system;

pub use linops::Matrix;
