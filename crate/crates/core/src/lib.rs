//! Deterministic simulator for peer-to-peer microgrid control.
//!
//! Agents share information through epidemic protocols (average consensus
//! and push-sum) over a communication graph. On top of that sit three control
//! layers: primary droop, consensus-based secondary frequency restoration and
//! tertiary economic dispatch, with coupling agents linking microgrid levels.
//!
//! The numerical modules are generic over [`scalar::Scalar`]; the aliases
//! below fix them to `f64`, which the simulator and scenario files use.

// `!(x > 0)` also rejects NaN, which `x <= 0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod control;
pub mod epidemic;
pub mod grid_model;
pub mod scalar;
pub mod scenario_io;
pub mod sim;
pub mod topology;

pub use scalar::Scalar;
pub use topology::NodeId;

pub type Graph = topology::CommGraph<f64>;
pub type Consensus = epidemic::ConsensusState<f64>;
pub type PushSum = epidemic::PushSumState<f64>;
pub type Der = grid_model::DerSpec<f64>;
pub type Feeder = grid_model::FeederModel<f64>;
pub type Grid = grid_model::Microgrid<f64>;
