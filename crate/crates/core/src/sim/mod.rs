//! Deterministic round-based orchestration.
//!
//! Each round: due faults are applied, the channel decides which edges carry
//! traffic, every microgrid advances its state-dissemination consensus by one
//! step, tertiary dispatch runs on demand events, primary droop settles the
//! lumped frequency, secondary control fires on its period, and finally the
//! feeder voltages are solved and a [`RoundRecord`] is appended.
//!
//! The secondary and tertiary layers run their epidemic protocols to
//! completion inside the round over the current topology (failed agents and
//! links removed); per-round random loss only affects the dissemination
//! consensus.

mod channel;
mod fault;
mod world;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario_io::{Scenario, ScenarioError};
use crate::topology::NodeId;

pub use channel::{deliver_round, ChannelModel, Delivery};
pub use fault::{FaultEvent, FaultKind};
pub use world::World;

/// Spread below which the dissemination consensus counts as converged.
pub const DISSEMINATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("scenario validation failed: {0}")]
    ValidationFailed(#[from] ScenarioError),
    #[error("unknown fault target: {0}")]
    UnknownTarget(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub meta: TraceMeta,
    pub records: Vec<RoundRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub nominal_frequency_hz: f64,
    pub voltage_band_pu: f64,
    pub frequency_band_hz: f64,
    pub consensus_tol: f64,
    pub microgrids: Vec<String>,
    pub faults: Vec<FaultEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub frequency_hz: f64,
    pub delta_f_hz: f64,
    /// Load could not be balanced inside the droop bracket.
    pub primary_saturated: bool,
    pub generation_cost: f64,
    pub nodes: Vec<NodeRecord>,
    pub microgrids: Vec<MicrogridRound>,
    pub active_faults: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub microgrid: String,
    pub node: NodeId,
    pub der_id: String,
    pub voltage_pu: f64,
    pub p_mw: f64,
    pub p_set_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicrogridRound {
    pub id: String,
    pub residual: f64,
    pub msgs_delivered: u64,
    pub msgs_lost: u64,
    pub secondary: Option<LayerOutcome>,
    pub tertiary: Option<LayerOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum LayerOutcome {
    Applied { changes: Vec<SetpointChange> },
    Skipped { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetpointChange {
    pub node: NodeId,
    pub before: f64,
    pub after: f64,
}

/// Runs a scenario from round 0 to `rounds − 1`.
pub fn run_scenario(scenario: &Scenario) -> Result<SimTrace, SimError> {
    scenario.validate()?;
    let mut world = World::new(scenario)?;
    let mut order: Vec<usize> = (0..scenario.faults.len()).collect();
    order.sort_by_key(|&k| scenario.faults[k].at_round);
    let mut pending = order.into_iter().peekable();
    let mut records = Vec::with_capacity(scenario.rounds as usize);
    for round in 0..scenario.rounds {
        let mut due = Vec::new();
        while let Some(&k) = pending.peek() {
            if scenario.faults[k].at_round != round {
                break;
            }
            due.push(&scenario.faults[k]);
            pending.next();
        }
        records.push(world.advance(round, &due)?);
    }
    Ok(SimTrace {
        meta: TraceMeta {
            nominal_frequency_hz: scenario.microgrids[0].nominal_frequency_hz,
            voltage_band_pu: scenario.limits.voltage_band_pu,
            frequency_band_hz: scenario.limits.frequency_band_hz,
            consensus_tol: DISSEMINATION_TOL,
            microgrids: scenario.microgrids.iter().map(|m| m.id.clone()).collect(),
            faults: scenario.faults.clone(),
        },
        records,
    })
}
