//! Primary/secondary/tertiary control on top of the epidemic primitives,
//! plus coupling agents between microgrid levels.
//!
//! Primary control is the droop law in [`crate::grid_model`]; this module adds
//! the communicating layers. The centralized dispatch oracle lives here too,
//! as the correctness baseline for the distributed tertiary layer.

mod coupling;
mod dispatch;
mod secondary;
mod tertiary;

use thiserror::Error;

use crate::epidemic::EpidemicError;
use crate::grid_model::GridError;
use crate::topology::NodeId;

pub use coupling::{aggregate_microgrid, disaggregate_setpoint, CouplingProfile};
pub use dispatch::{centralized_dispatch_oracle, implied_output, DispatchSolution};
pub use secondary::{apply_corrections, secondary_update, SecondaryParams, SetpointCorrection};
pub use tertiary::{
    default_step_size, run_tertiary, tertiary_dispatch_step, TertiaryParams, TertiaryReport,
    TertiaryState,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("communication graph is not connected")]
    NotConnected,
    #[error("DER {0} is not dispatchable")]
    NotDispatchable(NodeId),
    #[error("demand {demand} MW outside [{min}, {max}] MW")]
    Infeasible { demand: f64, min: f64, max: f64 },
    #[error("consensus did not converge (residual {residual})")]
    NotConverged { residual: f64 },
    #[error("invalid control parameters: {0}")]
    InvalidParams(String),
    #[error("{0} agents for {1} live nodes")]
    DimensionMismatch(usize, usize),
    #[error(transparent)]
    Epidemic(EpidemicError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

impl From<EpidemicError> for ControlError {
    fn from(err: EpidemicError) -> Self {
        match err {
            EpidemicError::NotConnected => ControlError::NotConnected,
            other => ControlError::Epidemic(other),
        }
    }
}
