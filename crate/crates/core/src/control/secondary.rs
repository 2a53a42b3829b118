use serde::{Deserialize, Serialize};

use super::ControlError;
use crate::epidemic::{run_consensus_from, ConsensusState};
use crate::grid_model::{DerSpec, Microgrid};
use crate::scalar::{clamp, Scalar};
use crate::topology::{CommGraph, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct SecondaryParams<T = f64> {
    /// Simulation rounds between activations.
    pub period_rounds: u64,
    /// Fraction of the measured deviation removed per activation, in (0, 1].
    pub gain: T,
    #[serde(default = "default_consensus_tol")]
    pub consensus_tol: T,
    #[serde(default = "default_consensus_max_rounds")]
    pub consensus_max_rounds: u64,
}

fn default_consensus_tol<T: Scalar>() -> T {
    T::of(1e-12)
}

fn default_consensus_max_rounds() -> u64 {
    100_000
}

impl<T: Scalar> SecondaryParams<T> {
    pub fn validate(&self) -> Result<(), ControlError> {
        if self.period_rounds == 0 {
            return Err(ControlError::InvalidParams("period_rounds must be >= 1".into()));
        }
        if !(self.gain > T::zero() && self.gain <= T::one()) {
            return Err(ControlError::InvalidParams("gain must lie in (0, 1]".into()));
        }
        if !(self.consensus_tol > T::zero()) {
            return Err(ControlError::InvalidParams("consensus_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetpointCorrection<T = f64> {
    pub der: NodeId,
    pub delta_mw: T,
}

/// One secondary activation.
///
/// Agents agree on the average measured deviation `Δf̄` by consensus over
/// `graph` (one entry of `measured_delta_f` per live node); each live
/// dispatchable DER then shifts its setpoint by `−gain · droop_gain · Δf̄`,
/// using its own converged estimate.
pub fn secondary_update<T: Scalar>(
    mg: &Microgrid<T>,
    graph: &CommGraph<T>,
    params: &SecondaryParams<T>,
    measured_delta_f: &[T],
) -> Result<Vec<SetpointCorrection<T>>, ControlError> {
    params.validate()?;
    let state = ConsensusState::for_graph(graph, measured_delta_f.to_vec())?;
    let (state, report) = run_consensus_from(
        state,
        graph,
        params.consensus_tol,
        params.consensus_max_rounds,
    )?;
    if !report.converged {
        return Err(ControlError::NotConverged {
            residual: report.final_residual.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(mg
        .ders
        .iter()
        .filter(|d| d.is_dispatchable())
        .filter_map(|d| {
            let avg = state.value_of(d.id)?;
            Some(SetpointCorrection {
                der: d.id,
                delta_mw: -params.gain * d.droop_gain * avg,
            })
        })
        .collect())
}

/// Applies corrections to matching DERs, keeping `p_set` within limits.
pub fn apply_corrections<T: Scalar>(ders: &mut [DerSpec<T>], corrections: &[SetpointCorrection<T>]) {
    for c in corrections {
        if let Some(d) = ders.iter_mut().find(|d| d.id == c.der) {
            d.p_set = clamp(d.p_set + c.delta_mw, d.p_min, d.p_max);
        }
    }
}
