use serde::{Deserialize, Serialize};

use super::dispatch::{centralized_dispatch_oracle, check_dispatchable};
use super::ControlError;
use crate::grid_model::{DerKind, DerSpec, Microgrid};
use crate::scalar::{self, clamp, Scalar};
use crate::topology::NodeId;

/// How a lower-level microgrid looks from the level above its PCC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingProfile<T = f64> {
    pub pcc_id: String,
    pub agg_p_min: T,
    pub agg_p_max: T,
    pub agg_cost_a: T,
    pub agg_cost_b: T,
    /// Combined droop response of the members, MW/Hz.
    pub agg_droop_gain: T,
    pub current_p: T,
}

impl<T: Scalar> CouplingProfile<T> {
    /// The profile as a single generator at `node` of the parent graph.
    pub fn as_der(&self, node: NodeId) -> DerSpec<T> {
        DerSpec {
            id: node,
            kind: DerKind::Generator,
            p_set: clamp(self.current_p, self.agg_p_min, self.agg_p_max),
            p_min: self.agg_p_min,
            p_max: self.agg_p_max,
            droop_gain: self.agg_droop_gain,
            q_droop_gain: T::zero(),
            cost_a: self.agg_cost_a,
            cost_b: self.agg_cost_b,
        }
    }
}

/// Horizontal sum of the members' affine marginal-cost curves:
/// `a = 1/Σ(1/a_i)`, `b = a·Σ(b_i/a_i)`, limits summed.
pub fn aggregate_microgrid<T: Scalar>(mg: &Microgrid<T>) -> Result<CouplingProfile<T>, ControlError> {
    let members = &mg.ders;
    if members.is_empty() {
        return Err(ControlError::InvalidParams(format!(
            "microgrid {} has no members to aggregate",
            mg.id
        )));
    }
    check_dispatchable(members)?;
    let inv_a = scalar::sum(members.iter().map(|d| T::one() / d.cost_a));
    let agg_cost_a = T::one() / inv_a;
    Ok(CouplingProfile {
        pcc_id: mg.id.clone(),
        agg_p_min: scalar::sum(members.iter().map(|d| d.p_min)),
        agg_p_max: scalar::sum(members.iter().map(|d| d.p_max)),
        agg_cost_a,
        agg_cost_b: agg_cost_a * scalar::sum(members.iter().map(|d| d.cost_b / d.cost_a)),
        agg_droop_gain: scalar::sum(members.iter().map(|d| d.droop_gain)),
        current_p: scalar::sum(members.iter().map(|d| d.p_set)),
    })
}

/// Splits a command at the PCC over the members at equal marginal cost.
pub fn disaggregate_setpoint<T: Scalar>(
    profile: &CouplingProfile<T>,
    members: &[DerSpec<T>],
    p_command: T,
) -> Result<Vec<T>, ControlError> {
    if p_command < profile.agg_p_min || p_command > profile.agg_p_max {
        let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
        return Err(ControlError::Infeasible {
            demand: f(p_command),
            min: f(profile.agg_p_min),
            max: f(profile.agg_p_max),
        });
    }
    Ok(centralized_dispatch_oracle(members, p_command)?.outputs)
}
