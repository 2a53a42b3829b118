use serde::{Deserialize, Serialize};

use super::ControlError;
use crate::grid_model::DerSpec;
use crate::scalar::{self, clamp, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSolution<T = f64> {
    /// MW per agent, in input order.
    pub outputs: Vec<T>,
    /// Common marginal cost, currency/MW.
    pub lambda: T,
}

/// Output at which `agent` runs for marginal cost `lambda`, clamped to its limits.
pub fn implied_output<T: Scalar>(agent: &DerSpec<T>, lambda: T) -> T {
    clamp((lambda - agent.cost_b) / agent.cost_a, agent.p_min, agent.p_max)
}

fn total_output<T: Scalar>(agents: &[DerSpec<T>], lambda: T) -> T {
    scalar::sum(agents.iter().map(|a| implied_output(a, lambda)))
}

pub(crate) fn check_dispatchable<T: Scalar>(agents: &[DerSpec<T>]) -> Result<(), ControlError> {
    match agents.iter().find(|a| !a.is_dispatchable() || !(a.cost_a > T::zero())) {
        Some(a) => Err(ControlError::NotDispatchable(a.id)),
        None => Ok(()),
    }
}

pub(crate) fn check_feasible<T: Scalar>(agents: &[DerSpec<T>], demand: T) -> Result<(), ControlError> {
    let min = scalar::sum(agents.iter().map(|a| a.p_min));
    let max = scalar::sum(agents.iter().map(|a| a.p_max));
    if demand < min || demand > max || agents.is_empty() {
        let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
        return Err(ControlError::Infeasible {
            demand: f(demand),
            min: f(min),
            max: f(max),
        });
    }
    Ok(())
}

/// Exact equal-marginal-cost dispatch with every agent's view of the system.
///
/// `λ ↦ Σ clamp((λ − b_i)/a_i)` is monotone, so `λ` is bracketed by the
/// marginal costs at the limits and bisected; the result is then polished in
/// closed form over the agents that are not at a limit.
pub fn centralized_dispatch_oracle<T: Scalar>(
    agents: &[DerSpec<T>],
    demand: T,
) -> Result<DispatchSolution<T>, ControlError> {
    check_dispatchable(agents)?;
    check_feasible(agents, demand)?;
    let mut lo = agents
        .iter()
        .map(|a| a.cost_a * a.p_min + a.cost_b)
        .fold(T::infinity(), T::min);
    let mut hi = agents
        .iter()
        .map(|a| a.cost_a * a.p_max + a.cost_b)
        .fold(T::neg_infinity(), T::max);
    let tol = T::of(1e-12);
    for _ in 0..200 {
        let mid = (lo + hi) * T::of(0.5);
        if mid <= lo || mid >= hi {
            break;
        }
        let total = total_output(agents, mid);
        if (total - demand).abs() <= tol {
            lo = mid;
            hi = mid;
            break;
        }
        if total < demand {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = (lo + hi) * T::of(0.5);

    let mut inv_a = T::zero();
    let mut numerator = demand;
    for a in agents {
        let p = implied_output(a, mid);
        if p > a.p_min && p < a.p_max {
            inv_a += T::one() / a.cost_a;
            numerator += a.cost_b / a.cost_a;
        } else {
            numerator -= p;
        }
    }
    let mut lambda = mid;
    if inv_a > T::zero() {
        let candidate = numerator / inv_a;
        let err = |l: T| (total_output(agents, l) - demand).abs();
        if candidate.is_finite() && err(candidate) <= err(mid) {
            lambda = candidate;
        }
    }
    Ok(DispatchSolution {
        outputs: agents.iter().map(|a| implied_output(a, lambda)).collect(),
        lambda,
    })
}
