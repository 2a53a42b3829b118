use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dispatch::{check_dispatchable, check_feasible, implied_output};
use super::ControlError;
use crate::epidemic::{consensus_step, run_push_sum, ConsensusState};
use crate::grid_model::DerSpec;
use crate::scalar::{self, Scalar};
use crate::topology::CommGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct TertiaryParams<T = f64> {
    /// Gradient step on `λ`; `None` uses [`default_step_size`].
    pub step_size: Option<T>,
    /// Fixed point reached once both the `λ` spread and every mismatch
    /// estimate are within this tolerance.
    pub tol: T,
    pub max_iterations: u64,
    pub push_sum_tol: T,
    pub push_sum_max_rounds: u64,
}

impl<T: Scalar> Default for TertiaryParams<T> {
    fn default() -> Self {
        TertiaryParams {
            step_size: None,
            tol: T::of(1e-9),
            max_iterations: 50_000,
            push_sum_tol: T::of(1e-11),
            push_sum_max_rounds: 100_000,
        }
    }
}

impl<T: Scalar> TertiaryParams<T> {
    pub fn validate(&self) -> Result<(), ControlError> {
        if let Some(s) = self.step_size {
            if !(s > T::zero()) {
                return Err(ControlError::InvalidParams("step_size must be positive".into()));
            }
        }
        if !(self.tol > T::zero() && self.push_sum_tol > T::zero()) {
            return Err(ControlError::InvalidParams("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Per-agent marginal-cost and mismatch estimates, aligned with the live
/// nodes of the graph the dispatch runs on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TertiaryState<T = f64> {
    pub lambda_estimates: Vec<T>,
    pub mismatch_estimate: Vec<T>,
    pub step_size: T,
}

impl<T: Scalar> TertiaryState<T> {
    /// Every agent starts from its own marginal cost at its current setpoint.
    pub fn initial(agents: &[DerSpec<T>], step_size: T) -> Self {
        TertiaryState {
            lambda_estimates: agents
                .iter()
                .map(|a| a.cost_a * a.p_set + a.cost_b)
                .collect(),
            mismatch_estimate: vec![T::zero(); agents.len()],
            step_size,
        }
    }

    /// Output each agent runs at for its current `λ` estimate.
    pub fn dispatch(&self, agents: &[DerSpec<T>]) -> Vec<T> {
        agents
            .iter()
            .zip(&self.lambda_estimates)
            .map(|(a, &l)| implied_output(a, l))
            .collect()
    }
}

/// `0.5 / Σ(1/a_i)`: half the Newton step on the unclamped marginal-cost curve.
pub fn default_step_size<T: Scalar>(agents: &[DerSpec<T>]) -> T {
    T::of(0.5) / scalar::sum(agents.iter().map(|a| T::one() / a.cost_a))
}

fn check_alignment<T: Scalar>(agents: &[DerSpec<T>], graph: &CommGraph<T>, state: &TertiaryState<T>) -> Result<(), ControlError> {
    let live = graph.live_count();
    if agents.len() != live
        || !agents.iter().map(|a| a.id).eq(graph.live_nodes())
        || state.lambda_estimates.len() != live
        || state.mismatch_estimate.len() != live
    {
        return Err(ControlError::DimensionMismatch(agents.len(), live));
    }
    Ok(())
}

/// One outer iteration of the consensus-based economic dispatch:
///
/// 1. one consensus round over the `λ` estimates;
/// 2. each agent's implied output `clamp((λ_i − b_i)/a_i)`;
/// 3. push-sum over the local terms `demand/n − p_i`, so that `n` times each
///    estimate is that agent's view of the global mismatch;
/// 4. `λ_i += step_size · mismatch_i`.
///
/// `agents[k]` is the DER at the `k`-th live node of `graph`.
pub fn tertiary_dispatch_step<T: Scalar, R: Rng + ?Sized>(
    agents: &[DerSpec<T>],
    graph: &CommGraph<T>,
    demand: T,
    state: &TertiaryState<T>,
    params: &TertiaryParams<T>,
    rng: &mut R,
) -> Result<TertiaryState<T>, ControlError> {
    check_dispatchable(agents)?;
    check_alignment(agents, graph, state)?;
    if !graph.is_connected() {
        return Err(ControlError::NotConnected);
    }
    let lambdas = ConsensusState::for_graph(graph, state.lambda_estimates.clone())?;
    let lambdas = consensus_step(&lambdas, graph)?.values().to_vec();

    let n = T::of_usize(agents.len());
    let share = demand / n;
    let local: Vec<T> = agents
        .iter()
        .zip(&lambdas)
        .map(|(a, &l)| share - implied_output(a, l))
        .collect();
    let (push, _) = run_push_sum(
        &local,
        graph,
        params.push_sum_tol,
        params.push_sum_max_rounds,
        rng,
    )?;
    let mismatch: Vec<T> = push.estimates().into_iter().map(|e| e * n).collect();

    Ok(TertiaryState {
        lambda_estimates: lambdas
            .iter()
            .zip(&mismatch)
            .map(|(&l, &m)| l + state.step_size * m)
            .collect(),
        mismatch_estimate: mismatch,
        step_size: state.step_size,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TertiaryReport<T = f64> {
    pub converged: bool,
    pub iterations: u64,
    pub lambda_spread: T,
    pub max_abs_mismatch: T,
}

/// Iterates [`tertiary_dispatch_step`] until the fixed point: equal `λ` and
/// zero estimated mismatch, both to `params.tol`.
pub fn run_tertiary<T: Scalar, R: Rng + ?Sized>(
    agents: &[DerSpec<T>],
    graph: &CommGraph<T>,
    demand: T,
    params: &TertiaryParams<T>,
    initial: Option<TertiaryState<T>>,
    rng: &mut R,
) -> Result<(TertiaryState<T>, TertiaryReport<T>), ControlError> {
    params.validate()?;
    check_dispatchable(agents)?;
    check_feasible(agents, demand)?;
    let step = params.step_size.unwrap_or_else(|| default_step_size(agents));
    let mut state = initial.unwrap_or_else(|| TertiaryState::initial(agents, step));
    check_alignment(agents, graph, &state)?;
    let mut iterations = 0;
    loop {
        state = tertiary_dispatch_step(agents, graph, demand, &state, params, rng)?;
        iterations += 1;
        let spread = scalar::spread(&state.lambda_estimates);
        let mismatch = state
            .mismatch_estimate
            .iter()
            .fold(T::zero(), |m, v| m.max(v.abs()));
        let converged = spread <= params.tol && mismatch <= params.tol;
        if converged || iterations >= params.max_iterations {
            return Ok((
                state,
                TertiaryReport {
                    converged,
                    iterations,
                    lambda_spread: spread,
                    max_abs_mismatch: mismatch,
                },
            ));
        }
    }
}
