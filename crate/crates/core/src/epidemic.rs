//! Average consensus and push-sum gossip over a [`CommGraph`].
//!
//! Both protocols run in synchronous rounds. States carry the list of live
//! nodes they were built for, and every operation checks it against the graph
//! it is stepped on, so a state can never silently outlive a topology change.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{self, Scalar};
use crate::topology::{CommGraph, NodeId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EpidemicError {
    #[error("state covers {found} nodes but the graph has {expected} live nodes")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("communication graph is not connected")]
    NotConnected,
    #[error("tolerance must be positive")]
    InvalidTolerance,
    #[error("push-sum weight of node {0} is not positive")]
    NonPositiveWeight(NodeId),
}

/// Per-agent values `x_i[k]` and the round counter `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusState<T = f64> {
    nodes: Vec<NodeId>,
    values: Vec<T>,
    round: u64,
    initial_sum: T,
}

impl<T: Scalar> ConsensusState<T> {
    /// Initial state `x_i = z_i` for nodes `0..values.len()`.
    pub fn new(values: Vec<T>) -> Self {
        let nodes = (0..values.len()).map(NodeId).collect();
        Self::from_parts(nodes, values)
    }

    /// Initial state aligned with the live nodes of `graph`.
    pub fn for_graph(graph: &CommGraph<T>, values: Vec<T>) -> Result<Self, EpidemicError> {
        let nodes: Vec<NodeId> = graph.live_nodes().collect();
        if nodes.len() != values.len() {
            return Err(EpidemicError::DimensionMismatch {
                expected: nodes.len(),
                found: values.len(),
            });
        }
        Ok(Self::from_parts(nodes, values))
    }

    fn from_parts(nodes: Vec<NodeId>, values: Vec<T>) -> Self {
        let initial_sum = scalar::sum(values.iter().copied());
        ConsensusState {
            nodes,
            values,
            round: 0,
            initial_sum,
        }
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn initial_sum(&self) -> T {
        self.initial_sum
    }

    pub fn sum(&self) -> T {
        scalar::sum(self.values.iter().copied())
    }

    pub fn value_of(&self, node: NodeId) -> Option<T> {
        self.nodes
            .binary_search(&node)
            .ok()
            .map(|pos| self.values[pos])
    }

    /// Drops `node` and rebases `initial_sum` onto the survivors' current sum.
    pub fn without(&self, node: NodeId) -> Self {
        let mut next = self.clone();
        if let Ok(pos) = next.nodes.binary_search(&node) {
            next.nodes.remove(pos);
            next.values.remove(pos);
        }
        next.initial_sum = next.sum();
        next
    }

    /// Inserts `node` with `value`, rebasing `initial_sum` like [`Self::without`].
    pub fn with(&self, node: NodeId, value: T) -> Self {
        let mut next = self.clone();
        match next.nodes.binary_search(&node) {
            Ok(pos) => next.values[pos] = value,
            Err(pos) => {
                next.nodes.insert(pos, node);
                next.values.insert(pos, value);
            }
        }
        next.initial_sum = next.sum();
        next
    }
}

fn check_alignment<T: Scalar>(nodes: &[NodeId], graph: &CommGraph<T>) -> Result<(), EpidemicError> {
    let expected = graph.live_count();
    if nodes.len() != expected || !nodes.iter().copied().eq(graph.live_nodes()) {
        return Err(EpidemicError::DimensionMismatch {
            expected,
            found: nodes.len(),
        });
    }
    Ok(())
}

fn position_index(nodes: &[NodeId], node_count: usize) -> Vec<Option<usize>> {
    let mut index = vec![None; node_count];
    for (pos, n) in nodes.iter().enumerate() {
        index[n.0] = Some(pos);
    }
    index
}

/// One synchronous round of `x_i += ε · Σ_j a_ij (x_j − x_i)`.
pub fn consensus_step<T: Scalar>(
    state: &ConsensusState<T>,
    graph: &CommGraph<T>,
) -> Result<ConsensusState<T>, EpidemicError> {
    consensus_step_with(state, graph, |_, _, x_j| Some(x_j))
}

/// Consensus round where node `i` sees neighbour `j` through `view`.
///
/// `view(i, j, x_j)` returns the value `i` uses for `j` this round, or `None`
/// to leave the term out. Returning the current `x_j` for every pair gives
/// [`consensus_step`]; the simulator uses it for lost and delayed messages.
pub fn consensus_step_with<T: Scalar>(
    state: &ConsensusState<T>,
    graph: &CommGraph<T>,
    mut view: impl FnMut(NodeId, NodeId, T) -> Option<T>,
) -> Result<ConsensusState<T>, EpidemicError> {
    check_alignment(&state.nodes, graph)?;
    let index = position_index(&state.nodes, graph.node_count());
    let eps = graph.epsilon();
    let mut next = state.values.clone();
    for (pos, &i) in state.nodes.iter().enumerate() {
        let x_i = state.values[pos];
        let mut acc = T::zero();
        for &j in graph.neighbors(i).expect("aligned state") {
            let x_j = state.values[index[j.0].expect("neighbor is live")];
            if let Some(seen) = view(i, j, x_j) {
                acc += seen - x_i;
            }
        }
        next[pos] = x_i + eps * acc;
    }
    Ok(ConsensusState {
        nodes: state.nodes.clone(),
        values: next,
        round: state.round + 1,
        initial_sum: state.initial_sum,
    })
}

/// Spread `max_i x_i − min_i x_i`; zero exactly at consensus.
pub fn consensus_residual<T: Scalar>(state: &ConsensusState<T>) -> T {
    scalar::spread(&state.values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport<T = f64> {
    pub converged: bool,
    pub rounds_used: u64,
    pub final_residual: T,
    /// Agreed value; only set when `converged`.
    pub consensus_value: Option<T>,
    /// `n` times the agreed value; only set when `converged`.
    pub sum_estimate: Option<T>,
}

impl<T: Scalar> ConvergenceReport<T> {
    fn finish(converged: bool, rounds_used: u64, residual: T, estimates: &[T]) -> Self {
        let value = converged.then(|| scalar::mean(estimates));
        ConvergenceReport {
            converged,
            rounds_used,
            final_residual: residual,
            consensus_value: value,
            sum_estimate: value.map(|v| v * T::of_usize(estimates.len())),
        }
    }
}

/// Iterates [`consensus_step`] from `init` until the spread is at most `tol`.
pub fn run_consensus<T: Scalar>(
    init: &[T],
    graph: &CommGraph<T>,
    tol: T,
    max_rounds: u64,
) -> Result<(ConsensusState<T>, ConvergenceReport<T>), EpidemicError> {
    let state = ConsensusState::for_graph(graph, init.to_vec())?;
    run_consensus_from(state, graph, tol, max_rounds)
}

/// [`run_consensus`] starting from an existing state.
pub fn run_consensus_from<T: Scalar>(
    mut state: ConsensusState<T>,
    graph: &CommGraph<T>,
    tol: T,
    max_rounds: u64,
) -> Result<(ConsensusState<T>, ConvergenceReport<T>), EpidemicError> {
    if !(tol > T::zero()) {
        return Err(EpidemicError::InvalidTolerance);
    }
    check_alignment(&state.nodes, graph)?;
    if !graph.is_connected() {
        return Err(EpidemicError::NotConnected);
    }
    let mut rounds = 0;
    let mut residual = consensus_residual(&state);
    while residual > tol && rounds < max_rounds {
        state = consensus_step(&state, graph)?;
        residual = consensus_residual(&state);
        rounds += 1;
    }
    let report = ConvergenceReport::finish(residual <= tol, rounds, residual, &state.values);
    Ok((state, report))
}

/// Push-sum mass `(s_i, w_i)` per live node; `s_i / w_i` estimates the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushSumState<T = f64> {
    nodes: Vec<NodeId>,
    sums: Vec<T>,
    weights: Vec<T>,
}

impl<T: Scalar> PushSumState<T> {
    /// `s_i = values[i]`, `w_i = 1` over nodes `0..values.len()`.
    pub fn new(values: Vec<T>) -> Self {
        let nodes = (0..values.len()).map(NodeId).collect();
        let weights = vec![T::one(); values.len()];
        PushSumState {
            nodes,
            sums: values,
            weights,
        }
    }

    pub fn for_graph(graph: &CommGraph<T>, values: Vec<T>) -> Result<Self, EpidemicError> {
        let nodes: Vec<NodeId> = graph.live_nodes().collect();
        if nodes.len() != values.len() {
            return Err(EpidemicError::DimensionMismatch {
                expected: nodes.len(),
                found: values.len(),
            });
        }
        let weights = vec![T::one(); values.len()];
        Ok(PushSumState {
            nodes,
            sums: values,
            weights,
        })
    }

    /// Explicit mass, for restarting from a recorded state.
    pub fn from_mass(nodes: Vec<NodeId>, sums: Vec<T>, weights: Vec<T>) -> Result<Self, EpidemicError> {
        if sums.len() != nodes.len() || weights.len() != nodes.len() {
            return Err(EpidemicError::DimensionMismatch {
                expected: nodes.len(),
                found: sums.len().min(weights.len()),
            });
        }
        if let Some(pos) = weights.iter().position(|w| !(*w > T::zero())) {
            return Err(EpidemicError::NonPositiveWeight(nodes[pos]));
        }
        Ok(PushSumState { nodes, sums, weights })
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn sums(&self) -> &[T] {
        &self.sums
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn estimates(&self) -> Vec<T> {
        self.sums
            .iter()
            .zip(&self.weights)
            .map(|(&s, &w)| s / w)
            .collect()
    }

    pub fn total_sum(&self) -> T {
        scalar::sum(self.sums.iter().copied())
    }

    pub fn total_weight(&self) -> T {
        scalar::sum(self.weights.iter().copied())
    }
}

/// One push-sum round: every node keeps half of its `(s, w)` and pushes the
/// other half to a neighbour drawn uniformly from `N_i`. Isolated nodes keep
/// everything. Draws happen in ascending node order.
pub fn push_sum_round<T: Scalar, R: Rng + ?Sized>(
    state: &PushSumState<T>,
    graph: &CommGraph<T>,
    rng: &mut R,
) -> Result<PushSumState<T>, EpidemicError> {
    check_alignment(&state.nodes, graph)?;
    if let Some(pos) = state.weights.iter().position(|w| !(*w > T::zero())) {
        return Err(EpidemicError::NonPositiveWeight(state.nodes[pos]));
    }
    let index = position_index(&state.nodes, graph.node_count());
    let half = T::of(0.5);
    let mut sums = vec![T::zero(); state.nodes.len()];
    let mut weights = vec![T::zero(); state.nodes.len()];
    for (pos, &i) in state.nodes.iter().enumerate() {
        let (s, w) = (state.sums[pos], state.weights[pos]);
        let neighbors = graph.neighbors(i).expect("aligned state");
        if neighbors.is_empty() {
            sums[pos] += s;
            weights[pos] += w;
            continue;
        }
        let pick = rng.gen_range(0..neighbors.len());
        let target = *neighbors.iter().nth(pick).expect("index in range");
        let target = index[target.0].expect("neighbor is live");
        let (s_half, w_half) = (s * half, w * half);
        sums[pos] += s - s_half;
        weights[pos] += w - w_half;
        sums[target] += s_half;
        weights[target] += w_half;
    }
    Ok(PushSumState {
        nodes: state.nodes.clone(),
        sums,
        weights,
    })
}

/// Runs push-sum from `s_i = init[i]`, `w_i = 1` until the estimates agree
/// to within `tol`.
pub fn run_push_sum<T: Scalar, R: Rng + ?Sized>(
    init: &[T],
    graph: &CommGraph<T>,
    tol: T,
    max_rounds: u64,
    rng: &mut R,
) -> Result<(PushSumState<T>, ConvergenceReport<T>), EpidemicError> {
    if !(tol > T::zero()) {
        return Err(EpidemicError::InvalidTolerance);
    }
    let mut state = PushSumState::for_graph(graph, init.to_vec())?;
    if !graph.is_connected() {
        return Err(EpidemicError::NotConnected);
    }
    let mut rounds = 0;
    let mut estimates = state.estimates();
    let mut residual = scalar::spread(&estimates);
    while residual > tol && rounds < max_rounds {
        state = push_sum_round(&state, graph, rng)?;
        estimates = state.estimates();
        residual = scalar::spread(&estimates);
        rounds += 1;
    }
    let report = ConvergenceReport::finish(residual <= tol, rounds, residual, &estimates);
    Ok((state, report))
}
