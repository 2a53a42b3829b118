//! Communication graphs for the epidemic protocols.
//!
//! Graphs are undirected with unit adjacency weights and a single tuning
//! weight `epsilon` shared by every edge. Failed agents are tombstoned: the
//! slot stays allocated so that [`NodeId`]s remain stable for the whole run.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<usize> for NodeId {
    fn from(index: usize) -> Self {
        NodeId(index)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("node {node} is not a live node of a graph with {node_count} slots")]
    InvalidNode { node: usize, node_count: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("epsilon {epsilon} outside (0, 1/{max_degree})")]
    EpsilonOutOfRange { epsilon: f64, max_degree: usize },
    #[error("graph needs at least one node")]
    Empty,
    #[error("cannot remove the last live node")]
    LastNode,
}

/// Undirected communication topology with tuning weight `epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph<T = f64> {
    adjacency: Vec<BTreeSet<NodeId>>,
    live: Vec<bool>,
    epsilon: T,
}

impl<T: Scalar> CommGraph<T> {
    /// Builds a graph over `node_count` nodes. Duplicate pairs collapse into
    /// one edge. Without an explicit `epsilon` the default `1/(Δ+1)` is used.
    pub fn build(
        node_count: usize,
        edges: &[(usize, usize)],
        epsilon: Option<T>,
    ) -> Result<Self, TopologyError> {
        if node_count == 0 {
            return Err(TopologyError::Empty);
        }
        let mut adjacency = vec![BTreeSet::new(); node_count];
        for &(i, j) in edges {
            for n in [i, j] {
                if n >= node_count {
                    return Err(TopologyError::InvalidNode { node: n, node_count });
                }
            }
            if i == j {
                return Err(TopologyError::SelfLoop(i));
            }
            adjacency[i].insert(NodeId(j));
            adjacency[j].insert(NodeId(i));
        }
        let mut graph = CommGraph {
            adjacency,
            live: vec![true; node_count],
            epsilon: T::one(),
        };
        graph.epsilon = match epsilon {
            Some(eps) => {
                graph.check_epsilon(eps)?;
                eps
            }
            None => default_epsilon(&graph),
        };
        Ok(graph)
    }

    fn check_epsilon(&self, eps: T) -> Result<(), TopologyError> {
        let max_degree = self.max_degree();
        let too_large = max_degree > 0 && eps * T::of_usize(max_degree) >= T::one();
        if !(eps > T::zero()) || too_large {
            return Err(TopologyError::EpsilonOutOfRange {
                epsilon: eps.to_f64().unwrap_or(f64::NAN),
                max_degree,
            });
        }
        Ok(())
    }

    /// Total number of slots, including tombstoned nodes.
    pub fn node_count(&self) -> usize {
        self.live.len()
    }

    pub fn live_count(&self) -> usize {
        self.live.iter().filter(|&&l| l).count()
    }

    pub fn is_live(&self, node: NodeId) -> bool {
        self.live.get(node.0).copied().unwrap_or(false)
    }

    /// Live nodes in ascending order.
    pub fn live_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.live
            .iter()
            .enumerate()
            .filter(|(_, &l)| l)
            .map(|(i, _)| NodeId(i))
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    /// Replaces the tuning weight, validating it against the current degree.
    pub fn with_epsilon(mut self, epsilon: T) -> Result<Self, TopologyError> {
        self.check_epsilon(epsilon)?;
        self.epsilon = epsilon;
        Ok(self)
    }

    fn require_live(&self, node: NodeId) -> Result<(), TopologyError> {
        if self.is_live(node) {
            Ok(())
        } else {
            Err(TopologyError::InvalidNode {
                node: node.0,
                node_count: self.node_count(),
            })
        }
    }

    /// `N_i`; never contains `i`.
    pub fn neighbors(&self, node: NodeId) -> Result<&BTreeSet<NodeId>, TopologyError> {
        self.require_live(node)?;
        Ok(&self.adjacency[node.0])
    }

    /// `a_ij`: 1 when the two nodes are linked, 0 otherwise.
    pub fn adjacency(&self, i: NodeId, j: NodeId) -> u8 {
        u8::from(self.has_edge(i, j))
    }

    pub fn has_edge(&self, i: NodeId, j: NodeId) -> bool {
        self.adjacency
            .get(i.0)
            .map(|n| n.contains(&j))
            .unwrap_or(false)
    }

    /// Edges as ordered pairs `(i, j)` with `i < j`, ascending.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| {
                ns.iter()
                    .filter(move |j| j.0 > i)
                    .map(move |&j| (NodeId(i), j))
            })
            .collect()
    }

    /// `Δ`, the largest live degree; 0 for a graph without edges.
    pub fn max_degree(&self) -> usize {
        self.live_nodes()
            .map(|n| self.adjacency[n.0].len())
            .max()
            .unwrap_or(0)
    }

    /// True iff every live node is reachable from the lowest live node.
    pub fn is_connected(&self) -> bool {
        let Some(start) = self.live_nodes().next() else {
            return true;
        };
        let mut seen = vec![false; self.node_count()];
        let mut queue = VecDeque::from([start]);
        seen[start.0] = true;
        let mut reached = 1;
        while let Some(n) = queue.pop_front() {
            for &m in &self.adjacency[n.0] {
                if !seen[m.0] {
                    seen[m.0] = true;
                    reached += 1;
                    queue.push_back(m);
                }
            }
        }
        reached == self.live_count()
    }

    /// Returns a copy with `node` tombstoned and its edges dropped.
    pub fn remove_node(&self, node: NodeId) -> Result<Self, TopologyError> {
        self.require_live(node)?;
        if self.live_count() < 2 {
            return Err(TopologyError::LastNode);
        }
        let mut next = self.clone();
        for m in std::mem::take(&mut next.adjacency[node.0]) {
            next.adjacency[m.0].remove(&node);
        }
        next.live[node.0] = false;
        Ok(next)
    }

    /// Revives a tombstoned slot. Edges are re-added separately.
    pub fn restore_node(&self, node: NodeId) -> Result<Self, TopologyError> {
        if node.0 >= self.node_count() || self.live[node.0] {
            return Err(TopologyError::InvalidNode {
                node: node.0,
                node_count: self.node_count(),
            });
        }
        let mut next = self.clone();
        next.live[node.0] = true;
        Ok(next)
    }

    /// Removes the edge `{i, j}` if present. Returns whether it existed.
    pub fn remove_edge(&mut self, i: NodeId, j: NodeId) -> bool {
        if !self.has_edge(i, j) {
            return false;
        }
        self.adjacency[i.0].remove(&j);
        self.adjacency[j.0].remove(&i);
        true
    }

    /// Adds `{i, j}` between live nodes. `epsilon` is not revalidated, so
    /// callers only re-add edges of a graph the weight was checked against.
    pub fn add_edge(&mut self, i: NodeId, j: NodeId) -> Result<(), TopologyError> {
        self.require_live(i)?;
        self.require_live(j)?;
        if i == j {
            return Err(TopologyError::SelfLoop(i.0));
        }
        self.adjacency[i.0].insert(j);
        self.adjacency[j.0].insert(i);
        Ok(())
    }

    /// Keeps only the edges accepted by `keep`; node liveness is unchanged.
    pub fn filter_edges(&self, mut keep: impl FnMut(NodeId, NodeId) -> bool) -> Self {
        let mut next = self.clone();
        for (i, j) in self.edges() {
            if !keep(i, j) {
                next.remove_edge(i, j);
            }
        }
        next
    }
}

/// `1/(Δ+1)` for `Δ ≥ 1`, and `1` for a graph without edges.
pub fn default_epsilon<T: Scalar>(graph: &CommGraph<T>) -> T {
    match graph.max_degree() {
        0 => T::one(),
        d => T::one() / T::of_usize(d + 1),
    }
}
