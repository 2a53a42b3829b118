use std::collections::BTreeSet;

use p2p_microgrid::topology::{default_epsilon, CommGraph, NodeId, TopologyError};
use proptest::prelude::*;

fn graph_input() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1usize..=8).prop_flat_map(|n| {
        let edges = prop::collection::vec((0..n, 0..n), 0..=n * 2)
            .prop_map(|pairs| pairs.into_iter().filter(|(i, j)| i != j).collect::<Vec<_>>());
        (Just(n), edges)
    })
}

/// Connectivity by repeated relaxation of a reachability set.
fn brute_force_connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut reach = vec![false; n];
    reach[0] = true;
    for _ in 0..n {
        for &(i, j) in edges {
            if reach[i] || reach[j] {
                reach[i] = true;
                reach[j] = true;
            }
        }
    }
    reach.into_iter().all(|r| r)
}

#[test]
fn connectivity_agrees_with_brute_force_for_every_small_graph() {
    for n in 1..=5usize {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        for mask in 0u32..(1 << pairs.len()) {
            let edges: Vec<_> = pairs
                .iter()
                .enumerate()
                .filter(|(k, _)| mask & (1 << k) != 0)
                .map(|(_, &e)| e)
                .collect();
            let g = CommGraph::<f64>::build(n, &edges, None).unwrap();
            assert_eq!(g.is_connected(), brute_force_connected(n, &edges), "n={n} edges={edges:?}");
        }
    }
}

#[test]
fn build_rejects_bad_input() {
    assert_eq!(CommGraph::<f64>::build(3, &[(0, 0)], None).unwrap_err(), TopologyError::SelfLoop(0));
    assert!(matches!(
        CommGraph::<f64>::build(3, &[(0, 9)], None),
        Err(TopologyError::InvalidNode { .. })
    ));
    assert!(matches!(
        CommGraph::build(3, &[(0, 1), (1, 2)], Some(0.5)),
        Err(TopologyError::EpsilonOutOfRange { .. })
    ));
    assert_eq!(CommGraph::<f64>::build(0, &[], None).unwrap_err(), TopologyError::Empty);
}

proptest! {
    #[test]
    fn adjacency_is_symmetric((n, edges) in graph_input()) {
        let g = CommGraph::<f64>::build(n, &edges, None).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(g.adjacency(NodeId(i), NodeId(j)), g.adjacency(NodeId(j), NodeId(i)));
            }
            prop_assert_eq!(g.adjacency(NodeId(i), NodeId(i)), 0);
        }
        let listed: BTreeSet<_> = g.edges().into_iter().collect();
        let expected: BTreeSet<_> = edges.iter().map(|&(i, j)| (NodeId(i.min(j)), NodeId(i.max(j)))).collect();
        prop_assert_eq!(listed, expected);
    }

    #[test]
    fn default_epsilon_inside_stability_bound((n, edges) in graph_input()) {
        let g = CommGraph::<f64>::build(n, &edges, None).unwrap();
        let eps = g.epsilon();
        prop_assert!(eps > 0.0);
        if g.max_degree() > 0 {
            prop_assert!(eps < 1.0 / g.max_degree() as f64);
        }
        prop_assert_eq!(eps, default_epsilon(&g));
    }

    #[test]
    fn removing_a_node_never_raises_max_degree((n, edges) in graph_input(), pick in any::<prop::sample::Index>()) {
        prop_assume!(n >= 2);
        let g = CommGraph::<f64>::build(n, &edges, None).unwrap();
        let node = NodeId(pick.index(n));
        let h = g.remove_node(node).unwrap();
        prop_assert!(h.max_degree() <= g.max_degree());
        prop_assert!(!h.is_live(node));
        prop_assert_eq!(h.live_count(), n - 1);
        prop_assert_eq!(h.node_count(), n);
        for other in h.live_nodes() {
            prop_assert!(!h.has_edge(node, other));
        }
        let back = h.restore_node(node).unwrap();
        prop_assert!(back.is_live(node));
        prop_assert!(back.neighbors(node).unwrap().is_empty());
    }
}
