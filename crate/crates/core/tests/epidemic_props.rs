use p2p_microgrid::epidemic::{
    consensus_residual, consensus_step, push_sum_round, run_consensus, run_push_sum,
    ConsensusState, EpidemicError, PushSumState,
};
use p2p_microgrid::topology::{CommGraph, NodeId};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn connected_graph() -> impl Strategy<Value = CommGraph> {
    (2usize..=12).prop_flat_map(|n| {
        let tree = prop::collection::vec(any::<prop::sample::Index>(), n - 1);
        let extra = prop::collection::vec((0..n, 0..n), 0..n);
        (Just(n), tree, extra).prop_map(|(n, tree, extra)| {
            let mut edges: Vec<(usize, usize)> =
                tree.iter().enumerate().map(|(k, ix)| (ix.index(k + 1), k + 1)).collect();
            edges.extend(extra.into_iter().filter(|(i, j)| i != j));
            CommGraph::build(n, &edges, None).unwrap()
        })
    })
}

fn graph_and_values() -> impl Strategy<Value = (CommGraph, Vec<f64>)> {
    connected_graph().prop_flat_map(|g| {
        let n = g.node_count();
        (Just(g), prop::collection::vec(-100.0f64..100.0, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn consensus_conserves_sum_and_contracts((g, x) in graph_and_values()) {
        let mut state = ConsensusState::for_graph(&g, x.clone()).unwrap();
        let sum0: f64 = x.iter().sum();
        let mut residual = consensus_residual(&state);
        let (lo, hi) = x.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        for _ in 0..50 {
            state = consensus_step(&state, &g).unwrap();
            let next = consensus_residual(&state);
            prop_assert!(next <= residual + 1e-12);
            residual = next;
            prop_assert!((state.sum() - sum0).abs() <= 1e-12 * sum0.abs().max(1.0) * x.len() as f64);
            for &v in state.values() {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn consensus_converges_to_mean((g, x) in graph_and_values()) {
        let (state, report) = run_consensus(&x, &g, 1e-10, 200_000).unwrap();
        prop_assert!(report.converged);
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        for &v in state.values() {
            prop_assert!((v - mean).abs() <= 1e-9);
        }
        prop_assert!((report.sum_estimate.unwrap() - mean * x.len() as f64).abs() <= 1e-8);
    }

    #[test]
    fn push_sum_conserves_mass_and_is_seeded((g, x) in graph_and_values(), seed in any::<u64>()) {
        let x: Vec<f64> = x.into_iter().map(f64::abs).collect();
        let mut a = PushSumState::for_graph(&g, x.clone()).unwrap();
        let mut b = a.clone();
        let mut ra = ChaCha8Rng::seed_from_u64(seed);
        let mut rb = ChaCha8Rng::seed_from_u64(seed);
        let s0: f64 = x.iter().sum();
        for _ in 0..30 {
            a = push_sum_round(&a, &g, &mut ra).unwrap();
            b = push_sum_round(&b, &g, &mut rb).unwrap();
            prop_assert!((a.total_sum() - s0).abs() <= 1e-12 * s0.max(1.0));
            prop_assert!((a.total_weight() - x.len() as f64).abs() <= 1e-12 * x.len() as f64);
        }
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}

#[test]
fn disconnected_graph_is_rejected() {
    let g = CommGraph::build(4, &[(0, 1), (2, 3)], None).unwrap();
    assert_eq!(
        run_consensus(&[1.0, 2.0, 3.0, 4.0], &g, 1e-9, 100).unwrap_err(),
        EpidemicError::NotConnected
    );
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(
        run_push_sum(&[1.0, 2.0, 3.0, 4.0], &g, 1e-9, 100, &mut rng).unwrap_err(),
        EpidemicError::NotConnected
    );
}

#[test]
fn link_loss_on_a_cycle_still_reaches_survivor_mean() {
    let mut g = CommGraph::<f64>::build(4, &[(0, 1), (1, 2), (2, 3), (3, 0)], None).unwrap();
    assert!(g.remove_edge(NodeId(1), NodeId(2)));
    assert!(g.is_connected());
    let x = [4.0f64, -2.0, 8.0, 6.0];
    let (state, report) = run_consensus(&x, &g, 1e-12, 100_000).unwrap();
    assert!(report.converged);
    for v in state.values() {
        assert!((v - 4.0).abs() < 1e-11);
    }
}

#[test]
fn failed_node_leaves_survivors_to_their_own_mean() {
    let g = CommGraph::<f64>::build(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)], None).unwrap();
    let mut state = ConsensusState::for_graph(&g, vec![0.0, 10.0, 3.0, 9.0, 1.0]).unwrap();
    for _ in 0..3 {
        state = consensus_step(&state, &g).unwrap();
    }
    let survivors_mean = (state.sum() - state.value_of(NodeId(4)).unwrap()) / 4.0;
    let h = g.remove_node(NodeId(4)).unwrap();
    let mut state = state.without(NodeId(4));
    for _ in 0..2000 {
        state = consensus_step(&state, &h).unwrap();
    }
    for v in state.values() {
        assert!((v - survivors_mean).abs() < 1e-9);
    }
}
