use p2p_microgrid::epidemic::run_consensus;
use p2p_microgrid::grid_model::solve_lumped_frequency;
use p2p_microgrid::scenario_io::{parse_scenario, read_trace_csv, write_trace, Scenario};
use p2p_microgrid::sim::{run_scenario, FaultEvent, FaultKind, LayerOutcome, SimError, World};
use p2p_microgrid::topology::CommGraph;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TWO_GEN_STEP: &[u8] = include_bytes!("../scenarios/two_gen_step.json");
const TWO_LEVEL: &[u8] = include_bytes!("../scenarios/two_level.json");

fn gossip_scenario(n: usize, edges: &[(usize, usize)], init: &[f64], loss: f64, seed: u64, rounds: u64) -> Scenario {
    let ders: Vec<serde_json::Value> = (0..n)
        .map(|k| {
            serde_json::json!({
                "node": k, "kind": "generator", "p_set": 1.0, "p_min": 0.0, "p_max": 5.0,
                "droop_gain": 10.0, "cost_a": 1.0, "cost_b": 1.0
            })
        })
        .collect();
    let doc = serde_json::json!({
        "schema_version": "1",
        "seed": seed,
        "rounds": rounds,
        "channel": {"loss_probability": loss},
        "microgrids": [{
            "id": "g",
            "load_mw": n as f64,
            "graph": {"node_count": n, "edges": edges.iter().map(|&(i, j)| [i, j]).collect::<Vec<_>>()},
            "ders": ders,
            "consensus_init": init,
        }]
    });
    parse_scenario(&serde_json::to_vec(&doc).unwrap()).unwrap()
}

fn random_graph(n: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|k| (rng.gen_range(0..k), k)).collect();
    for i in 0..n {
        for j in i + 1..n {
            if !edges.contains(&(i, j)) && rng.gen::<f64>() < 0.1 {
                edges.push((i, j));
            }
        }
    }
    edges
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn identical_inputs_give_identical_traces(seed in any::<u64>(), loss in 0.0f64..0.6, delay in 0u64..3) {
        let mut s = parse_scenario(TWO_LEVEL).unwrap();
        s.seed = seed;
        s.channel.loss_probability = loss;
        s.channel.delay_rounds = delay;
        let a = run_scenario(&s).unwrap();
        let b = run_scenario(&s).unwrap();
        prop_assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        prop_assert_eq!(write_trace(&a), write_trace(&b));
    }

    #[test]
    fn lossy_dissemination_conserves_sum(seed in any::<u64>(), loss in 0.0f64..=1.0, n in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edges = random_graph(n, &mut rng);
        let init: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let s = gossip_scenario(n, &edges, &init, loss, seed, 40);
        let sum0: f64 = init.iter().sum();
        let mut world = World::new(&s).unwrap();
        for round in 0..s.rounds {
            world.advance(round, &[]).unwrap();
            let sum = world.consensus("g").unwrap().sum();
            prop_assert!((sum - sum0).abs() <= 1e-12 * sum0.abs().max(1.0) * n as f64);
        }
    }
}

#[test]
fn liveness_under_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..3 {
        let n = rng.gen_range(3..=20);
        let edges = random_graph(n, &mut rng);
        let init: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
        let graph = CommGraph::build(n, &edges, None).unwrap();
        let (_, report) = run_consensus(&init, &graph, 1e-6, 1_000_000).unwrap();
        let budget = 50 * report.rounds_used.max(1);
        for seed in 0..10 {
            let trace = run_scenario(&gossip_scenario(n, &edges, &init, 0.5, seed, budget)).unwrap();
            let reached = trace.records.iter().any(|r| r.microgrids[0].residual <= 1e-6);
            assert!(reached, "n={n} seed={seed} budget={budget}");
        }
    }
}

#[test]
fn balanced_run_stays_nominal() {
    let mut s = parse_scenario(TWO_GEN_STEP).unwrap();
    s.faults.clear();
    let trace = run_scenario(&s).unwrap();
    let (csv, _) = write_trace(&trace);
    let rows = read_trace_csv(&csv).unwrap();
    assert_eq!(rows.len(), 100 * 2);
    let text = String::from_utf8(csv).unwrap();
    assert!(text.lines().skip(1).all(|l| l.split(',').nth(1) == Some("50.000000000000")));
    assert!(!text.contains('\r'));
}

#[test]
fn csv_rows_track_live_nodes() {
    let s = parse_scenario(include_bytes!("../scenarios/feeder_rise.json")).unwrap();
    let trace = run_scenario(&s).unwrap();
    let at = s.faults[0].at_round;
    let expected: u64 = (0..s.rounds).map(|r| if r < at { 3 } else { 2 }).sum();
    let rows = read_trace_csv(&write_trace(&trace).0).unwrap();
    assert_eq!(rows.len() as u64, expected);
    for r in &trace.records {
        assert_eq!(r.nodes.len(), if r.round < at { 3 } else { 2 });
    }
}

#[test]
fn restoring_a_live_agent_is_unknown_target() {
    let s = parse_scenario(TWO_GEN_STEP).unwrap();
    let mut world = World::new(&s).unwrap();
    let event = FaultEvent {
        at_round: 0,
        kind: FaultKind::AgentRestore,
        microgrid: "mg".into(),
        node: Some(0),
        edge: None,
        delta_mw: None,
    };
    assert!(matches!(world.apply_fault(&event), Err(SimError::UnknownTarget(_))));
    let missing = FaultEvent { microgrid: "nowhere".into(), ..event };
    assert!(matches!(world.apply_fault(&missing), Err(SimError::UnknownTarget(_))));
}

#[test]
fn fail_and_restore_round_trip_topology() {
    let s = parse_scenario(TWO_LEVEL).unwrap();
    let mut world = World::new(&s).unwrap();
    let base = world.graph("lv").unwrap().clone();
    let fail = FaultEvent {
        at_round: 0,
        kind: FaultKind::AgentFail,
        microgrid: "lv".into(),
        node: Some(1),
        edge: None,
        delta_mw: None,
    };
    world.apply_fault(&fail).unwrap();
    assert!(!world.graph("lv").unwrap().is_connected());
    world
        .apply_fault(&FaultEvent { kind: FaultKind::AgentRestore, ..fail })
        .unwrap();
    assert_eq!(world.graph("lv").unwrap(), &base);
}

#[test]
fn no_links_means_droop_equilibrium() {
    let mut s = parse_scenario(TWO_GEN_STEP).unwrap();
    s.microgrids[0].graph.edges.clear();
    let trace = run_scenario(&s).unwrap();
    for r in &trace.records[10..] {
        assert!((r.delta_f_hz + 0.05).abs() < 1e-12, "round {}", r.round);
        if let Some(outcome) = &r.microgrids[0].secondary {
            assert!(matches!(outcome, LayerOutcome::Skipped { .. }));
        }
    }
    let mut grid = p2p_microgrid::grid_model::Microgrid {
        id: "mg".into(),
        ders: s.microgrids[0].ders.iter().map(|d| d.spec()).collect(),
        feeder: p2p_microgrid::grid_model::FeederModel::source_only(1.0),
        nominal_frequency: 50.0,
        load_mw: 10.0,
    };
    assert_eq!(solve_lumped_frequency(&grid).unwrap().delta_f, trace.records[99].delta_f_hz);
    grid.load_mw = 8.0;
    assert_eq!(solve_lumped_frequency(&grid).unwrap().delta_f, trace.records[0].delta_f_hz);
}

#[test]
fn link_fail_on_cycle_keeps_consensus() {
    let edges = [(0, 1), (1, 2), (2, 3), (3, 0)];
    let init = [4.0, -2.0, 8.0, 6.0];
    let mut s = gossip_scenario(4, &edges, &init, 0.0, 1, 400);
    s.faults.push(FaultEvent {
        at_round: 0,
        kind: FaultKind::LinkFail,
        microgrid: "g".into(),
        node: None,
        edge: Some([1, 2]),
        delta_mw: None,
    });
    let mut world = World::new(&s).unwrap();
    world.advance(0, &[&s.faults[0]]).unwrap();
    for round in 1..s.rounds {
        world.advance(round, &[]).unwrap();
    }
    let state = world.consensus("g").unwrap();
    assert!(state.values().iter().all(|v| (v - 4.0).abs() < 1e-9));
    assert!(!world.graph("g").unwrap().has_edge(1.into(), 2.into()));
}
