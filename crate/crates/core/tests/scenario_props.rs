use p2p_microgrid::control::{SecondaryParams, TertiaryParams};
use p2p_microgrid::grid_model::{DerKind, Segment};
use p2p_microgrid::scenario_io::{
    parse_scenario, serialize_scenario, ControlSpec, DerEntry, FeederSpec, GraphSpec,
    InterLevelLink, Limits, MicrogridSpec, Scenario, ScenarioError, SCHEMA_VERSION,
};
use p2p_microgrid::sim::{ChannelModel, FaultEvent, FaultKind};
use proptest::prelude::*;

fn der(node: usize, base: f64, spread: f64, a: f64, bus: usize) -> DerEntry {
    DerEntry {
        node,
        name: None,
        kind: DerKind::Generator,
        p_set: base + 0.5 * spread,
        p_min: base,
        p_max: base + spread,
        droop_gain: 20.0 * a,
        q_droop_gain: a,
        cost_a: a,
        cost_b: base,
        bus,
    }
}

/// Node count, (p_min, width, cost_a) per DER, load, consensus init, ε, secondary on.
type MicrogridDraw = (usize, Vec<(f64, f64, f64)>, f64, Option<Vec<f64>>, Option<f64>, bool);

fn microgrid() -> impl Strategy<Value = MicrogridDraw> {
    (1usize..=5).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec((0.0f64..3.0, 0.5f64..5.0, 0.1f64..3.0), n),
            0.0f64..10.0,
            prop::option::of(prop::collection::vec(-5.0f64..5.0, n)),
            prop::option::of(0.01f64..0.05),
            any::<bool>(),
        )
    })
}

fn scenario() -> impl Strategy<Value = Scenario> {
    (
        any::<u64>(),
        0u64..500,
        prop::collection::vec(microgrid(), 1..=3),
        0.0f64..=1.0,
        0u64..4,
        any::<bool>(),
    )
        .prop_map(|(seed, rounds, specs, loss, delay, with_feeder)| {
            let count = specs.len();
            let microgrids = specs
                .into_iter()
                .enumerate()
                .map(|(m, (n, gens, load, init, eps, secondary))| {
                    let has_child = m + 1 < count;
                    let node_count = n + usize::from(has_child);
                    let edges: Vec<[usize; 2]> = (1..node_count).map(|k| [k - 1, k]).collect();
                    let init = init.map(|mut v| {
                        v.resize(node_count, 0.0);
                        v
                    });
                    MicrogridSpec {
                        id: format!("mg{m}"),
                        nominal_frequency_hz: 50.0,
                        load_mw: load,
                        graph: GraphSpec { node_count, edges, epsilon: eps },
                        ders: gens
                            .into_iter()
                            .enumerate()
                            .map(|(k, (b, s, a))| der(k, b, s, a, usize::from(with_feeder) * (k % 2)))
                            .collect(),
                        feeder: with_feeder.then(|| FeederSpec {
                            source_voltage_pu: 1.0,
                            base_mva: 10.0,
                            segments: vec![Segment { resistance_pu: 0.01, reactance_pu: 0.02 }],
                            load_share: vec![0.4],
                        }),
                        control: ControlSpec {
                            secondary: secondary.then_some(SecondaryParams {
                                period_rounds: 5,
                                gain: 0.5,
                                consensus_tol: 1e-12,
                                consensus_max_rounds: 1000,
                            }),
                            tertiary: Some(TertiaryParams::default()),
                        },
                        consensus_init: init,
                    }
                })
                .collect::<Vec<_>>();
            let inter_level_links = (1..count)
                .map(|m| InterLevelLink {
                    parent: format!("mg{}", m - 1),
                    child: format!("mg{m}"),
                    pcc_node: microgrids[m - 1].graph.node_count - 1,
                    bus: 0,
                })
                .collect();
            Scenario {
                schema_version: SCHEMA_VERSION.into(),
                seed,
                rounds,
                channel: ChannelModel { loss_probability: loss, delay_rounds: delay },
                limits: Limits::default(),
                microgrids,
                inter_level_links,
                faults: vec![FaultEvent {
                    at_round: rounds / 2,
                    kind: FaultKind::LoadStep,
                    microgrid: "mg0".into(),
                    node: None,
                    edge: None,
                    delta_mw: Some(0.25),
                }],
            }
        })
}

proptest! {
    #[test]
    fn parse_inverts_serialize(s in scenario()) {
        s.validate().unwrap();
        let text = serialize_scenario(&s);
        prop_assert_eq!(parse_scenario(text.as_bytes()).unwrap(), s);
    }

    #[test]
    fn every_schema_error_names_a_path(s in scenario(), pick in 0usize..4) {
        let mut doc: serde_json::Value = serde_json::from_str(&serialize_scenario(&s)).unwrap();
        let expected = match pick {
            0 => { doc["microgrids"][0]["ders"][0]["p_set"] = "high".into(); "microgrids[0].ders[0].p_set" }
            1 => { doc["microgrids"][0]["graph"]["edges"] = serde_json::json!([[0, 99]]); "microgrids[0].graph.edges[0]" }
            2 => { doc["channel"]["loss_probability"] = 2.0.into(); "channel.loss_probability" }
            _ => { doc["microgrids"][0]["speed"] = 1.into(); "microgrids[0].speed" }
        };
        let err = parse_scenario(&serde_json::to_vec(&doc).unwrap()).unwrap_err();
        prop_assert_eq!(err.path(), Some(expected));
    }
}

#[test]
fn dangling_edge_names_the_missing_node() {
    let mut doc: serde_json::Value =
        serde_json::from_slice(include_bytes!("../scenarios/two_gen_step.json")).unwrap();
    doc["microgrids"][0]["graph"]["edges"] = serde_json::json!([[0, 1], [1, 9]]);
    let err = parse_scenario(&serde_json::to_vec(&doc).unwrap()).unwrap_err();
    assert!(matches!(err, ScenarioError::DanglingReference { .. }), "{err}");
    assert!(err.to_string().contains('9'));
}

#[test]
fn cyclic_levels_are_rejected() {
    let mut doc: serde_json::Value =
        serde_json::from_slice(include_bytes!("../scenarios/two_level.json")).unwrap();
    doc["microgrids"][1]["graph"]["node_count"] = 4.into();
    doc["microgrids"][1]["graph"]["edges"] = serde_json::json!([[0, 1], [1, 2], [2, 3]]);
    doc["inter_level_links"]
        .as_array_mut()
        .unwrap()
        .push(serde_json::json!({"parent": "lv", "child": "mv", "pcc_node": 3}));
    let err = parse_scenario(&serde_json::to_vec(&doc).unwrap()).unwrap_err();
    assert!(err.to_string().contains("levels must form a tree"), "{err}");
}

#[test]
fn canonical_scenarios_validate() {
    for bytes in [
        &include_bytes!("../scenarios/two_gen_step.json")[..],
        &include_bytes!("../scenarios/feeder_rise.json")[..],
        &include_bytes!("../scenarios/two_level.json")[..],
    ] {
        let s = parse_scenario(bytes).unwrap();
        assert_eq!(parse_scenario(serialize_scenario(&s).as_bytes()).unwrap(), s);
    }
}
