//! Scenario parsing and validation, trace and summary serialization.

mod schema;
mod trace;

use thiserror::Error;

pub use schema::{
    ControlSpec, DerEntry, FeederSpec, GraphSpec, InterLevelLink, Limits, MicrogridSpec, Scenario,
    SCHEMA_VERSION,
};
pub use trace::{
    format_number, read_trace_csv, write_trace, CsvRow, FaultRecovery, MicrogridConsensus,
    SummaryReport, TraceDigest, TraceError, Violations, CSV_HEADER, RESTORE_TOL_HZ,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema violation at `{path}`: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("dangling reference at `{path}`: {message}")]
    DanglingReference { path: String, message: String },
}

impl ScenarioError {
    pub fn path(&self) -> Option<&str> {
        match self {
            ScenarioError::Syntax { .. } => None,
            ScenarioError::SchemaViolation { path, .. } | ScenarioError::DanglingReference { path, .. } => {
                Some(path)
            }
        }
    }
}

/// Strict parse of a scenario document followed by full validation.
pub fn parse_scenario(text: &[u8]) -> Result<Scenario, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_slice(text);
    let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner();
        match inner.classify() {
            serde_json::error::Category::Data => ScenarioError::SchemaViolation {
                path,
                message: strip_position(&inner),
            },
            _ => ScenarioError::Syntax {
                line: inner.line(),
                column: inner.column(),
                message: strip_position(&inner),
            },
        }
    })?;
    scenario.validate()?;
    Ok(scenario)
}

fn strip_position(err: &serde_json::Error) -> String {
    let text = err.to_string();
    match text.rfind(" at line ") {
        Some(pos) => text[..pos].to_string(),
        None => text,
    }
}

/// Pretty JSON with every optional field spelled out.
pub fn serialize_scenario(scenario: &Scenario) -> String {
    serde_json::to_string_pretty(scenario).expect("scenario serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": "1",
        "seed": 7,
        "rounds": 30,
        "microgrids": [{
            "id": "mg",
            "load_mw": 8.0,
            "graph": {"node_count": 2, "edges": [[0, 1]]},
            "ders": [
                {"node": 0, "kind": "generator", "p_set": 4, "p_min": 0, "p_max": 10, "droop_gain": 20, "cost_a": 1, "cost_b": 2},
                {"node": 1, "kind": "generator", "p_set": 4, "p_min": 0, "p_max": 10, "droop_gain": 20, "cost_a": 2, "cost_b": 1}
            ]
        }]
    }"#;

    fn edit(f: impl FnOnce(&mut serde_json::Value)) -> Vec<u8> {
        let mut v: serde_json::Value = serde_json::from_str(MINIMAL).unwrap();
        f(&mut v);
        serde_json::to_vec(&v).unwrap()
    }

    #[test]
    fn minimal_parses() {
        let s = parse_scenario(MINIMAL.as_bytes()).unwrap();
        assert_eq!(s.rounds, 30);
        assert_eq!(s.microgrids[0].graph.node_count, 2);
        assert_eq!(s.microgrids[0].nominal_frequency_hz, 50.0);
        let again = parse_scenario(serialize_scenario(&s).as_bytes()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn syntax_error() {
        assert!(matches!(
            parse_scenario(b"{\"schema_version\": "),
            Err(ScenarioError::Syntax { .. })
        ));
    }

    #[test]
    fn unknown_field_names_path() {
        let text = edit(|v| v["microgrids"][0]["ders"][1]["colour"] = "red".into());
        let err = parse_scenario(&text).unwrap_err();
        assert!(matches!(err, ScenarioError::SchemaViolation { .. }));
        assert_eq!(err.path(), Some("microgrids[0].ders[1].colour"));
        assert!(err.to_string().contains("colour"));
    }

    #[test]
    fn dangling_edge() {
        let text = edit(|v| v["microgrids"][0]["graph"]["edges"] = serde_json::json!([[0, 1], [1, 9]]));
        let err = parse_scenario(&text).unwrap_err();
        assert!(matches!(err, ScenarioError::DanglingReference { .. }));
        assert_eq!(err.path(), Some("microgrids[0].graph.edges[1]"));
        assert!(err.to_string().contains("node 9"));
    }

    #[test]
    fn wrong_type_names_path() {
        let text = edit(|v| v["microgrids"][0]["ders"][0]["p_set"] = "four".into());
        let err = parse_scenario(&text).unwrap_err();
        assert_eq!(err.path(), Some("microgrids[0].ders[0].p_set"));
    }

    #[test]
    fn cyclic_levels_rejected() {
        let text = edit(|v| {
            let mg = v["microgrids"][0].clone();
            let mut a = mg.clone();
            a["id"] = "a".into();
            a["graph"]["node_count"] = 3.into();
            a["graph"]["edges"] = serde_json::json!([[0, 1], [1, 2]]);
            let mut b = a.clone();
            b["id"] = "b".into();
            v["microgrids"] = serde_json::json!([a, b]);
            v["inter_level_links"] = serde_json::json!([
                {"parent": "a", "child": "b", "pcc_node": 2},
                {"parent": "b", "child": "a", "pcc_node": 2}
            ]);
        });
        let err = parse_scenario(&text).unwrap_err();
        assert!(matches!(err, ScenarioError::SchemaViolation { .. }));
        assert!(err.to_string().contains("levels must form a tree"), "{err}");
    }

    #[test]
    fn unmapped_node_rejected() {
        let text = edit(|v| v["microgrids"][0]["graph"]["node_count"] = 3.into());
        let err = parse_scenario(&text).unwrap_err();
        assert_eq!(err.path(), Some("microgrids[0].ders"));
    }

    #[test]
    fn fault_targets_checked() {
        let text = edit(|v| {
            v["faults"] = serde_json::json!([{"at_round": 3, "kind": "agent_restore", "microgrid": "mg", "node": 1}])
        });
        let err = parse_scenario(&text).unwrap_err();
        assert_eq!(err.path(), Some("faults[0].node"));

        let text = edit(|v| {
            v["faults"] = serde_json::json!([{"at_round": 3, "kind": "load_step", "microgrid": "mg", "node": 1}])
        });
        assert_eq!(parse_scenario(&text).unwrap_err().path(), Some("faults[0].delta_mw"));

        let text = edit(|v| {
            v["faults"] = serde_json::json!([{"at_round": 3, "kind": "link_fail", "microgrid": "nope", "edge": [0, 1]}])
        });
        assert!(matches!(
            parse_scenario(&text).unwrap_err(),
            ScenarioError::DanglingReference { .. }
        ));
    }

    #[test]
    fn version_checked() {
        let text = edit(|v| v["schema_version"] = "2".into());
        assert_eq!(parse_scenario(&text).unwrap_err().path(), Some("schema_version"));
    }
}
