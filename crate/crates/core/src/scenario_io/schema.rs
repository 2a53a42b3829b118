//! Scenario file schema (JSON, `schema_version` "1").
//!
//! All quantities use fixed units: MW, MVAr, Hz, per-unit volts. Graph nodes
//! of a microgrid are either a DER (listed in `ders`) or the coupling agent of
//! a child microgrid (named by an `inter_level_links` entry).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::control::{SecondaryParams, TertiaryParams};
use crate::grid_model::{DerKind, DerSpec, FeederModel, Segment};
use crate::sim::{ChannelModel, FaultEvent, FaultKind};
use crate::topology::{CommGraph, NodeId, TopologyError};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: String,
    pub seed: u64,
    /// Number of simulated rounds.
    pub rounds: u64,
    #[serde(default)]
    pub channel: ChannelModel,
    #[serde(default)]
    pub limits: Limits,
    pub microgrids: Vec<MicrogridSpec>,
    #[serde(default)]
    pub inter_level_links: Vec<InterLevelLink>,
    #[serde(default)]
    pub faults: Vec<FaultEvent>,
}

/// Operating bands used for the violation flags of the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    /// Allowed deviation from 1.0 pu.
    #[serde(default = "default_voltage_band")]
    pub voltage_band_pu: f64,
    /// Allowed deviation from nominal frequency.
    #[serde(default = "default_frequency_band")]
    pub frequency_band_hz: f64,
}

fn default_voltage_band() -> f64 {
    0.1
}

fn default_frequency_band() -> f64 {
    0.2
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            voltage_band_pu: default_voltage_band(),
            frequency_band_hz: default_frequency_band(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicrogridSpec {
    pub id: String,
    #[serde(default = "default_nominal_frequency")]
    pub nominal_frequency_hz: f64,
    /// Aggregate uncontrolled load, MW.
    pub load_mw: f64,
    pub graph: GraphSpec,
    pub ders: Vec<DerEntry>,
    #[serde(default)]
    pub feeder: Option<FeederSpec>,
    #[serde(default)]
    pub control: ControlSpec,
    /// Initial values of the state-dissemination consensus, one per node.
    /// Defaults to each node's scheduled output.
    #[serde(default)]
    pub consensus_init: Option<Vec<f64>>,
}

fn default_nominal_frequency() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub node_count: usize,
    #[serde(default)]
    pub edges: Vec<[usize; 2]>,
    #[serde(default)]
    pub epsilon: Option<f64>,
}

impl GraphSpec {
    pub fn edge_pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|&[i, j]| (i, j)).collect()
    }

    pub fn build(&self) -> Result<CommGraph, TopologyError> {
        CommGraph::build(self.node_count, &self.edge_pairs(), self.epsilon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerEntry {
    pub node: usize,
    /// Label used in traces; defaults to `<microgrid>:<node>`.
    #[serde(default)]
    pub name: Option<String>,
    pub kind: DerKind,
    pub p_set: f64,
    pub p_min: f64,
    pub p_max: f64,
    #[serde(default)]
    pub droop_gain: f64,
    #[serde(default)]
    pub q_droop_gain: f64,
    #[serde(default)]
    pub cost_a: f64,
    #[serde(default)]
    pub cost_b: f64,
    /// Feeder bus the DER is connected to; 0 is the source bus.
    #[serde(default)]
    pub bus: usize,
}

impl DerEntry {
    pub fn spec(&self) -> DerSpec {
        DerSpec {
            id: NodeId(self.node),
            kind: self.kind,
            p_set: self.p_set,
            p_min: self.p_min,
            p_max: self.p_max,
            droop_gain: self.droop_gain,
            q_droop_gain: self.q_droop_gain,
            cost_a: self.cost_a,
            cost_b: self.cost_b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederSpec {
    #[serde(default = "default_source_voltage")]
    pub source_voltage_pu: f64,
    pub base_mva: f64,
    pub segments: Vec<Segment>,
    /// Fraction of `load_mw` withdrawn at each bus `1..=segments.len()`;
    /// the remainder sits at the source bus.
    #[serde(default)]
    pub load_share: Vec<f64>,
}

fn default_source_voltage() -> f64 {
    1.0
}

impl FeederSpec {
    pub fn model(&self) -> FeederModel {
        FeederModel {
            segments: self.segments.clone(),
            source_voltage_pu: self.source_voltage_pu,
            base_mva: self.base_mva,
            injections: vec![Default::default(); self.segments.len()],
        }
    }

    /// Load share at bus `k` (1-based); zero when not listed.
    pub fn share(&self, bus: usize) -> f64 {
        bus.checked_sub(1)
            .and_then(|k| self.load_share.get(k))
            .copied()
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    #[serde(default)]
    pub secondary: Option<SecondaryParams>,
    #[serde(default)]
    pub tertiary: Option<TertiaryParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterLevelLink {
    pub parent: String,
    pub child: String,
    /// Node of the parent graph hosting the child's coupling agent.
    pub pcc_node: usize,
    /// Parent feeder bus of the PCC.
    #[serde(default)]
    pub bus: usize,
}

fn valid_label(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | ':'))
}

impl Scenario {
    pub fn microgrid_index(&self, id: &str) -> Option<usize> {
        self.microgrids.iter().position(|m| m.id == id)
    }

    /// Index of the parent microgrid of each microgrid.
    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut parents = vec![None; self.microgrids.len()];
        for link in &self.inter_level_links {
            if let (Some(p), Some(c)) = (self.microgrid_index(&link.parent), self.microgrid_index(&link.child)) {
                parents[c] = Some(p);
            }
        }
        parents
    }

    /// Checks every cross-reference and invariant; errors carry the path of
    /// the offending field.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let schema = |path: &str, msg: String| ScenarioError::SchemaViolation {
            path: path.to_string(),
            message: msg,
        };
        let dangling = |path: &str, msg: String| ScenarioError::DanglingReference {
            path: path.to_string(),
            message: msg,
        };

        if self.schema_version != SCHEMA_VERSION {
            return Err(schema(
                "schema_version",
                format!("unsupported version {:?}, expected {SCHEMA_VERSION:?}", self.schema_version),
            ));
        }
        let p = self.channel.loss_probability;
        if !(0.0..=1.0).contains(&p) {
            return Err(schema("channel.loss_probability", "must lie in [0, 1]".into()));
        }
        if !(self.limits.voltage_band_pu > 0.0) {
            return Err(schema("limits.voltage_band_pu", "must be positive".into()));
        }
        if !(self.limits.frequency_band_hz > 0.0) {
            return Err(schema("limits.frequency_band_hz", "must be positive".into()));
        }
        if self.microgrids.is_empty() {
            return Err(schema("microgrids", "at least one microgrid is required".into()));
        }

        let mut ids = BTreeSet::new();
        for (m, mg) in self.microgrids.iter().enumerate() {
            if !valid_label(&mg.id) {
                return Err(schema(&format!("microgrids[{m}].id"), format!("invalid label {:?}", mg.id)));
            }
            if !ids.insert(mg.id.as_str()) {
                return Err(schema(&format!("microgrids[{m}].id"), format!("duplicate id {:?}", mg.id)));
            }
        }

        // Inter-level links: resolve, then check that they form one tree.
        let mut parent_of: BTreeMap<usize, usize> = BTreeMap::new();
        let mut pcc_nodes: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); self.microgrids.len()];
        for (l, link) in self.inter_level_links.iter().enumerate() {
            let parent = self.microgrid_index(&link.parent).ok_or_else(|| {
                dangling(
                    &format!("inter_level_links[{l}].parent"),
                    format!("unknown microgrid {:?}", link.parent),
                )
            })?;
            let child = self.microgrid_index(&link.child).ok_or_else(|| {
                dangling(
                    &format!("inter_level_links[{l}].child"),
                    format!("unknown microgrid {:?}", link.child),
                )
            })?;
            if parent_of.insert(child, parent).is_some() {
                return Err(schema(
                    &format!("inter_level_links[{l}].child"),
                    format!("microgrid {:?} has two parents; levels must form a tree", link.child),
                ));
            }
            let node_count = self.microgrids[parent].graph.node_count;
            if link.pcc_node >= node_count {
                return Err(dangling(
                    &format!("inter_level_links[{l}].pcc_node"),
                    format!("node {} does not exist in microgrid {:?}", link.pcc_node, link.parent),
                ));
            }
            if pcc_nodes[parent].insert(link.pcc_node, child).is_some() {
                return Err(schema(
                    &format!("inter_level_links[{l}].pcc_node"),
                    format!("node {} already hosts a coupling agent", link.pcc_node),
                ));
            }
            let buses = self.microgrids[parent].feeder.as_ref().map_or(0, |f| f.segments.len());
            if link.bus > buses {
                return Err(dangling(
                    &format!("inter_level_links[{l}].bus"),
                    format!("bus {} does not exist", link.bus),
                ));
            }
        }
        for start in 0..self.microgrids.len() {
            let mut seen = BTreeSet::from([start]);
            let mut cur = start;
            while let Some(&p) = parent_of.get(&cur) {
                if !seen.insert(p) {
                    return Err(schema("inter_level_links", "levels must form a tree (cycle found)".into()));
                }
                cur = p;
            }
        }
        let roots = (0..self.microgrids.len()).filter(|m| !parent_of.contains_key(m)).count();
        if roots != 1 {
            return Err(schema(
                "inter_level_links",
                format!("levels must form a tree ({roots} roots)"),
            ));
        }

        let nominal = self.microgrids[0].nominal_frequency_hz;
        for (m, mg) in self.microgrids.iter().enumerate() {
            let at = |field: &str| format!("microgrids[{m}].{field}");
            if !(mg.nominal_frequency_hz > 0.0) || mg.nominal_frequency_hz != nominal {
                return Err(schema(
                    &at("nominal_frequency_hz"),
                    "all microgrids share one positive nominal frequency".into(),
                ));
            }
            if !mg.load_mw.is_finite() {
                return Err(schema(&at("load_mw"), "must be finite".into()));
            }
            let graph = mg.graph.build().map_err(|e| match e {
                TopologyError::InvalidNode { node, .. } => {
                    let k = mg.graph.edges.iter().position(|e| e.contains(&node)).unwrap_or(0);
                    dangling(&at(&format!("graph.edges[{k}]")), format!("node {node} does not exist"))
                }
                TopologyError::SelfLoop(n) => {
                    let k = mg.graph.edges.iter().position(|e| e == &[n, n]).unwrap_or(0);
                    schema(&at(&format!("graph.edges[{k}]")), format!("self-loop on node {n}"))
                }
                TopologyError::EpsilonOutOfRange { .. } => schema(&at("graph.epsilon"), e.to_string()),
                other => schema(&at("graph.node_count"), other.to_string()),
            })?;

            let buses = mg.feeder.as_ref().map_or(0, |f| f.segments.len());
            let mut owner: Vec<Option<&str>> = vec![None; graph.node_count()];
            for &node in pcc_nodes[m].keys() {
                owner[node] = Some("coupling agent");
            }
            let mut names = BTreeSet::new();
            for (d, der) in mg.ders.iter().enumerate() {
                let at_der = |field: &str| at(&format!("ders[{d}].{field}"));
                if der.node >= graph.node_count() {
                    return Err(dangling(&at_der("node"), format!("node {} does not exist", der.node)));
                }
                if let Some(prev) = owner[der.node] {
                    return Err(schema(
                        &at_der("node"),
                        format!("node {} is already mapped to a {prev}", der.node),
                    ));
                }
                owner[der.node] = Some("DER");
                if let Some(name) = &der.name {
                    if !valid_label(name) {
                        return Err(schema(&at_der("name"), format!("invalid label {name:?}")));
                    }
                    if !names.insert(name.clone()) {
                        return Err(schema(&at_der("name"), format!("duplicate name {name:?}")));
                    }
                }
                if der.bus > buses {
                    return Err(dangling(&at_der("bus"), format!("bus {} does not exist", der.bus)));
                }
                der.spec()
                    .validate()
                    .map_err(|e| schema(&at(&format!("ders[{d}]")), e.to_string()))?;
            }
            if let Some(node) = owner.iter().position(Option::is_none) {
                return Err(schema(
                    &at("ders"),
                    format!("node {node} maps to neither a DER nor a coupling agent"),
                ));
            }
            if parent_of.contains_key(&m) && mg.ders.is_empty() {
                return Err(schema(&at("ders"), "a child microgrid needs at least one DER".into()));
            }
            if let Some(feeder) = &mg.feeder {
                feeder
                    .model()
                    .validate()
                    .map_err(|e| schema(&at("feeder"), e.to_string()))?;
                if feeder.load_share.len() != feeder.segments.len() {
                    return Err(schema(&at("feeder.load_share"), "one share per feeder bus is required".into()));
                }
                let total: f64 = feeder.load_share.iter().sum();
                if feeder.load_share.iter().any(|s| !(*s >= 0.0)) || total > 1.0 + 1e-9 {
                    return Err(schema(&at("feeder.load_share"), "shares must be non-negative and sum to at most 1".into()));
                }
            }
            if let Some(init) = &mg.consensus_init {
                if init.len() != graph.node_count() {
                    return Err(schema(&at("consensus_init"), "one value per node is required".into()));
                }
            }
            if let Some(sec) = &mg.control.secondary {
                sec.validate()
                    .map_err(|e| schema(&at("control.secondary"), e.to_string()))?;
            }
            if let Some(ter) = &mg.control.tertiary {
                ter.validate()
                    .map_err(|e| schema(&at("control.tertiary"), e.to_string()))?;
                if let Some(d) = mg.ders.iter().position(|d| !d.spec().is_dispatchable()) {
                    return Err(schema(
                        &at(&format!("ders[{d}].kind")),
                        "tertiary control needs every DER to be dispatchable".into(),
                    ));
                }
                for &child in pcc_nodes[m].values() {
                    if self.microgrids[child].control.tertiary.is_none() {
                        return Err(schema(
                            &format!("microgrids[{child}].control.tertiary"),
                            "children of a microgrid with tertiary control need it as well".into(),
                        ));
                    }
                }
            }
        }

        self.validate_faults()
    }

    /// Replays the fault schedule against liveness so that every event has
    /// a valid target when it fires.
    fn validate_faults(&self) -> Result<(), ScenarioError> {
        let mut live: Vec<Vec<bool>> = self
            .microgrids
            .iter()
            .map(|m| vec![true; m.graph.node_count])
            .collect();
        let mut failed_links: Vec<BTreeSet<[usize; 2]>> = vec![BTreeSet::new(); self.microgrids.len()];
        let mut order: Vec<usize> = (0..self.faults.len()).collect();
        order.sort_by_key(|&k| self.faults[k].at_round);
        for k in order {
            let f = &self.faults[k];
            let at = |field: &str| format!("faults[{k}].{field}");
            let bad = |field: &str, msg: String| ScenarioError::SchemaViolation {
                path: at(field),
                message: msg,
            };
            let m = self.microgrid_index(&f.microgrid).ok_or_else(|| ScenarioError::DanglingReference {
                path: at("microgrid"),
                message: format!("unknown microgrid {:?}", f.microgrid),
            })?;
            let mg = &self.microgrids[m];
            let wants = match f.kind {
                FaultKind::AgentFail | FaultKind::AgentRestore => (true, false, false),
                FaultKind::LinkFail | FaultKind::LinkRestore => (false, true, false),
                FaultKind::LoadStep => (false, false, true),
            };
            let has = (f.node.is_some(), f.edge.is_some(), f.delta_mw.is_some());
            if has != wants {
                let field = if wants.0 {
                    "node"
                } else if wants.1 {
                    "edge"
                } else {
                    "delta_mw"
                };
                return Err(bad(field, format!("{} takes exactly the `{field}` target", f.kind.as_str())));
            }
            match f.kind {
                FaultKind::AgentFail | FaultKind::AgentRestore => {
                    let node = f.node.unwrap_or_default();
                    if node >= mg.graph.node_count {
                        return Err(ScenarioError::DanglingReference {
                            path: at("node"),
                            message: format!("node {node} does not exist in microgrid {:?}", mg.id),
                        });
                    }
                    let alive = &mut live[m];
                    if f.kind == FaultKind::AgentFail {
                        if !alive[node] {
                            return Err(bad("node", format!("agent {node} is already failed")));
                        }
                        if alive.iter().filter(|&&l| l).count() < 2 {
                            return Err(bad("node", "cannot fail the last live agent".into()));
                        }
                        alive[node] = false;
                    } else {
                        if alive[node] {
                            return Err(bad("node", format!("agent {node} is live")));
                        }
                        alive[node] = true;
                    }
                }
                FaultKind::LinkFail | FaultKind::LinkRestore => {
                    let [i, j] = f.edge.unwrap_or_default();
                    let key = [i.min(j), i.max(j)];
                    let exists = mg
                        .graph
                        .edges
                        .iter()
                        .any(|&[a, b]| [a.min(b), a.max(b)] == key);
                    if !exists {
                        return Err(ScenarioError::DanglingReference {
                            path: at("edge"),
                            message: format!("edge {i}-{j} is not in microgrid {:?}", mg.id),
                        });
                    }
                    let failed = &mut failed_links[m];
                    if f.kind == FaultKind::LinkFail && !failed.insert(key) {
                        return Err(bad("edge", format!("link {i}-{j} is already failed")));
                    }
                    if f.kind == FaultKind::LinkRestore && !failed.remove(&key) {
                        return Err(bad("edge", format!("link {i}-{j} is not failed")));
                    }
                }
                FaultKind::LoadStep => {
                    if !f.delta_mw.unwrap_or_default().is_finite() {
                        return Err(bad("delta_mw", "must be finite".into()));
                    }
                }
            }
        }
        Ok(())
    }
}
