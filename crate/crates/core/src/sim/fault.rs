use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    AgentFail,
    AgentRestore,
    LinkFail,
    LinkRestore,
    LoadStep,
}

impl FaultKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::AgentFail => "agent_fail",
            FaultKind::AgentRestore => "agent_restore",
            FaultKind::LinkFail => "link_fail",
            FaultKind::LinkRestore => "link_restore",
            FaultKind::LoadStep => "load_step",
        }
    }

    /// Events that change who generates or how much is consumed.
    pub fn changes_demand(self) -> bool {
        matches!(
            self,
            FaultKind::AgentFail | FaultKind::AgentRestore | FaultKind::LoadStep
        )
    }
}

/// A scheduled disturbance. The target field used depends on `kind`:
/// `node` for agent events, `edge` for link events, `delta_mw` for load steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultEvent {
    pub at_round: u64,
    pub kind: FaultKind,
    pub microgrid: String,
    #[serde(default)]
    pub node: Option<usize>,
    #[serde(default)]
    pub edge: Option<[usize; 2]>,
    #[serde(default)]
    pub delta_mw: Option<f64>,
}

impl FaultEvent {
    pub fn describe(&self) -> String {
        match (self.node, self.edge, self.delta_mw) {
            (Some(n), _, _) => format!("{} {}:{}", self.kind.as_str(), self.microgrid, n),
            (_, Some([i, j]), _) => format!("{} {}:{}-{}", self.kind.as_str(), self.microgrid, i, j),
            (_, _, Some(d)) => format!("{} {} {:+}", self.kind.as_str(), self.microgrid, d),
            _ => format!("{} {}", self.kind.as_str(), self.microgrid),
        }
    }
}
