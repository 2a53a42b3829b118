use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    deliver_round, ChannelModel, FaultEvent, FaultKind, LayerOutcome, MicrogridRound, NodeRecord,
    RoundRecord, SetpointChange, SimError,
};
use crate::control::{
    aggregate_microgrid, apply_corrections, run_tertiary, secondary_update, ControlError,
    CouplingProfile, SecondaryParams, TertiaryParams,
};
use crate::epidemic::{consensus_residual, consensus_step_with, ConsensusState};
use crate::grid_model::{
    feeder_voltages, primary_droop_power, reactive_droop_power, solve_lumped_frequency, DerSpec,
    FeederModel, GridError, Injection, Microgrid, FREQUENCY_BRACKET_HZ,
};
use crate::scenario_io::{FeederSpec, Scenario};
use crate::topology::{CommGraph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Agent {
    /// Index into `MgState::ders`.
    Der(usize),
    /// Index of the child microgrid.
    Coupling(usize),
}

#[derive(Debug, Clone)]
struct InFlight {
    arrival: u64,
    receiver: NodeId,
    sender: NodeId,
    value: f64,
}

#[derive(Debug, Clone)]
struct MgState {
    id: String,
    base: CommGraph,
    graph: CommGraph,
    failed_links: BTreeSet<(NodeId, NodeId)>,
    ders: Vec<DerSpec>,
    names: Vec<String>,
    buses: Vec<usize>,
    agents: Vec<Agent>,
    coupling_bus: BTreeMap<NodeId, usize>,
    load_mw: f64,
    feeder: Option<FeederSpec>,
    secondary: Option<SecondaryParams>,
    tertiary: Option<TertiaryParams>,
    consensus: ConsensusState,
    parked: BTreeMap<NodeId, f64>,
    views: BTreeMap<(NodeId, NodeId), f64>,
    in_flight: VecDeque<InFlight>,
}

impl MgState {
    fn der_at(&self, node: NodeId) -> Option<usize> {
        match self.agents[node.0] {
            Agent::Der(k) => Some(k),
            Agent::Coupling(_) => None,
        }
    }

    fn live_ders(&self) -> Vec<DerSpec> {
        self.graph
            .live_nodes()
            .filter_map(|n| self.der_at(n).map(|k| self.ders[k].clone()))
            .collect()
    }
}

/// Mutable simulation state for one scenario run.
#[derive(Debug, Clone)]
pub struct World {
    mgs: Vec<MgState>,
    root: usize,
    channel: ChannelModel,
    nominal_frequency: f64,
    rng: ChaCha8Rng,
}

/// New setpoints as (microgrid, DER index, MW).
type DispatchPlan = Vec<(usize, usize, f64)>;

#[derive(Debug, Clone, Copy)]
struct DerRef {
    mg: usize,
    der: usize,
}

impl World {
    /// Builds the initial state; `scenario` must already be validated.
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        let parents = scenario.parents();
        let root = parents.iter().position(Option::is_none).unwrap_or(0);
        let mut mgs = Vec::with_capacity(scenario.microgrids.len());
        for spec in &scenario.microgrids {
            let base = spec
                .graph
                .build()
                .map_err(|e| SimError::UnknownTarget(format!("microgrid {}: {e}", spec.id)))?;
            let mut agents = vec![Agent::Der(usize::MAX); base.node_count()];
            let mut coupling_bus = BTreeMap::new();
            for link in &scenario.inter_level_links {
                if link.parent == spec.id {
                    let child = scenario.microgrid_index(&link.child).unwrap_or_default();
                    agents[link.pcc_node] = Agent::Coupling(child);
                    coupling_bus.insert(NodeId(link.pcc_node), link.bus);
                }
            }
            let mut ders = Vec::new();
            let mut names = Vec::new();
            let mut buses = Vec::new();
            for entry in &spec.ders {
                agents[entry.node] = Agent::Der(ders.len());
                ders.push(entry.spec());
                names.push(
                    entry
                        .name
                        .clone()
                        .unwrap_or_else(|| format!("{}:{}", spec.id, entry.node)),
                );
                buses.push(entry.bus);
            }
            let init = match &spec.consensus_init {
                Some(values) => values.clone(),
                None => agents
                    .iter()
                    .map(|a| match *a {
                        Agent::Der(k) => ders[k].p_set,
                        Agent::Coupling(c) => scenario.microgrids[c].ders.iter().map(|d| d.p_set).sum(),
                    })
                    .collect(),
            };
            mgs.push(MgState {
                id: spec.id.clone(),
                graph: base.clone(),
                base,
                failed_links: BTreeSet::new(),
                ders,
                names,
                buses,
                agents,
                coupling_bus,
                load_mw: spec.load_mw,
                feeder: spec.feeder.clone(),
                secondary: spec.control.secondary.clone(),
                tertiary: spec.control.tertiary.clone(),
                consensus: ConsensusState::new(init),
                parked: BTreeMap::new(),
                views: BTreeMap::new(),
                in_flight: VecDeque::new(),
            });
        }
        Ok(World {
            mgs,
            root,
            channel: scenario.channel.clone(),
            nominal_frequency: scenario.microgrids[0].nominal_frequency_hz,
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
        })
    }

    fn mg_index(&self, id: &str) -> Result<usize, SimError> {
        self.mgs
            .iter()
            .position(|m| m.id == id)
            .ok_or_else(|| SimError::UnknownTarget(format!("microgrid {id:?}")))
    }

    /// Current communication graph of microgrid `id`.
    pub fn graph(&self, id: &str) -> Option<&CommGraph> {
        self.mgs.iter().find(|m| m.id == id).map(|m| &m.graph)
    }

    /// Current dissemination consensus state of microgrid `id`.
    pub fn consensus(&self, id: &str) -> Option<&ConsensusState> {
        self.mgs.iter().find(|m| m.id == id).map(|m| &m.consensus)
    }

    /// Applies one fault event.
    ///
    /// A failed agent is tombstoned in its graph and leaves dispatch; its
    /// consensus value is parked until it is restored. Link faults act on both
    /// directions at once.
    pub fn apply_fault(&mut self, event: &FaultEvent) -> Result<(), SimError> {
        let m = self.mg_index(&event.microgrid)?;
        let mg = &mut self.mgs[m];
        let unknown = |what: String| SimError::UnknownTarget(format!("{}: {what}", event.describe()));
        match event.kind {
            FaultKind::AgentFail => {
                let node = NodeId(event.node.ok_or_else(|| unknown("missing node".into()))?);
                if !mg.graph.is_live(node) {
                    return Err(unknown(format!("agent {node} is not live")));
                }
                mg.graph = mg
                    .graph
                    .remove_node(node)
                    .map_err(|e| unknown(e.to_string()))?;
                if let Some(v) = mg.consensus.value_of(node) {
                    mg.parked.insert(node, v);
                }
                mg.consensus = mg.consensus.without(node);
                mg.views.retain(|&(r, s), _| r != node && s != node);
                mg.in_flight.retain(|f| f.receiver != node && f.sender != node);
            }
            FaultKind::AgentRestore => {
                let node = NodeId(event.node.ok_or_else(|| unknown("missing node".into()))?);
                if node.0 >= mg.graph.node_count() || mg.graph.is_live(node) {
                    return Err(unknown(format!("agent {node} is not failed")));
                }
                let mut graph = mg
                    .graph
                    .restore_node(node)
                    .map_err(|e| unknown(e.to_string()))?;
                for &j in mg.base.neighbors(node).map_err(|e| unknown(e.to_string()))? {
                    let key = (node.min(j), node.max(j));
                    if graph.is_live(j) && !mg.failed_links.contains(&key) {
                        graph.add_edge(node, j).map_err(|e| unknown(e.to_string()))?;
                    }
                }
                mg.graph = graph;
                let value = mg.parked.remove(&node).unwrap_or_default();
                mg.consensus = mg.consensus.with(node, value);
            }
            FaultKind::LinkFail | FaultKind::LinkRestore => {
                let [i, j] = event.edge.ok_or_else(|| unknown("missing edge".into()))?;
                let (i, j) = (NodeId(i.min(j)), NodeId(i.max(j)));
                if !mg.base.has_edge(i, j) {
                    return Err(unknown(format!("edge {i}-{j} not in graph")));
                }
                if event.kind == FaultKind::LinkFail {
                    if !mg.failed_links.insert((i, j)) {
                        return Err(unknown(format!("link {i}-{j} already failed")));
                    }
                    mg.graph.remove_edge(i, j);
                } else {
                    if !mg.failed_links.remove(&(i, j)) {
                        return Err(unknown(format!("link {i}-{j} is not failed")));
                    }
                    if mg.graph.is_live(i) && mg.graph.is_live(j) {
                        mg.graph.add_edge(i, j).map_err(|e| unknown(e.to_string()))?;
                    }
                }
            }
            FaultKind::LoadStep => {
                mg.load_mw += event.delta_mw.ok_or_else(|| unknown("missing delta_mw".into()))?;
            }
        }
        Ok(())
    }

    /// Dissemination step with channel loss and delay for microgrid `m`.
    fn disseminate(&mut self, m: usize, round: u64) -> (u64, u64) {
        let mg = &mut self.mgs[m];
        let delivery = deliver_round(&mg.graph.edges(), &self.channel, &mut self.rng);
        let delay = self.channel.delay_rounds;
        let next = if delay == 0 {
            consensus_step_with(&mg.consensus, &mg.graph, |i, j, x_j| {
                delivery.is_delivered(i, j).then_some(x_j)
            })
        } else {
            for &(i, j) in &delivery.delivered {
                for (receiver, sender) in [(i, j), (j, i)] {
                    if let Some(value) = mg.consensus.value_of(sender) {
                        mg.in_flight.push_back(InFlight {
                            arrival: round + delay,
                            receiver,
                            sender,
                            value,
                        });
                    }
                }
            }
            let views = &mut mg.views;
            mg.in_flight.retain(|f| {
                if f.arrival <= round {
                    views.insert((f.receiver, f.sender), f.value);
                    false
                } else {
                    true
                }
            });
            let views = &mg.views;
            consensus_step_with(&mg.consensus, &mg.graph, |i, j, _| views.get(&(i, j)).copied())
        };
        mg.consensus = next.expect("consensus state tracks the live graph");
        (delivery.messages_delivered(), delivery.messages_lost())
    }

    /// Agents of microgrid `m` as DERs, aligned with its live nodes; coupling
    /// agents appear as the aggregate of their child microgrid.
    fn effective_agents(&self, m: usize) -> Result<Vec<DerSpec>, ControlError> {
        let mg = &self.mgs[m];
        mg.graph
            .live_nodes()
            .map(|n| match mg.agents[n.0] {
                Agent::Der(k) => Ok(mg.ders[k].clone()),
                Agent::Coupling(c) => Ok(self.profile(c)?.as_der(n)),
            })
            .collect()
    }

    fn profile(&self, m: usize) -> Result<CouplingProfile, ControlError> {
        let mg = &self.mgs[m];
        aggregate_microgrid(&Microgrid {
            id: mg.id.clone(),
            ders: self.effective_agents(m)?,
            feeder: FeederModel::source_only(1.0),
            nominal_frequency: self.nominal_frequency,
            load_mw: 0.0,
        })
    }

    /// Live DERs that the tertiary tree rooted at `self.root` can command.
    fn commanded(&self) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        let mut stack = vec![self.root];
        while let Some(m) = stack.pop() {
            let mg = &self.mgs[m];
            for n in mg.graph.live_nodes() {
                match mg.agents[n.0] {
                    Agent::Der(k) => {
                        out.insert((m, k));
                    }
                    Agent::Coupling(c) => stack.push(c),
                }
            }
        }
        out
    }

    fn plan_dispatch(
        &mut self,
        m: usize,
        demand: f64,
        plan: &mut DispatchPlan,
    ) -> Result<(), ControlError> {
        let agents = self.effective_agents(m)?;
        let params = self.mgs[m].tertiary.clone().unwrap_or_default();
        let graph = self.mgs[m].graph.clone();
        let (state, report) = run_tertiary(&agents, &graph, demand, &params, None, &mut self.rng)?;
        if !report.converged {
            return Err(ControlError::NotConverged {
                residual: report.lambda_spread.max(report.max_abs_mismatch),
            });
        }
        let outputs = state.dispatch(&agents);
        for (node, p) in graph.live_nodes().zip(outputs) {
            match self.mgs[m].agents[node.0] {
                Agent::Der(k) => plan.push((m, k, p)),
                Agent::Coupling(c) => self.plan_dispatch(c, p, plan)?,
            }
        }
        Ok(())
    }

    /// Economic re-dispatch of the whole level tree. Setpoints change only if
    /// every level succeeds.
    fn tertiary(&mut self) -> Option<Result<DispatchPlan, ControlError>> {
        self.mgs[self.root].tertiary.as_ref()?;
        let commanded = self.commanded();
        let total_load: f64 = self.mgs.iter().map(|m| m.load_mw).sum();
        let fixed: f64 = self
            .all_live_ders()
            .iter()
            .filter(|r| !commanded.contains(&(r.mg, r.der)))
            .map(|r| self.mgs[r.mg].ders[r.der].p_set)
            .sum();
        let mut plan = Vec::new();
        Some(
            self.plan_dispatch(self.root, total_load - fixed, &mut plan)
                .map(|_| plan),
        )
    }

    fn all_live_ders(&self) -> Vec<DerRef> {
        self.mgs
            .iter()
            .enumerate()
            .flat_map(|(m, mg)| {
                mg.graph
                    .live_nodes()
                    .filter_map(move |n| mg.der_at(n).map(|der| DerRef { mg: m, der }))
            })
            .collect()
    }

    /// Lumped frequency over every live DER. When the load cannot be met the
    /// deviation saturates at the bracket edge.
    fn primary(&self) -> (f64, Vec<(DerRef, f64)>, bool) {
        let refs = self.all_live_ders();
        let ders: Vec<DerSpec> = refs
            .iter()
            .map(|r| self.mgs[r.mg].ders[r.der].clone())
            .collect();
        let load: f64 = self.mgs.iter().map(|m| m.load_mw).sum();
        let physical = Microgrid {
            id: "system".into(),
            ders,
            feeder: FeederModel::source_only(1.0),
            nominal_frequency: self.nominal_frequency,
            load_mw: load,
        };
        let (delta_f, saturated) = match solve_lumped_frequency(&physical) {
            Ok(sol) => (sol.delta_f, false),
            Err(GridError::Infeasible { .. } | GridError::NoDroopResponse { .. }) => {
                let scheduled: f64 = physical.ders.iter().map(|d| d.p_set).sum();
                let edge = if load > scheduled {
                    -FREQUENCY_BRACKET_HZ
                } else {
                    FREQUENCY_BRACKET_HZ
                };
                (edge, true)
            }
            Err(other) => unreachable!("lumped solve: {other}"),
        };
        let outputs = refs
            .into_iter()
            .zip(&physical.ders)
            .map(|(r, d)| (r, primary_droop_power(d, delta_f)))
            .collect();
        (delta_f, outputs, saturated)
    }

    fn secondary(&mut self, m: usize, delta_f: f64) -> LayerOutcome {
        let mg = &self.mgs[m];
        let params = mg.secondary.clone().expect("secondary configured");
        let view = Microgrid {
            id: mg.id.clone(),
            ders: mg.live_ders(),
            feeder: FeederModel::source_only(1.0),
            nominal_frequency: self.nominal_frequency,
            load_mw: mg.load_mw,
        };
        let measured = vec![delta_f; mg.graph.live_count()];
        match secondary_update(&view, &mg.graph, &params, &measured) {
            Ok(corrections) => {
                let before: Vec<f64> = self.mgs[m].ders.iter().map(|d| d.p_set).collect();
                apply_corrections(&mut self.mgs[m].ders, &corrections);
                let changes = corrections
                    .iter()
                    .filter_map(|c| {
                        let k = self.mgs[m].der_at(c.der)?;
                        Some(SetpointChange {
                            node: c.der,
                            before: before[k],
                            after: self.mgs[m].ders[k].p_set,
                        })
                    })
                    .collect();
                LayerOutcome::Applied { changes }
            }
            Err(err) => LayerOutcome::Skipped {
                reason: err.to_string(),
            },
        }
    }

    /// Solves bus voltages of microgrid `m` with Q-V droop by fixed-point
    /// iteration on the linear feeder model.
    fn voltages(&self, m: usize, outputs: &BTreeMap<(usize, usize), f64>) -> Vec<f64> {
        let mg = &self.mgs[m];
        let Some(spec) = &mg.feeder else {
            return vec![1.0];
        };
        let feeder = spec.model();
        let buses = feeder.bus_count();
        let mut volts = vec![feeder.source_voltage_pu; buses];
        let live: Vec<usize> = mg.graph.live_nodes().filter_map(|n| mg.der_at(n)).collect();
        for _ in 0..100 {
            let mut withdrawal: Vec<(f64, f64)> = (0..buses)
                .map(|b| (spec.share(b) * mg.load_mw, 0.0))
                .collect();
            for &k in &live {
                let der = &mg.ders[k];
                let bus = mg.buses[k];
                let p = outputs.get(&(m, k)).copied().unwrap_or(0.0);
                let q = reactive_droop_power(der, volts[bus]).unwrap_or(0.0);
                withdrawal[bus].0 -= p;
                withdrawal[bus].1 -= q;
            }
            let injections = withdrawal[1..]
                .iter()
                .map(|&(p, q)| Injection::from_mw(p, q, feeder.base_mva))
                .collect();
            let next = feeder_voltages(&feeder.with_injections(injections));
            let change = next
                .iter()
                .zip(&volts)
                .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
            volts = next;
            if change <= 1e-13 {
                break;
            }
        }
        volts
    }

    fn subtree_output(&self, m: usize, outputs: &BTreeMap<(usize, usize), f64>) -> f64 {
        let mg = &self.mgs[m];
        mg.graph
            .live_nodes()
            .map(|n| match mg.agents[n.0] {
                Agent::Der(k) => outputs.get(&(m, k)).copied().unwrap_or(0.0),
                Agent::Coupling(c) => self.subtree_output(c, outputs),
            })
            .sum()
    }

    /// Executes one round and returns its record.
    pub fn advance(&mut self, round: u64, due: &[&FaultEvent]) -> Result<RoundRecord, SimError> {
        let mut demand_event = round == 0;
        for event in due {
            self.apply_fault(event)?;
            demand_event |= event.kind.changes_demand();
        }

        let mut rounds: Vec<MicrogridRound> = Vec::with_capacity(self.mgs.len());
        for m in 0..self.mgs.len() {
            let (delivered, lost) = self.disseminate(m, round);
            rounds.push(MicrogridRound {
                id: self.mgs[m].id.clone(),
                residual: consensus_residual(&self.mgs[m].consensus),
                msgs_delivered: delivered,
                msgs_lost: lost,
                secondary: None,
                tertiary: None,
            });
        }

        if demand_event {
            match self.tertiary() {
                None => {}
                Some(Ok(plan)) => {
                    let mut changes: BTreeMap<usize, Vec<SetpointChange>> = BTreeMap::new();
                    for (m, k, p) in plan {
                        let der = &mut self.mgs[m].ders[k];
                        changes.entry(m).or_default().push(SetpointChange {
                            node: der.id,
                            before: der.p_set,
                            after: p,
                        });
                        der.p_set = p.clamp(der.p_min, der.p_max);
                    }
                    for (m, changes) in changes {
                        rounds[m].tertiary = Some(LayerOutcome::Applied { changes });
                    }
                }
                Some(Err(err)) => {
                    rounds[self.root].tertiary = Some(LayerOutcome::Skipped {
                        reason: err.to_string(),
                    });
                }
            }
        }

        let (mut delta_f, mut outputs, mut saturated) = self.primary();
        let mut corrected = false;
        for (m, slot) in rounds.iter_mut().enumerate() {
            let due = self.mgs[m]
                .secondary
                .as_ref()
                .is_some_and(|p| round.is_multiple_of(p.period_rounds));
            if due {
                let outcome = self.secondary(m, delta_f);
                corrected |= matches!(&outcome, LayerOutcome::Applied { changes } if !changes.is_empty());
                slot.secondary = Some(outcome);
            }
        }
        if corrected {
            (delta_f, outputs, saturated) = self.primary();
        }

        let output_map: BTreeMap<(usize, usize), f64> =
            outputs.iter().map(|(r, p)| ((r.mg, r.der), *p)).collect();
        let generation_cost = outputs
            .iter()
            .map(|(r, p)| {
                let der = &self.mgs[r.mg].ders[r.der];
                if der.is_dispatchable() {
                    der.cost(*p)
                } else {
                    0.0
                }
            })
            .sum();

        let mut nodes = Vec::new();
        for (m, mg) in self.mgs.iter().enumerate() {
            let volts = self.voltages(m, &output_map);
            for n in mg.graph.live_nodes() {
                let record = match mg.agents[n.0] {
                    Agent::Der(k) => NodeRecord {
                        microgrid: mg.id.clone(),
                        node: n,
                        der_id: mg.names[k].clone(),
                        voltage_pu: volts[mg.buses[k]],
                        p_mw: output_map.get(&(m, k)).copied().unwrap_or(0.0),
                        p_set_mw: mg.ders[k].p_set,
                    },
                    Agent::Coupling(c) => {
                        let bus = mg.coupling_bus.get(&n).copied().unwrap_or(0);
                        let p = self.subtree_output(c, &output_map);
                        NodeRecord {
                            microgrid: mg.id.clone(),
                            node: n,
                            der_id: format!("pcc:{}", self.mgs[c].id),
                            voltage_pu: volts[bus],
                            p_mw: p,
                            p_set_mw: p,
                        }
                    }
                };
                nodes.push(record);
            }
        }

        let mut active_faults = Vec::new();
        for mg in &self.mgs {
            for n in 0..mg.graph.node_count() {
                if !mg.graph.is_live(NodeId(n)) {
                    active_faults.push(format!("agent_fail {}:{}", mg.id, n));
                }
            }
            for (i, j) in &mg.failed_links {
                active_faults.push(format!("link_fail {}:{}-{}", mg.id, i, j));
            }
        }

        Ok(RoundRecord {
            round,
            frequency_hz: self.nominal_frequency + delta_f,
            delta_f_hz: delta_f,
            primary_saturated: saturated,
            generation_cost,
            nodes,
            microgrids: rounds,
            active_faults,
        })
    }
}
