use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{LayerOutcome, SimTrace};

pub const CSV_HEADER: &str = "round,freq_hz,node_id,voltage_pu,der_id,p_mw,residual,msgs_delivered,msgs_lost";

/// A fault counts as recovered once |Δf| falls to this level.
pub const RESTORE_TOL_HZ: f64 = 1e-6;

const DECIMALS: usize = 12;

/// Fixed-point rendering used in every numeric CSV column. Negative zero is
/// printed without its sign so equal traces stay textually equal.
pub fn format_number(value: f64) -> String {
    let text = format!("{value:.DECIMALS$}");
    match text.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        _ => text,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub round: u64,
    pub freq_hz: f64,
    pub node_id: String,
    pub voltage_pu: f64,
    pub der_id: String,
    pub p_mw: f64,
    pub residual: f64,
    pub msgs_delivered: u64,
    pub msgs_lost: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultRecovery {
    pub fault: String,
    pub at_round: u64,
    /// Rounds from the fault until |Δf| ≤ [`RESTORE_TOL_HZ`]; `None` if that
    /// never happens before the run ends.
    pub rounds_to_restore: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicrogridConsensus {
    pub microgrid: String,
    /// Dissemination steps after which the residual stayed within tolerance.
    /// Each round's record holds the residual after that round's step, so the
    /// count runs one past the record index. `None` if the final residual is
    /// above tolerance.
    pub rounds_to_converge: Option<u64>,
    pub final_residual: f64,
    pub messages_delivered: u64,
    pub messages_lost: u64,
    pub secondary_activations: u64,
    pub secondary_skips: u64,
    pub tertiary_dispatches: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violations {
    pub voltage_out_of_band: bool,
    pub frequency_out_of_band: bool,
    pub voltage_violation_rounds: u64,
    pub frequency_violation_rounds: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub rounds: u64,
    pub final_frequency_hz: Option<f64>,
    pub min_voltage_pu: Option<f64>,
    pub max_voltage_pu: Option<f64>,
    /// Quadratic generation cost summed over dispatchable DERs in the final round.
    pub total_generation_cost: Option<f64>,
    pub saturated_rounds: u64,
    pub fault_recovery: Vec<FaultRecovery>,
    pub consensus: Vec<MicrogridConsensus>,
    pub violations: Violations,
}

impl SummaryReport {
    pub fn from_trace(trace: &SimTrace) -> Self {
        let records = &trace.records;
        let last = records.last();
        let voltages = || records.iter().flat_map(|r| r.nodes.iter().map(|n| n.voltage_pu));
        let v_band = trace.meta.voltage_band_pu;
        let f_band = trace.meta.frequency_band_hz;

        let fault_recovery = trace
            .meta
            .faults
            .iter()
            .map(|f| FaultRecovery {
                fault: f.describe(),
                at_round: f.at_round,
                rounds_to_restore: records
                    .iter()
                    .find(|r| r.round >= f.at_round && r.delta_f_hz.abs() <= RESTORE_TOL_HZ)
                    .map(|r| r.round - f.at_round),
            })
            .collect();

        let consensus = trace
            .meta
            .microgrids
            .iter()
            .enumerate()
            .map(|(m, id)| {
                let rows = || records.iter().map(move |r| &r.microgrids[m]);
                let final_residual = records.last().map_or(0.0, |r| r.microgrids[m].residual);
                let rounds_to_converge = if final_residual > trace.meta.consensus_tol {
                    None
                } else {
                    Some(
                        records
                            .iter()
                            .rposition(|r| r.microgrids[m].residual > trace.meta.consensus_tol)
                            .map_or(0, |k| k as u64 + 2),
                    )
                };
                let count = |pick: fn(&crate::sim::MicrogridRound) -> bool| rows().filter(|g| pick(g)).count() as u64;
                MicrogridConsensus {
                    microgrid: id.clone(),
                    rounds_to_converge,
                    final_residual,
                    messages_delivered: rows().map(|g| g.msgs_delivered).sum(),
                    messages_lost: rows().map(|g| g.msgs_lost).sum(),
                    secondary_activations: count(|g| matches!(g.secondary, Some(LayerOutcome::Applied { .. }))),
                    secondary_skips: count(|g| matches!(g.secondary, Some(LayerOutcome::Skipped { .. }))),
                    tertiary_dispatches: count(|g| matches!(g.tertiary, Some(LayerOutcome::Applied { .. }))),
                }
            })
            .collect();

        let voltage_violation_rounds = records
            .iter()
            .filter(|r| r.nodes.iter().any(|n| (n.voltage_pu - 1.0).abs() > v_band))
            .count() as u64;
        let frequency_violation_rounds = records.iter().filter(|r| r.delta_f_hz.abs() > f_band).count() as u64;

        SummaryReport {
            rounds: records.len() as u64,
            final_frequency_hz: last.map(|r| r.frequency_hz),
            min_voltage_pu: voltages().reduce(f64::min),
            max_voltage_pu: voltages().reduce(f64::max),
            total_generation_cost: last.map(|r| r.generation_cost),
            saturated_rounds: records.iter().filter(|r| r.primary_saturated).count() as u64,
            fault_recovery,
            consensus,
            violations: Violations {
                voltage_out_of_band: voltage_violation_rounds > 0,
                frequency_out_of_band: frequency_violation_rounds > 0,
                voltage_violation_rounds,
                frequency_violation_rounds,
            },
        }
    }
}

/// Serializes a trace to its CSV table and JSON summary.
pub fn write_trace(trace: &SimTrace) -> (Vec<u8>, Vec<u8>) {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    writer
        .write_record(CSV_HEADER.split(','))
        .expect("in-memory write");
    let index: BTreeMap<&str, usize> = trace
        .meta
        .microgrids
        .iter()
        .enumerate()
        .map(|(k, id)| (id.as_str(), k))
        .collect();
    for record in &trace.records {
        for node in &record.nodes {
            let mg = &record.microgrids[index[node.microgrid.as_str()]];
            writer
                .write_record([
                    record.round.to_string(),
                    format_number(record.frequency_hz),
                    format!("{}:{}", node.microgrid, node.node),
                    format_number(node.voltage_pu),
                    node.der_id.clone(),
                    format_number(node.p_mw),
                    format_number(mg.residual),
                    mg.msgs_delivered.to_string(),
                    mg.msgs_lost.to_string(),
                ])
                .expect("in-memory write");
        }
    }
    let csv = writer.into_inner().expect("in-memory flush");
    let mut summary = serde_json::to_vec_pretty(&SummaryReport::from_trace(trace)).expect("summary serializes");
    summary.push(b'\n');
    (csv, summary)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("trace header mismatch: expected `{CSV_HEADER}`")]
    Header,
    #[error("trace line {line}: {message}")]
    Row { line: u64, message: String },
}

/// Parses a trace table produced by [`write_trace`].
pub fn read_trace_csv(bytes: &[u8]) -> Result<Vec<CsvRow>, TraceError> {
    let mut reader = csv::Reader::from_reader(bytes);
    let header = reader.headers().map_err(|_| TraceError::Header)?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(TraceError::Header);
    }
    reader
        .deserialize()
        .map(|row| {
            row.map_err(|e| TraceError::Row {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Figures recoverable from a trace table alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDigest {
    pub rows: u64,
    pub rounds: u64,
    pub nodes_final_round: u64,
    pub final_frequency_hz: Option<f64>,
    pub min_frequency_hz: Option<f64>,
    pub max_frequency_hz: Option<f64>,
    pub min_voltage_pu: Option<f64>,
    pub max_voltage_pu: Option<f64>,
    pub final_total_p_mw: Option<f64>,
}

impl TraceDigest {
    pub fn from_rows(rows: &[CsvRow]) -> Self {
        let last_round = rows.last().map(|r| r.round);
        let final_rows: Vec<&CsvRow> = rows.iter().filter(|r| Some(r.round) == last_round).collect();
        let mut rounds: Vec<u64> = rows.iter().map(|r| r.round).collect();
        rounds.dedup();
        let freqs = || rows.iter().map(|r| r.freq_hz);
        let volts = || rows.iter().map(|r| r.voltage_pu);
        TraceDigest {
            rows: rows.len() as u64,
            rounds: rounds.len() as u64,
            nodes_final_round: final_rows.len() as u64,
            final_frequency_hz: final_rows.first().map(|r| r.freq_hz),
            min_frequency_hz: freqs().reduce(f64::min),
            max_frequency_hz: freqs().reduce(f64::max),
            min_voltage_pu: volts().reduce(f64::min),
            max_voltage_pu: volts().reduce(f64::max),
            final_total_p_mw: last_round.map(|_| final_rows.iter().filter(|r| !r.der_id.starts_with("pcc:")).map(|r| r.p_mw).sum()),
        }
    }
}
