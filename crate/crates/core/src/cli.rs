//! `mgsim` command-line driver.
//!
//! Exit codes: 0 on success, 1 on runtime or I/O failure, 2 when a scenario
//! (or a sweep parameter) fails validation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::Value;
use thiserror::Error;

use crate::scenario_io::{
    parse_scenario, read_trace_csv, serialize_scenario, write_trace, Scenario, ScenarioError,
    SummaryReport, TraceDigest, TraceError,
};
use crate::sim::{run_scenario, SimError};

#[derive(Debug, Parser)]
#[command(name = "mgsim", version, about = "Peer-to-peer microgrid control simulator")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalOpts {
    /// Override the scenario's RNG seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override the scenario's round count.
    #[arg(long, global = true)]
    pub rounds: Option<u64>,
    /// Suppress the summary on standard output.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write trace.csv and summary.json.
    Run {
        scenario: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Parse and validate a scenario without running it.
    Validate { scenario: PathBuf },
    /// Run one scenario per value of a dotted parameter path.
    Sweep {
        scenario: PathBuf,
        /// Dotted path into the scenario document, e.g. `channel.loss_probability`
        /// or `microgrids.0.graph.epsilon`.
        #[arg(long)]
        param: String,
        /// Comma-separated JSON values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Summarize a trace.csv produced by `run`.
    Report { trace: PathBuf },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Scenario(_) | CliError::Sim(SimError::ValidationFailed(_)) | CliError::UnknownParameter(_) => 2,
            CliError::Io { .. } | CliError::Sim(_) | CliError::Trace(_) => 1,
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load(path: &Path, global: &GlobalOpts) -> Result<Scenario, CliError> {
    let mut scenario = parse_scenario(&read(path)?)?;
    if let Some(seed) = global.seed {
        scenario.seed = seed;
    }
    if let Some(rounds) = global.rounds {
        scenario.rounds = rounds;
    }
    scenario.validate()?;
    Ok(scenario)
}

/// Runs `scenario` and writes its outputs into `out`.
pub fn run_to_dir(scenario: &Scenario, out: &Path) -> Result<SummaryReport, CliError> {
    let trace = run_scenario(scenario)?;
    let (csv, summary) = write_trace(&trace);
    create_dir(out)?;
    write(&out.join("trace.csv"), &csv)?;
    write(&out.join("summary.json"), &summary)?;
    Ok(SummaryReport::from_trace(&trace))
}

/// Replaces the value at a dotted path. Numeric segments index arrays.
pub fn set_parameter(scenario: &Scenario, param: &str, value: Value) -> Result<Scenario, CliError> {
    let mut doc: Value = serde_json::from_str(&serialize_scenario(scenario)).expect("scenario round-trips");
    let unknown = || CliError::UnknownParameter(param.to_string());
    let mut slot = &mut doc;
    for segment in param.split('.') {
        slot = match slot {
            Value::Object(map) => map.get_mut(segment).ok_or_else(unknown)?,
            Value::Array(items) => {
                let k: usize = segment.parse().map_err(|_| unknown())?;
                items.get_mut(k).ok_or_else(unknown)?
            }
            _ => return Err(unknown()),
        };
    }
    *slot = value;
    let text = serde_json::to_vec(&doc).expect("json value serializes");
    Ok(parse_scenario(&text)?)
}

fn parse_value(text: &str) -> Value {
    serde_json::from_str(text.trim()).unwrap_or_else(|_| Value::String(text.trim().to_string()))
}

fn dir_name(param: &str, value: &str) -> String {
    let leaf = param.rsplit('.').next().unwrap_or(param);
    let clean: String = value
        .trim()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect();
    format!("{leaf}={clean}")
}

/// One sweep value and the outcome of its run.
pub type SweepRun = (String, Result<SummaryReport, CliError>);

fn sweep(
    base: &Scenario,
    param: &str,
    values: &[String],
    out: &Path,
) -> Result<Vec<SweepRun>, CliError> {
    let scenarios = values
        .iter()
        .map(|v| set_parameter(base, param, parse_value(v)))
        .collect::<Result<Vec<_>, _>>()?;
    create_dir(out)?;
    let results = std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios
            .iter()
            .zip(values)
            .map(|(s, v)| {
                let dir = out.join(dir_name(param, v));
                scope.spawn(move || run_to_dir(s, &dir))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect::<Vec<_>>()
    });

    let mut table = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let opt = |v: Option<f64>| v.map(crate::scenario_io::format_number).unwrap_or_default();
    table
        .write_record([
            "value",
            "status",
            "final_freq_hz",
            "min_voltage_pu",
            "max_voltage_pu",
            "total_generation_cost",
            "saturated_rounds",
            "consensus_rounds",
        ])
        .expect("in-memory write");
    for (value, result) in values.iter().zip(&results) {
        let row = match result {
            Ok(s) => {
                let rounds: Option<Vec<u64>> = s.consensus.iter().map(|c| c.rounds_to_converge).collect();
                [
                    value.trim().to_string(),
                    "ok".into(),
                    opt(s.final_frequency_hz),
                    opt(s.min_voltage_pu),
                    opt(s.max_voltage_pu),
                    opt(s.total_generation_cost),
                    s.saturated_rounds.to_string(),
                    rounds
                        .and_then(|r| r.into_iter().max())
                        .map(|r| r.to_string())
                        .unwrap_or_default(),
                ]
            }
            Err(err) => [
                value.trim().to_string(),
                format!("error: {err}"),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ],
        };
        table.write_record(&row).expect("in-memory write");
    }
    write(&out.join("sweep.csv"), &table.into_inner().expect("in-memory flush"))?;
    Ok(values.iter().cloned().zip(results).collect())
}

fn print_json(value: &impl serde::Serialize) {
    let mut stdout = std::io::stdout().lock();
    // A closed stdout is not worth failing a completed run over.
    let _ = serde_json::to_writer_pretty(&mut stdout, value);
    let _ = writeln!(stdout);
}

/// Executes a parsed command line and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    match dispatch(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("mgsim: {err}");
            err.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32, CliError> {
    let global = &cli.global;
    match &cli.command {
        Command::Run { scenario, out } => {
            let summary = run_to_dir(&load(scenario, global)?, out)?;
            if !global.quiet {
                print_json(&summary);
            }
            Ok(0)
        }
        Command::Validate { scenario } => {
            let s = load(scenario, global)?;
            if !global.quiet {
                println!(
                    "valid: {} microgrid(s), {} rounds, {} fault(s)",
                    s.microgrids.len(),
                    s.rounds,
                    s.faults.len()
                );
            }
            Ok(0)
        }
        Command::Sweep {
            scenario,
            param,
            values,
            out,
        } => {
            let results = sweep(&load(scenario, global)?, param, values, out)?;
            let mut code = 0;
            for (value, result) in &results {
                if let Err(err) = result {
                    eprintln!("mgsim: {param}={value}: {err}");
                    code = code.max(err.exit_code());
                }
            }
            if !global.quiet {
                println!("{} run(s) written to {}", results.len(), out.display());
            }
            Ok(code)
        }
        Command::Report { trace } => {
            let rows = read_trace_csv(&read(trace)?)?;
            if !global.quiet {
                print_json(&TraceDigest::from_rows(&rows));
            }
            Ok(0)
        }
    }
}
