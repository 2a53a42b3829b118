//! Electrical side of the simulator: DER envelopes, P-f and Q-V droop, the
//! lumped-frequency balance and a linearized radial feeder.
//!
//! Units: MW, MVAr, Hz, per-unit volts. Injections use the generator sign
//! convention (positive = into the grid) everywhere except [`Injection`],
//! which stores net withdrawals like the feeder drop formula expects.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{self, clamp, Scalar};
use crate::topology::NodeId;

/// Bisection bracket for the lumped frequency deviation, Hz.
pub const FREQUENCY_BRACKET_HZ: f64 = 5.0;
/// Bisection stops once the bracket is narrower than this, Hz.
pub const FREQUENCY_TOL_HZ: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("local voltage {0} pu is not positive")]
    NonPositiveVoltage(f64),
    #[error("load {load} MW outside reachable range [{min}, {max}] MW")]
    Infeasible { load: f64, min: f64, max: f64 },
    #[error("imbalance of {imbalance} MW with no droop response")]
    NoDroopResponse { imbalance: f64 },
    #[error("DER {0} is not dispatchable")]
    NotDispatchable(NodeId),
    #[error("DER {id}: {reason}")]
    InvalidDer { id: NodeId, reason: String },
    #[error("feeder: {0}")]
    InvalidFeeder(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerKind {
    Generator,
    Load,
    Storage,
}

/// Electrical and economic envelope of one DER.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerSpec<T = f64> {
    pub id: NodeId,
    pub kind: DerKind,
    /// Scheduled output at nominal frequency, MW.
    pub p_set: T,
    pub p_min: T,
    pub p_max: T,
    /// Inverse droop slope, MW/Hz.
    pub droop_gain: T,
    /// MVAr per pu of voltage deviation.
    pub q_droop_gain: T,
    /// Quadratic cost coefficient, currency/MW².
    pub cost_a: T,
    /// Linear cost coefficient, currency/MW.
    pub cost_b: T,
}

impl<T: Scalar> DerSpec<T> {
    /// Generator with zero reactive gain.
    pub fn generator(id: usize, p_set: T, p_min: T, p_max: T, droop_gain: T, cost_a: T, cost_b: T) -> Self {
        DerSpec {
            id: NodeId(id),
            kind: DerKind::Generator,
            p_set,
            p_min,
            p_max,
            droop_gain,
            q_droop_gain: T::zero(),
            cost_a,
            cost_b,
        }
    }

    pub fn is_dispatchable(&self) -> bool {
        self.kind != DerKind::Load
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let fail = |reason: &str| GridError::InvalidDer {
            id: self.id,
            reason: reason.to_string(),
        };
        let values = [
            self.p_set,
            self.p_min,
            self.p_max,
            self.droop_gain,
            self.q_droop_gain,
            self.cost_a,
            self.cost_b,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(fail("parameters must be finite"));
        }
        if !(self.p_min <= self.p_set && self.p_set <= self.p_max) {
            return Err(fail("requires p_min <= p_set <= p_max"));
        }
        if self.droop_gain < T::zero() || self.q_droop_gain < T::zero() {
            return Err(fail("droop gains must be non-negative"));
        }
        if self.cost_a < T::zero() {
            return Err(fail("cost_a must be non-negative"));
        }
        if self.is_dispatchable() && !(self.cost_a > T::zero()) {
            return Err(fail("dispatchable DERs need cost_a > 0"));
        }
        Ok(())
    }

    /// `C(p) = a·p²/2 + b·p`.
    pub fn cost(&self, p: T) -> T {
        self.cost_a * p * p * T::of(0.5) + self.cost_b * p
    }
}

/// `P = clamp(p_set − droop_gain · Δf, p_min, p_max)`.
pub fn primary_droop_power<T: Scalar>(der: &DerSpec<T>, delta_f: T) -> T {
    clamp(der.p_set - der.droop_gain * delta_f, der.p_min, der.p_max)
}

/// `Q = q_droop_gain · (1 − V)`: absorbs above nominal, injects below.
pub fn reactive_droop_power<T: Scalar>(der: &DerSpec<T>, local_voltage_pu: T) -> Result<T, GridError> {
    if !(local_voltage_pu > T::zero()) {
        return Err(GridError::NonPositiveVoltage(
            local_voltage_pu.to_f64().unwrap_or(f64::NAN),
        ));
    }
    Ok(der.q_droop_gain * (T::one() - local_voltage_pu))
}

/// `λ = a·p + b`.
pub fn marginal_cost<T: Scalar>(der: &DerSpec<T>, p: T) -> Result<T, GridError> {
    if !der.is_dispatchable() {
        return Err(GridError::NotDispatchable(der.id));
    }
    Ok(der.cost_a * p + der.cost_b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment<T = f64> {
    pub resistance_pu: T,
    pub reactance_pu: T,
}

/// Net withdrawal at a feeder bus, per unit. Generation is negative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Injection<T = f64> {
    pub p_pu: T,
    pub q_pu: T,
}

impl<T: Scalar> Injection<T> {
    pub fn from_mw(p_mw: T, q_mvar: T, base_mva: T) -> Self {
        Injection {
            p_pu: p_mw / base_mva,
            q_pu: q_mvar / base_mva,
        }
    }
}

/// Radial feeder: segment `k` (1-based) joins bus `k−1` to bus `k`; bus 0 is
/// the source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederModel<T = f64> {
    pub segments: Vec<Segment<T>>,
    pub source_voltage_pu: T,
    /// MVA base used to convert MW/MVAr into per unit.
    pub base_mva: T,
    /// Withdrawal at buses `1..=segments.len()`.
    pub injections: Vec<Injection<T>>,
}

impl<T: Scalar> FeederModel<T> {
    /// A feeder with every bus unloaded.
    pub fn new(segments: Vec<Segment<T>>, source_voltage_pu: T, base_mva: T) -> Result<Self, GridError> {
        let injections = vec![Injection::default(); segments.len()];
        let feeder = FeederModel {
            segments,
            source_voltage_pu,
            base_mva,
            injections,
        };
        feeder.validate()?;
        Ok(feeder)
    }

    /// A source bus with no segments.
    pub fn source_only(source_voltage_pu: T) -> Self {
        FeederModel {
            segments: Vec::new(),
            source_voltage_pu,
            base_mva: T::one(),
            injections: Vec::new(),
        }
    }

    pub fn bus_count(&self) -> usize {
        self.segments.len() + 1
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.source_voltage_pu > T::zero()) {
            return Err(GridError::InvalidFeeder("source_voltage_pu must be positive".into()));
        }
        if !(self.base_mva > T::zero()) {
            return Err(GridError::InvalidFeeder("base_mva must be positive".into()));
        }
        if self
            .segments
            .iter()
            .any(|s| !(s.resistance_pu >= T::zero() && s.reactance_pu >= T::zero()))
        {
            return Err(GridError::InvalidFeeder("impedances must be non-negative".into()));
        }
        if self.injections.len() != self.segments.len() {
            return Err(GridError::InvalidFeeder(format!(
                "{} injections for {} buses",
                self.injections.len(),
                self.segments.len()
            )));
        }
        Ok(())
    }

    pub fn with_injections(&self, injections: Vec<Injection<T>>) -> Self {
        FeederModel {
            injections,
            ..self.clone()
        }
    }
}

/// `V_k − V_0` for every bus, index 0 being the source (always zero).
///
/// Each segment drops `(R_k·P_k + X_k·Q_k)/V_0`, where `P_k, Q_k` are the net
/// withdrawals downstream of the segment.
pub fn feeder_voltage_deviations<T: Scalar>(feeder: &FeederModel<T>) -> Vec<T> {
    let n = feeder.segments.len();
    let mut downstream = vec![Injection::<T>::default(); n];
    let mut acc = Injection::<T>::default();
    for k in (0..n).rev() {
        let inj = feeder.injections.get(k).copied().unwrap_or_default();
        acc.p_pu += inj.p_pu;
        acc.q_pu += inj.q_pu;
        downstream[k] = acc;
    }
    let v0 = feeder.source_voltage_pu;
    let mut deviations = Vec::with_capacity(n + 1);
    let mut dev = T::zero();
    deviations.push(dev);
    for (seg, down) in feeder.segments.iter().zip(&downstream) {
        dev -= (seg.resistance_pu * down.p_pu + seg.reactance_pu * down.q_pu) / v0;
        deviations.push(dev);
    }
    deviations
}

/// Bus voltages in pu, index 0 being the source.
pub fn feeder_voltages<T: Scalar>(feeder: &FeederModel<T>) -> Vec<T> {
    let v0 = feeder.source_voltage_pu;
    feeder_voltage_deviations(feeder)
        .into_iter()
        .map(|d| v0 + d)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Microgrid<T = f64> {
    pub id: String,
    pub ders: Vec<DerSpec<T>>,
    pub feeder: FeederModel<T>,
    pub nominal_frequency: T,
    /// Aggregate uncontrolled load, MW.
    pub load_mw: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencySolution<T = f64> {
    pub delta_f: T,
    /// Output of each DER in `Microgrid::ders` order, MW.
    pub dispatched: Vec<T>,
}

fn total_droop_output<T: Scalar>(ders: &[DerSpec<T>], delta_f: T) -> T {
    scalar::sum(ders.iter().map(|d| primary_droop_power(d, delta_f)))
}

/// Finds the frequency deviation at which the droop response of every DER
/// balances `load_mw`.
///
/// Total droop output is non-increasing in `Δf`, so the solve is a bisection
/// over `±FREQUENCY_BRACKET_HZ` followed by a closed-form polish on the set of
/// unclamped units.
pub fn solve_lumped_frequency<T: Scalar>(mg: &Microgrid<T>) -> Result<FrequencySolution<T>, GridError> {
    let ders = &mg.ders;
    let load = mg.load_mw;
    let as_f64 = |v: T| v.to_f64().unwrap_or(f64::NAN);
    let p_min = scalar::sum(ders.iter().map(|d| d.p_min));
    let p_max = scalar::sum(ders.iter().map(|d| d.p_max));
    let infeasible = |min: T, max: T| GridError::Infeasible {
        load: as_f64(load),
        min: as_f64(min),
        max: as_f64(max),
    };
    if load < p_min || load > p_max {
        return Err(infeasible(p_min, p_max));
    }
    let solution = |delta_f: T| FrequencySolution {
        delta_f,
        dispatched: ders.iter().map(|d| primary_droop_power(d, delta_f)).collect(),
    };
    let imbalance = total_droop_output(ders, T::zero()) - load;
    if imbalance == T::zero() {
        return Ok(solution(T::zero()));
    }
    if scalar::sum(ders.iter().map(|d| d.droop_gain)) == T::zero() {
        return Err(GridError::NoDroopResponse {
            imbalance: as_f64(imbalance),
        });
    }

    let bracket = T::of(FREQUENCY_BRACKET_HZ);
    let (mut lo, mut hi) = (-bracket, bracket);
    let (reach_max, reach_min) = (total_droop_output(ders, lo), total_droop_output(ders, hi));
    if load > reach_max || load < reach_min {
        return Err(infeasible(reach_min, reach_max));
    }
    let tol = T::of(FREQUENCY_TOL_HZ);
    while hi - lo > tol {
        let mid = (lo + hi) * T::of(0.5);
        if total_droop_output(ders, mid) > load {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = (lo + hi) * T::of(0.5);

    // Closed form on the units that are still inside their limits at `mid`.
    let mut free_gain = T::zero();
    let mut numerator = -load;
    for d in ders {
        let p = primary_droop_power(d, mid);
        if d.droop_gain > T::zero() && p > d.p_min && p < d.p_max {
            free_gain += d.droop_gain;
            numerator += d.p_set;
        } else {
            numerator += p;
        }
    }
    let mut best = mid;
    if free_gain > T::zero() {
        let candidate = numerator / free_gain;
        let err = |df: T| (total_droop_output(ders, df) - load).abs();
        if candidate.is_finite() && err(candidate) <= err(mid) {
            best = candidate;
        }
    }
    Ok(solution(best))
}
