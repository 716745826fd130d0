//! Averaged converter, LC filter, PCC load, grid impedance and grid source,
//! integrated in the stationary abc frame.
//!
//! The network per phase k is
//!
//! ```text
//!   v_c,k --[R_f, L_f]--+--[R_g, L_g]-- v_grid,k
//!                       |
//!                 C_f  R_L  (fault shunt on b, c)
//!                       |
//!                      gnd
//! ```
//!
//! The filter capacitors, load and grid source share a grounded star point.
//! The converter bridge has no neutral connection, so its star point floats
//! and the filter currents carry no zero-sequence component.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::ThreePhase;

/// Multiple of the nominal scale at which a state is declared diverged.
pub const DIVERGENCE_FACTOR: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("numerical divergence at t = {t:.6} s ({what})")]
    Diverged { t: f64, what: &'static str },
    #[error("invalid plant parameter: {0}")]
    InvalidParams(String),
}

/// Electrical parameters of the converter, filter, load and grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    /// Filter inductance [H].
    pub l_f: f64,
    /// Filter resistance [ohm].
    pub r_f: f64,
    /// Filter capacitance [F].
    pub c_f: f64,
    /// Grid inductance [H].
    pub l_g: f64,
    /// Grid resistance [ohm].
    pub r_g: f64,
    /// PCC load per phase [ohm].
    pub r_load: f64,
    /// DC-link voltage [V].
    pub v_dc: f64,
    /// Grid source per-phase peak voltage [V].
    pub v_grid_peak: f64,
    /// Grid angular frequency [rad/s].
    pub omega_grid: f64,
}

/// Per-phase peak of a 480 V line-to-line RMS system.
pub fn nominal_phase_peak(v_ll_rms: f64) -> f64 {
    v_ll_rms * 2f64.sqrt() / 3f64.sqrt()
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            l_f: 2e-3,
            r_f: 1e-3,
            c_f: 60e-6,
            l_g: 8e-3,
            r_g: 0.1,
            r_load: 10.0,
            v_dc: 1000.0,
            v_grid_peak: nominal_phase_peak(480.0),
            omega_grid: 314.0,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let positive = [
            ("l_f", self.l_f),
            ("r_f", self.r_f),
            ("c_f", self.c_f),
            ("l_g", self.l_g),
            ("r_g", self.r_g),
            ("r_load", self.r_load),
            ("v_dc", self.v_dc),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(PlantError::InvalidParams(format!(
                    "plant.{name} must be positive and finite, got {value}"
                )));
            }
        }
        if !(self.v_grid_peak >= 0.0 && self.v_grid_peak.is_finite()) {
            return Err(PlantError::InvalidParams(format!(
                "plant.v_grid_peak must be non-negative, got {}",
                self.v_grid_peak
            )));
        }
        if !self.omega_grid.is_finite() {
            return Err(PlantError::InvalidParams("plant.omega_grid must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    #[default]
    None,
    ThreePhaseSag,
    TwoPhaseShortToGround,
    ThreePhaseShift,
}

impl FaultKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::None => "none",
            FaultKind::ThreePhaseSag => "three_phase_sag",
            FaultKind::TwoPhaseShortToGround => "two_phase_short_to_ground",
            FaultKind::ThreePhaseShift => "three_phase_shift",
        }
    }

    pub const ALL: [FaultKind; 4] = [
        FaultKind::None,
        FaultKind::ThreePhaseSag,
        FaultKind::TwoPhaseShortToGround,
        FaultKind::ThreePhaseShift,
    ];
}

impl std::str::FromStr for FaultKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown fault kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultDescriptor {
    pub kind: FaultKind,
    /// Fault onset [s].
    pub start: f64,
    /// Fault duration [s].
    pub duration: f64,
    /// Fraction of the grid amplitude removed during a sag.
    pub sag_fraction: f64,
    /// Phase advance of the grid source during a shift fault [rad].
    pub shift_angle: f64,
    /// Shunt resistance to ground of a short-circuit fault [ohm].
    pub fault_resistance: f64,
}

impl Default for FaultDescriptor {
    fn default() -> Self {
        Self {
            kind: FaultKind::None,
            start: 1.0,
            duration: 0.0,
            sag_fraction: 1.0,
            shift_angle: PI / 2.0,
            fault_resistance: 1e-3,
        }
    }
}

impl FaultDescriptor {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    /// True while the fault is applied: `start <= t < start + duration`.
    pub fn is_active(&self, t: f64) -> bool {
        self.kind != FaultKind::None && t >= self.start && t < self.end()
    }

    /// True if the fault is applied anywhere in `[t0, t1)`.
    pub fn overlaps(&self, t0: f64, t1: f64) -> bool {
        self.kind != FaultKind::None && self.duration > 0.0 && t0 < self.end() && t1 > self.start
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        if !(self.duration >= 0.0) {
            return Err(PlantError::InvalidParams(format!(
                "fault.duration must be >= 0, got {}",
                self.duration
            )));
        }
        if !(self.start >= 0.0) {
            return Err(PlantError::InvalidParams(format!(
                "fault.start must be >= 0, got {}",
                self.start
            )));
        }
        if !(0.0..=1.0).contains(&self.sag_fraction) {
            return Err(PlantError::InvalidParams(format!(
                "fault.sag_fraction must lie in [0, 1], got {}",
                self.sag_fraction
            )));
        }
        if !(self.fault_resistance > 0.0) {
            return Err(PlantError::InvalidParams(format!(
                "fault.fault_resistance must be > 0, got {}",
                self.fault_resistance
            )));
        }
        if !self.shift_angle.is_finite() {
            return Err(PlantError::InvalidParams("fault.shift_angle must be finite".into()));
        }
        Ok(())
    }
}

/// Integrator states of the network.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    /// Filter inductor currents [A].
    pub i_f: ThreePhase,
    /// Filter capacitor (PCC) voltages [V].
    pub v_g: ThreePhase,
    /// Grid-side line currents through L_g [A].
    pub i_line: ThreePhase,
    /// Simulation time [s].
    pub t: f64,
}

/// Time derivatives of the plant states.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantRates {
    pub di_f: ThreePhase,
    pub dv_g: ThreePhase,
    pub di_line: ThreePhase,
}

impl PlantState {
    fn advanced(&self, k: &PlantRates, h: f64) -> Self {
        Self {
            i_f: self.i_f + k.di_f * h,
            v_g: self.v_g + k.dv_g * h,
            i_line: self.i_line + k.di_line * h,
            t: self.t + h,
        }
    }

    /// Fails if any state is non-finite or beyond [`DIVERGENCE_FACTOR`] times
    /// its nominal scale.
    pub fn check_divergence(&self, scale: &NominalScale) -> Result<(), PlantError> {
        let i_lim = DIVERGENCE_FACTOR * scale.current;
        let v_lim = DIVERGENCE_FACTOR * scale.voltage;
        let checks = [
            ("filter current", self.i_f, i_lim),
            ("line current", self.i_line, i_lim),
            ("PCC voltage", self.v_g, v_lim),
        ];
        for (what, x, lim) in checks {
            if !x.is_finite() || x.max_abs() > lim {
                return Err(PlantError::Diverged { t: self.t, what });
            }
        }
        Ok(())
    }
}

/// Nominal magnitudes the divergence guard is referenced to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NominalScale {
    pub voltage: f64,
    pub current: f64,
}

impl NominalScale {
    /// Voltage scale is the DC link, current scale the bolted-fault current
    /// the grid would push through its own impedance.
    pub fn for_params(p: &PlantParams) -> Self {
        let z_grid = p.r_g.hypot(p.omega_grid * p.l_g);
        Self {
            voltage: p.v_dc.max(p.v_grid_peak),
            current: (p.v_grid_peak.max(p.v_dc / 2.0) / z_grid).max(1.0),
        }
    }
}

/// Instantaneous grid-source voltages at time `t`.
pub fn grid_source(t: f64, params: &PlantParams, fault: &FaultDescriptor) -> ThreePhase {
    let theta = params.omega_grid * t;
    if fault.is_active(t) {
        match fault.kind {
            FaultKind::ThreePhaseSag => {
                return ThreePhase::balanced(params.v_grid_peak * (1.0 - fault.sag_fraction), theta)
            }
            FaultKind::ThreePhaseShift => {
                return ThreePhase::balanced(params.v_grid_peak, theta + fault.shift_angle)
            }
            FaultKind::TwoPhaseShortToGround | FaultKind::None => {}
        }
    }
    ThreePhase::balanced(params.v_grid_peak, theta)
}

/// Averaged bridge: phase-to-midpoint voltages `m * V_dc / 2`, with each
/// modulation index clamped to [-1, 1].
pub fn converter_bridge(m: ThreePhase, v_dc: f64) -> ThreePhase {
    m.map(|x| x.clamp(-1.0, 1.0) * 0.5 * v_dc)
}

/// Current drawn by the fault shunt at the PCC.
fn fault_current(v_pcc: ThreePhase, t: f64, fault: &FaultDescriptor) -> ThreePhase {
    if fault.kind == FaultKind::TwoPhaseShortToGround && fault.is_active(t) {
        let g = 1.0 / fault.fault_resistance;
        ThreePhase::new(0.0, v_pcc.b * g, v_pcc.c * g)
    } else {
        ThreePhase::ZERO
    }
}

pub fn plant_derivatives(
    s: &PlantState,
    v_c: ThreePhase,
    params: &PlantParams,
    fault: &FaultDescriptor,
) -> PlantRates {
    let v_pcc = s.v_g;
    let v_grid = grid_source(s.t, params, fault);

    // Inductor drive per phase, minus the floating bridge star-point
    // potential so that the three filter currents keep summing to zero.
    let drive = v_c - s.i_f * params.r_f - v_pcc;
    let v_n = drive.mean();
    let di_f = (drive - ThreePhase::new(v_n, v_n, v_n)) * (1.0 / params.l_f);

    let i_load = v_pcc * (1.0 / params.r_load);
    let i_fault = fault_current(v_pcc, s.t, fault);
    let dv_g = (s.i_f - i_load - s.i_line - i_fault) * (1.0 / params.c_f);

    let di_line = (v_pcc - s.i_line * params.r_g - v_grid) * (1.0 / params.l_g);

    PlantRates { di_f, dv_g, di_line }
}

fn rk4(s: &PlantState, v_c: ThreePhase, p: &PlantParams, f: &FaultDescriptor, h: f64) -> PlantState {
    let k1 = plant_derivatives(s, v_c, p, f);
    let k2 = plant_derivatives(&s.advanced(&k1, h / 2.0), v_c, p, f);
    let k3 = plant_derivatives(&s.advanced(&k2, h / 2.0), v_c, p, f);
    let k4 = plant_derivatives(&s.advanced(&k3, h), v_c, p, f);
    let w = h / 6.0;
    PlantState {
        i_f: s.i_f + (k1.di_f + (k2.di_f + k3.di_f) * 2.0 + k4.di_f) * w,
        v_g: s.v_g + (k1.dv_g + (k2.dv_g + k3.dv_g) * 2.0 + k4.dv_g) * w,
        i_line: s.i_line + (k1.di_line + (k2.di_line + k3.di_line) * 2.0 + k4.di_line) * w,
        t: s.t + h,
    }
}

/// Number of RK4 sub-steps needed to cover `dt`.
///
/// A low-resistance fault shunt puts a pole at `-1/(R_fault C_f)` that is
/// far outside the RK4 stability region at microsecond steps, so while the
/// shunt is connected the step is split until `h <= R_fault C_f / 2`.
pub fn substeps(t: f64, params: &PlantParams, fault: &FaultDescriptor, dt: f64) -> usize {
    if fault.kind == FaultKind::TwoPhaseShortToGround && fault.overlaps(t, t + dt) {
        let tau = fault.fault_resistance * params.c_f;
        ((2.0 * dt / tau).ceil() as usize).max(1)
    } else {
        1
    }
}

/// Advances the plant by `dt` with classical fixed-step RK4, holding `v_c`
/// constant over the step.
pub fn step_plant(
    s: &PlantState,
    v_c: ThreePhase,
    params: &PlantParams,
    fault: &FaultDescriptor,
    dt: f64,
) -> Result<PlantState, PlantError> {
    let n = substeps(s.t, params, fault, dt);
    let h = dt / n as f64;
    let t_end = s.t + dt;
    let mut next = *s;
    for _ in 0..n {
        next = rk4(&next, v_c, params, fault, h);
    }
    // Keep the clock free of accumulated sub-step rounding.
    next.t = t_end;
    next.check_divergence(&NominalScale::for_params(params))?;
    Ok(next)
}

/// Energy stored in the inductors and capacitors [J].
pub fn stored_energy(s: &PlantState, p: &PlantParams) -> f64 {
    0.5 * p.l_f * s.i_f.dot(&s.i_f) + 0.5 * p.l_g * s.i_line.dot(&s.i_line) + 0.5 * p.c_f * s.v_g.dot(&s.v_g)
}

/// Instantaneous power flows of the network [W].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PowerFlows {
    /// Delivered by the converter bridge.
    pub converter: f64,
    /// Dissipated in R_f, R_g, R_L and the fault shunt.
    pub dissipated: f64,
    /// Absorbed by the grid source.
    pub to_grid: f64,
}

pub fn power_flows(s: &PlantState, v_c: ThreePhase, p: &PlantParams, fault: &FaultDescriptor) -> PowerFlows {
    let v_grid = grid_source(s.t, p, fault);
    let i_fault = fault_current(s.v_g, s.t, fault);
    PowerFlows {
        converter: v_c.dot(&s.i_f),
        dissipated: p.r_f * s.i_f.dot(&s.i_f)
            + p.r_g * s.i_line.dot(&s.i_line)
            + s.v_g.dot(&s.v_g) / p.r_load
            + s.v_g.dot(&i_fault),
        to_grid: v_grid.dot(&s.i_line),
    }
}
