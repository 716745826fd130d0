//! Closed-loop simulation of one scenario.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::control::{controller_step, ControlSignals, ControlState, ControllerParams, Measurements};
use crate::harness::config::{InitialState, ScenarioConfig};
use crate::plant::{converter_bridge, step_plant, FaultKind, PlantError, PlantParams, PlantState};
use crate::signal::{wrap_to_pi, ThreePhase};

/// Recovery requires |P - P*| below this fraction of P*.
pub const RECOVERY_POWER_BAND: f64 = 0.02;
/// ... and |omega_c - omega*| below this [rad/s].
pub const RECOVERY_FREQ_BAND: f64 = 0.5;
/// ... both held for this long [s].
pub const RECOVERY_DWELL: f64 = 0.5;
/// Transient current bound as a multiple of `i_max_sat`.
pub const TRANSIENT_CURRENT_FACTOR: f64 = 1.2;
/// Current bound after the transient window, as a multiple of `i_max_sat`.
pub const SETTLED_CURRENT_FACTOR: f64 = 1.05;
/// Length of the transient window after fault onset [s].
pub const TRANSIENT_WINDOW: f64 = 0.01;

/// One recorded row. The field order is the CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub v_pcc_a: f64,
    pub v_pcc_b: f64,
    pub v_pcc_c: f64,
    pub i_f_a: f64,
    pub i_f_b: f64,
    pub i_f_c: f64,
    pub i_line_a: f64,
    pub i_line_b: f64,
    pub i_line_c: f64,
    pub p: f64,
    pub q: f64,
    pub omega_c: f64,
    pub theta_c: f64,
    pub i_d: f64,
    pub i_q: f64,
    pub i_d_ref: f64,
    pub i_q_ref: f64,
    pub i_d_ref_sat: f64,
    pub i_q_ref_sat: f64,
    pub enable: u8,
    pub phi_conv: f64,
    pub phi_flux: f64,
    pub psi_cd: f64,
    pub psi_cq: f64,
    pub psi_gd: f64,
    pub psi_gq: f64,
}

impl Sample {
    fn new(s: &PlantState, sig: &ControlSignals) -> Self {
        Self {
            t: s.t,
            v_pcc_a: s.v_g.a,
            v_pcc_b: s.v_g.b,
            v_pcc_c: s.v_g.c,
            i_f_a: s.i_f.a,
            i_f_b: s.i_f.b,
            i_f_c: s.i_f.c,
            i_line_a: s.i_line.a,
            i_line_b: s.i_line.b,
            i_line_c: s.i_line.c,
            p: sig.p,
            q: sig.q,
            omega_c: sig.omega_c,
            theta_c: sig.theta_c,
            i_d: sig.i_dq.d,
            i_q: sig.i_dq.q,
            i_d_ref: sig.i_ref_unsat.d,
            i_q_ref: sig.i_ref_unsat.q,
            i_d_ref_sat: sig.i_ref_sat.d,
            i_q_ref_sat: sig.i_ref_sat.q,
            enable: sig.enable as u8,
            phi_conv: sig.phi_conv,
            phi_flux: sig.phi_flux,
            psi_cd: sig.flux.psi_cd,
            psi_cq: sig.flux.psi_cq,
            psi_gd: sig.flux.psi_gd,
            psi_gq: sig.flux.psi_gq,
        }
    }
}

/// Summary of one run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Largest instantaneous filter current over the run [A].
    pub peak_phase_current: f64,
    /// Largest filter current later than the transient window after fault
    /// onset [A]; zero without a fault.
    pub peak_after_transient: f64,
    pub current_limit_violated: bool,
    pub sync_lost: bool,
    /// Time from fault clearance (or from t = 0 without a fault) to the
    /// start of the first sustained recovery [s].
    pub recovery_time: Option<f64>,
    pub diverged: bool,
    pub diverged_at: Option<f64>,
    /// Largest per-sample change of the conventional angle inside the fault
    /// window [rad].
    pub phi_conv_max_step: f64,
    /// Same for the flux-derived angle [rad].
    pub phi_flux_max_step: f64,
    /// Largest per-sample change of the angle the active strategy saturates
    /// along [rad].
    pub active_angle_max_step: f64,
    pub final_p: f64,
    pub final_omega_c: f64,
    /// Simulated end time [s].
    pub t_final: f64,
}

impl RunMetrics {
    /// Process exit status for this outcome: 0 stable, 2 synchronism lost,
    /// 3 numerical divergence.
    pub fn exit_code(&self) -> i32 {
        if self.diverged {
            3
        } else if self.sync_lost {
            2
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOutput {
    pub samples: Vec<Sample>,
    pub metrics: RunMetrics,
}

/// Tracks the largest wrapped step of an angle sampled at a fixed stride.
#[derive(Debug, Clone, Copy, Default)]
struct AngleRate {
    prev: Option<f64>,
    max_step: f64,
}

impl AngleRate {
    fn push(&mut self, phi: f64) {
        if let Some(prev) = self.prev {
            self.max_step = self.max_step.max(wrap_to_pi(phi - prev).abs());
        }
        self.prev = Some(phi);
    }
}

#[derive(Debug, Clone)]
struct MetricsTracker {
    i_max_sat: f64,
    fault_active: bool,
    fault_start: f64,
    fault_end: f64,
    recovery_from: f64,
    p_ref: f64,
    omega_ref: f64,
    uses_flux: bool,
    angle_stride: u64,
    peak: f64,
    peak_late: f64,
    candidate: Option<f64>,
    recovery: Option<f64>,
    conv: AngleRate,
    flux: AngleRate,
    last_p: f64,
    last_omega: f64,
}

impl MetricsTracker {
    fn new(cfg: &ScenarioConfig) -> Self {
        let has_fault = cfg.fault.kind != FaultKind::None && cfg.fault.duration > 0.0;
        Self {
            i_max_sat: cfg.i_max_sat,
            fault_active: has_fault,
            fault_start: cfg.fault.start,
            fault_end: cfg.fault.end(),
            recovery_from: if has_fault { cfg.fault.end() } else { 0.0 },
            p_ref: cfg.droop.p_ref,
            omega_ref: cfg.droop.omega_ref,
            uses_flux: cfg.saturation_strategy == crate::control::SaturationStrategy::Vflux,
            angle_stride: cfg.angle_stride(),
            peak: 0.0,
            peak_late: 0.0,
            candidate: None,
            recovery: None,
            conv: AngleRate::default(),
            flux: AngleRate::default(),
            last_p: 0.0,
            last_omega: cfg.droop.omega_ref,
        }
    }

    fn observe(&mut self, k: u64, t: f64, i_f: &ThreePhase, sig: &ControlSignals) {
        let i_peak = i_f.max_abs();
        self.peak = self.peak.max(i_peak);
        if self.fault_active && t >= self.fault_start + TRANSIENT_WINDOW {
            self.peak_late = self.peak_late.max(i_peak);
        }

        if self.fault_active && t >= self.fault_start && t <= self.fault_end && k.is_multiple_of(self.angle_stride) {
            self.conv.push(sig.phi_conv);
            self.flux.push(sig.phi_flux);
        }

        if t >= self.recovery_from && self.recovery.is_none() {
            let band = (RECOVERY_POWER_BAND * self.p_ref.abs()).max(100.0);
            let ok = (sig.p - self.p_ref).abs() < band && (sig.omega_c - self.omega_ref).abs() < RECOVERY_FREQ_BAND;
            match (ok, self.candidate) {
                (true, None) => self.candidate = Some(t),
                (true, Some(t0)) if t - t0 >= RECOVERY_DWELL => {
                    self.recovery = Some(t0 - self.recovery_from)
                }
                (false, _) => self.candidate = None,
                _ => {}
            }
        }
        self.last_p = sig.p;
        self.last_omega = sig.omega_c;
    }

    fn finish(&self, t_final: f64, diverged_at: Option<f64>) -> RunMetrics {
        let diverged = diverged_at.is_some();
        let violated = self.peak > TRANSIENT_CURRENT_FACTOR * self.i_max_sat
            || self.peak_late > SETTLED_CURRENT_FACTOR * self.i_max_sat;
        RunMetrics {
            peak_phase_current: self.peak,
            peak_after_transient: self.peak_late,
            current_limit_violated: violated,
            sync_lost: diverged || self.recovery.is_none(),
            recovery_time: self.recovery,
            diverged,
            diverged_at,
            phi_conv_max_step: self.conv.max_step,
            phi_flux_max_step: self.flux.max_step,
            active_angle_max_step: if self.uses_flux {
                self.flux.max_step
            } else {
                self.conv.max_step
            },
            final_p: self.last_p,
            final_omega_c: self.last_omega,
            t_final,
        }
    }
}

/// Plant and controller states near the pre-fault operating point: PCC at
/// the grid voltage, frame aligned with the grid, filters settled, no power
/// exchanged with the grid yet.
pub fn no_load_states(plant: &PlantParams, ctrl: &ControllerParams) -> (PlantState, ControlState) {
    use std::f64::consts::FRAC_PI_2;
    let v = plant.v_grid_peak;
    let w = plant.omega_grid;
    let v_g = ThreePhase::balanced(v, 0.0);
    let i_load = v_g * (1.0 / plant.r_load);
    let i_cap = ThreePhase::balanced(w * plant.c_f * v, FRAC_PI_2);
    let ps = PlantState {
        i_f: i_load + i_cap,
        v_g,
        i_line: ThreePhase::ZERO,
        t: 0.0,
    };

    let mut cs = ControlState::new(ctrl);
    cs.pi_vd.integrator = v / plant.r_load;
    cs.m_prev = v_g * (2.0 / plant.v_dc);
    // Steady-state integrals of the PCC voltage and of v_g + L_f di/dt.
    let psi_g = ThreePhase::balanced(v / w, -FRAC_PI_2);
    cs.flux.psi_g = psi_g;
    cs.flux.psi_c = psi_g + ps.i_f * plant.l_f;
    (ps, cs)
}

/// Phasor solution of the droop equilibrium, as peak-valued complex
/// amplitudes at t = 0 in the grid frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    /// Angle of the PCC voltage ahead of the grid source [rad].
    pub delta: f64,
    pub v_pcc: Complex64,
    pub i_line: Complex64,
    pub i_f: Complex64,
    pub v_conv: Complex64,
    pub p: f64,
    pub q: f64,
}

/// Solves for the PCC angle that delivers `P_ref` to the grid, with the
/// PCC magnitude set by the reactive droop. `None` if `P_ref` cannot be
/// transferred or the bridge would need more than the DC rail.
pub fn operating_point(plant: &PlantParams, ctrl: &ControllerParams) -> Option<OperatingPoint> {
    let w = plant.omega_grid;
    let e = Complex64::new(plant.v_grid_peak, 0.0);
    let z_g = Complex64::new(plant.r_g, w * plant.l_g);
    let theta_z = z_g.arg();
    let flow = |v: f64, delta: f64| {
        let v_pcc = Complex64::from_polar(v, delta);
        let i = (v_pcc - e) / z_g;
        let s = 1.5 * v_pcc * i.conj();
        (s.re, s.im)
    };
    let droop = &ctrl.droop;
    let mut v = droop.v_ref;
    let mut delta = 0.0;
    for _ in 0..500 {
        // P rises monotonically with delta on this interval.
        let (mut lo, mut hi) = (-theta_z, std::f64::consts::PI - theta_z);
        if flow(v, hi).0 < droop.p_ref || flow(v, lo).0 > droop.p_ref {
            return None;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if flow(v, mid).0 < droop.p_ref {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        delta = 0.5 * (lo + hi);
        let (_, q) = flow(v, delta);
        let next = droop.v_ref + droop.k_q * (droop.q_ref - q);
        let done = (next - v).abs() < 1e-12 * droop.v_ref;
        v = next;
        if done {
            break;
        }
    }
    let v_pcc = Complex64::from_polar(v, delta);
    let i_line = (v_pcc - e) / z_g;
    let i_f = i_line + v_pcc / plant.r_load + Complex64::new(0.0, w * plant.c_f) * v_pcc;
    let v_conv = v_pcc + Complex64::new(plant.r_f, w * plant.l_f) * i_f;
    if v_conv.norm() > 0.5 * plant.v_dc {
        return None;
    }
    let (p, q) = flow(v, delta);
    Some(OperatingPoint {
        delta,
        v_pcc,
        i_line,
        i_f,
        v_conv,
        p,
        q,
    })
}

fn phasor_abc(x: Complex64) -> ThreePhase {
    ThreePhase::balanced(x.norm(), x.arg())
}

/// Plant and controller states at the droop equilibrium, so a run without
/// a fault starts settled. Falls back to [`no_load_states`] when no
/// operating point exists.
pub fn initial_states(plant: &PlantParams, ctrl: &ControllerParams) -> (PlantState, ControlState) {
    let Some(op) = operating_point(plant, ctrl) else {
        return no_load_states(plant, ctrl);
    };
    let w = plant.omega_grid;
    let ps = PlantState {
        i_f: phasor_abc(op.i_f),
        v_g: phasor_abc(op.v_pcc),
        i_line: phasor_abc(op.i_line),
        t: 0.0,
    };

    let mut cs = ControlState::new(ctrl);
    cs.droop.theta_c = op.delta;
    cs.droop.q_filt = op.q;
    // Converter-frame phasors; the PCC voltage lies on the d axis.
    let to_frame = Complex64::from_polar(1.0, -op.delta);
    let i_f = op.i_f * to_frame;
    let i_line = op.i_line * to_frame;
    let v_d = op.v_pcc.norm();
    // Voltage-loop output minus its feed-forward terms.
    cs.pi_vd.integrator = i_f.re - i_line.re;
    cs.pi_vq.integrator = i_f.im - i_line.im - w * plant.c_f * v_d;
    // Current-loop output minus feed-forward and decoupling.
    cs.pi_id.integrator = plant.r_f * i_f.re;
    cs.pi_iq.integrator = plant.r_f * i_f.im;
    cs.m_prev = phasor_abc(op.v_conv * (2.0 / plant.v_dc));
    // Settled response of 1 / (s + omega_f) to each voltage.
    let filter = Complex64::new(ctrl.omega_f, w).inv();
    cs.flux.psi_g = phasor_abc(op.v_pcc * filter);
    cs.flux.psi_c = phasor_abc(op.v_conv * filter);
    (ps, cs)
}

/// A scenario being simulated one control period at a time.
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: ScenarioConfig,
    ctrl_params: ControllerParams,
    plant: PlantState,
    ctrl: ControlState,
    k: u64,
    ratio: usize,
    tracker: MetricsTracker,
    diverged_at: Option<f64>,
    last: ControlSignals,
}

impl Simulation {
    /// `cfg` must already be validated.
    pub fn new(cfg: &ScenarioConfig) -> Self {
        let ctrl_params = cfg.controller_params();
        let (plant, ctrl) = match cfg.initial_state {
            InitialState::OperatingPoint => initial_states(&cfg.plant, &ctrl_params),
            InitialState::NoLoad => no_load_states(&cfg.plant, &ctrl_params),
        };
        Self {
            cfg: cfg.clone(),
            ctrl_params,
            plant,
            ctrl,
            k: 0,
            ratio: cfg.plant_steps_per_control(),
            tracker: MetricsTracker::new(cfg),
            diverged_at: None,
            last: ControlSignals::default(),
        }
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn time(&self) -> f64 {
        self.k as f64 * self.cfg.dt_ctrl
    }

    pub fn plant_state(&self) -> &PlantState {
        &self.plant
    }

    pub fn control_state(&self) -> &ControlState {
        &self.ctrl
    }

    pub fn is_finished(&self) -> bool {
        self.diverged_at.is_some() || self.time() >= self.cfg.t_end - 0.5 * self.cfg.dt_ctrl
    }

    /// Runs one control period: sample, control, then integrate the plant
    /// under a zero-order hold. Returns the signals computed at the start
    /// of the period together with the plant state they were computed from.
    pub fn step(&mut self) -> Result<(PlantState, ControlSignals), PlantError> {
        let sampled = self.plant;
        let meas = Measurements {
            v_g: sampled.v_g,
            i_f: sampled.i_f,
            i_line: sampled.i_line,
        };
        let (m_abc, sig) = controller_step(&meas, &mut self.ctrl, &self.ctrl_params, self.cfg.dt_ctrl);
        self.tracker.observe(self.k, sampled.t, &sampled.i_f, &sig);
        self.last = sig;

        let v_c = converter_bridge(m_abc, self.cfg.plant.v_dc);
        let t0 = self.time();
        for j in 0..self.ratio {
            let mut next = step_plant(&self.plant, v_c, &self.cfg.plant, &self.cfg.fault, self.cfg.dt_plant);
            if let Ok(s) = next.as_mut() {
                s.t = t0 + (j + 1) as f64 * self.cfg.dt_plant;
            }
            match next {
                Ok(s) => self.plant = s,
                Err(e) => {
                    if let PlantError::Diverged { t, .. } = e {
                        self.diverged_at = Some(t);
                    }
                    return Err(e);
                }
            }
        }
        self.k += 1;
        Ok((sampled, sig))
    }

    pub fn last_signals(&self) -> &ControlSignals {
        &self.last
    }

    pub fn metrics(&self) -> RunMetrics {
        self.tracker.finish(self.plant.t, self.diverged_at)
    }
}

/// Runs `cfg` to `t_end` (or to divergence) and returns the decimated
/// record with the run metrics.
pub fn run_scenario(cfg: &ScenarioConfig) -> RunOutput {
    run_scenario_with(cfg, |_, _| {})
}

/// Like [`run_scenario`], calling `observe` with every control-period sample.
pub fn run_scenario_with(cfg: &ScenarioConfig, mut observe: impl FnMut(&PlantState, &ControlSignals)) -> RunOutput {
    let mut sim = Simulation::new(cfg);
    let decimation = cfg.decimation();
    let mut samples = Vec::with_capacity((cfg.t_end / cfg.dt_ctrl / decimation as f64) as usize + 2);
    let mut k = 0u64;
    while !sim.is_finished() {
        match sim.step() {
            Ok((state, sig)) => {
                observe(&state, &sig);
                if k.is_multiple_of(decimation) {
                    samples.push(Sample::new(&state, &sig));
                }
                k += 1;
            }
            Err(_) => break,
        }
    }
    RunOutput {
        samples,
        metrics: sim.metrics(),
    }
}
