//! Cascaded grid-forming controller: power calculation, P-omega / Q-v droop
//! with an inertia low-pass filter, dq voltage PI with anti-windup, current
//! reference saturation, and dq current PI producing modulation references.

use serde::{Deserialize, Serialize};

use crate::signal::{Angle, DqPair, Rotation, ThreePhase};
use crate::vflux::{self, FluxDq, FluxEstimatorState, FluxRoute};

/// Droop and reference settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DroopParams {
    /// Frequency reference [rad/s].
    pub omega_ref: f64,
    /// PCC voltage reference, peak per phase [V].
    pub v_ref: f64,
    /// Active power reference [W].
    pub p_ref: f64,
    /// Reactive power reference [var].
    pub q_ref: f64,
    /// P-omega droop gain [rad/s per W].
    pub k_p: f64,
    /// Q-v droop gain [V per var].
    pub k_q: f64,
    /// Cut-off of the power low-pass filters [rad/s].
    pub omega_pp: f64,
}

impl Default for DroopParams {
    fn default() -> Self {
        Self {
            omega_ref: 314.0,
            v_ref: crate::plant::nominal_phase_peak(480.0),
            p_ref: 30e3,
            q_ref: 0.0,
            k_p: 1e-3,
            k_q: 1e-3,
            omega_pp: 35.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DroopState {
    pub p_filt: f64,
    pub q_filt: f64,
    /// Converter angle, unwrapped [rad].
    pub theta_c: f64,
    /// Converter frequency [rad/s].
    pub omega_c: f64,
}

impl DroopState {
    /// Filters settled at the references, frame at `theta_c`.
    pub fn settled(params: &DroopParams, theta_c: f64) -> Self {
        Self {
            p_filt: params.p_ref,
            q_filt: params.q_ref,
            theta_c,
            omega_c: params.omega_ref,
        }
    }
}

/// One backward-Euler step of the droop laws. Returns the new state and the
/// d-axis voltage reference; the q-axis reference is always zero.
pub fn droop_step(state: &DroopState, p: f64, q: f64, params: &DroopParams, dt: f64) -> (DroopState, f64) {
    // Backward Euler, written as an increment so a settled filter stays put.
    let g = dt * params.omega_pp / (1.0 + dt * params.omega_pp);
    let p_filt = state.p_filt + g * (p - state.p_filt);
    let q_filt = state.q_filt + g * (q - state.q_filt);
    let omega_c = params.omega_ref + params.k_p * (params.p_ref - p_filt);
    let theta_c = state.theta_c + dt * omega_c;
    let v_d_ref = params.v_ref + params.k_q * (params.q_ref - q_filt);
    (
        DroopState {
            p_filt,
            q_filt,
            theta_c,
            omega_c,
        },
        v_d_ref,
    )
}

/// Instantaneous three-phase active and reactive power from dq quantities
/// taken at the same frame angle (amplitude-invariant scaling).
pub fn compute_power(v: DqPair, i: DqPair) -> (f64, f64) {
    (1.5 * (v.d * i.d + v.q * i.q), 1.5 * (v.q * i.d - v.d * i.q))
}

/// PI regulator state. The integrator holds `k_i * integral(error)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PiState {
    pub integrator: f64,
    pub k_p_gain: f64,
    pub k_i_gain: f64,
}

impl PiState {
    pub fn new(k_p: f64, k_i: f64) -> Self {
        Self {
            integrator: 0.0,
            k_p_gain: k_p,
            k_i_gain: k_i,
        }
    }

    /// Backward-Euler update. The integrator is left untouched unless
    /// `integrate` is set.
    pub fn update(&mut self, error: f64, dt: f64, integrate: bool) -> f64 {
        if integrate {
            self.integrator += self.k_i_gain * error * dt;
        }
        self.k_p_gain * error + self.integrator
    }
}

/// Voltage and current regulator gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PiGains {
    pub k_pv: f64,
    pub k_iv: f64,
    pub k_pi: f64,
    pub k_ii: f64,
}

impl Default for PiGains {
    fn default() -> Self {
        Self {
            k_pv: 0.55,
            k_iv: 500.0,
            k_pi: 500.0,
            k_ii: 5000.0,
        }
    }
}

/// Voltage regulator: PI per axis plus capacitor-current decoupling and
/// line-current feed-forward. The integrators accumulate only while
/// `enable` is set.
#[allow(clippy::too_many_arguments)]
pub fn voltage_loop(
    v_ref: DqPair,
    v_meas: DqPair,
    i_line: DqPair,
    pi_d: &mut PiState,
    pi_q: &mut PiState,
    enable: bool,
    omega_c: f64,
    c_f: f64,
    dt: f64,
) -> DqPair {
    let u_d = pi_d.update(v_ref.d - v_meas.d, dt, enable);
    let u_q = pi_q.update(v_ref.q - v_meas.q, dt, enable);
    DqPair::new(
        u_d + i_line.d - omega_c * c_f * v_meas.q,
        u_q + i_line.q + omega_c * c_f * v_meas.d,
    )
}

/// Current regulator: PI per axis plus PCC-voltage feed-forward and
/// inductor decoupling, normalized by `V_dc / 2` and clamped to [-1, 1].
/// An axis integrator holds while that axis is clamped.
#[allow(clippy::too_many_arguments)]
pub fn current_loop(
    i_ref: DqPair,
    i_meas: DqPair,
    v_g: DqPair,
    pi_d: &mut PiState,
    pi_q: &mut PiState,
    omega_c: f64,
    l_f: f64,
    v_dc: f64,
    dt: f64,
) -> DqPair {
    let half_dc = 0.5 * v_dc;
    let axis = |pi: &mut PiState, error: f64, feed: f64| {
        let trial = *pi;
        let unclamped = (pi.update(error, dt, true) + feed) / half_dc;
        if unclamped.abs() > 1.0 {
            *pi = trial;
            ((pi.update(error, dt, false) + feed) / half_dc).clamp(-1.0, 1.0)
        } else {
            unclamped
        }
    };
    let m_d = axis(pi_d, i_ref.d - i_meas.d, v_g.d - omega_c * l_f * i_meas.q);
    let m_q = axis(pi_q, i_ref.q - i_meas.q, v_g.q + omega_c * l_f * i_meas.d);
    DqPair::new(m_d, m_q)
}

/// Saturated current references and the anti-windup enable (`E_n`).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SaturationOutcome {
    pub i_ref: DqPair,
    /// `true` in normal operation, `false` while the limit is engaged.
    pub enable: bool,
}

/// Independent clamping of each axis. Limits should satisfy
/// `hypot(i_d_max, i_q_max) = i_max_sat`.
pub fn saturate_per_component(i_ref: DqPair, i_d_max: f64, i_q_max: f64) -> SaturationOutcome {
    let d = i_ref.d.clamp(-i_d_max, i_d_max);
    let q = i_ref.q.clamp(-i_q_max, i_q_max);
    SaturationOutcome {
        i_ref: DqPair::new(d, q),
        enable: d == i_ref.d && q == i_ref.q,
    }
}

/// Amplitude limiting along the angle of the reference itself.
pub fn saturate_amplitude(i_ref: DqPair, i_max_sat: f64) -> SaturationOutcome {
    let magnitude = i_ref.magnitude();
    if magnitude < i_max_sat {
        return SaturationOutcome { i_ref, enable: true };
    }
    SaturationOutcome {
        i_ref: DqPair::from_polar(i_max_sat, i_ref.phase()),
        enable: false,
    }
}

/// Amplitude limiting along the flux-derived current angle.
pub fn saturate_vflux(i_ref: DqPair, i_max_sat: f64, phi_flux: Angle) -> SaturationOutcome {
    if i_ref.magnitude() < i_max_sat {
        return SaturationOutcome { i_ref, enable: true };
    }
    SaturationOutcome {
        i_ref: DqPair::from_polar(i_max_sat, phi_flux.0),
        enable: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaturationStrategy {
    PerComponent,
    Amplitude,
    #[default]
    Vflux,
}

impl SaturationStrategy {
    pub const ALL: [SaturationStrategy; 3] = [Self::PerComponent, Self::Amplitude, Self::Vflux];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::PerComponent => "per_component",
            Self::Amplitude => "amplitude",
            Self::Vflux => "vflux",
        }
    }
}

impl std::str::FromStr for SaturationStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "per_component" => Ok(Self::PerComponent),
            "amplitude" => Ok(Self::Amplitude),
            "vflux" => Ok(Self::Vflux),
            other => Err(format!(
                "unknown saturation strategy `{other}` (expected per_component, amplitude or vflux)"
            )),
        }
    }
}

impl std::fmt::Display for SaturationStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything the controller needs besides its own state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerParams {
    pub droop: DroopParams,
    pub gains: PiGains,
    pub strategy: SaturationStrategy,
    pub i_max_sat: f64,
    /// d-axis limit of the per-component strategy; the q-axis limit follows
    /// from `i_max_sat`.
    pub i_d_max: f64,
    pub omega_f: f64,
    pub flux_route: FluxRoute,
    pub l_f: f64,
    pub c_f: f64,
    pub v_dc: f64,
}

impl ControllerParams {
    pub fn i_q_max(&self) -> f64 {
        (self.i_max_sat * self.i_max_sat - self.i_d_max * self.i_d_max).max(0.0).sqrt()
    }
}

/// Sensor inputs sampled once per control period.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Measurements {
    pub v_g: ThreePhase,
    pub i_f: ThreePhase,
    pub i_line: ThreePhase,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlState {
    pub droop: DroopState,
    pub pi_vd: PiState,
    pub pi_vq: PiState,
    pub pi_id: PiState,
    pub pi_iq: PiState,
    /// `E_n` produced by the previous saturation call.
    pub enable: bool,
    pub flux: FluxEstimatorState,
    /// Modulation applied over the previous control period.
    pub m_prev: ThreePhase,
}

impl ControlState {
    pub fn new(params: &ControllerParams) -> Self {
        let g = params.gains;
        Self {
            droop: DroopState::settled(&params.droop, 0.0),
            pi_vd: PiState::new(g.k_pv, g.k_iv),
            pi_vq: PiState::new(g.k_pv, g.k_iv),
            pi_id: PiState::new(g.k_pi, g.k_ii),
            pi_iq: PiState::new(g.k_pi, g.k_ii),
            enable: true,
            flux: FluxEstimatorState::new(params.omega_f),
            m_prev: ThreePhase::ZERO,
        }
    }
}

/// Internal signals of one controller step, for recording and metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlSignals {
    pub p: f64,
    pub q: f64,
    pub omega_c: f64,
    /// Frame angle the measurements were transformed at.
    pub theta_c: f64,
    pub v_dq: DqPair,
    pub i_dq: DqPair,
    pub i_ref_unsat: DqPair,
    pub i_ref_sat: DqPair,
    pub enable: bool,
    /// Angle of the unsaturated reference.
    pub phi_conv: f64,
    pub phi_flux: f64,
    pub flux: FluxDq,
    pub i_flux: DqPair,
    pub m_dq: DqPair,
}

/// One control period: transforms, power, droop, voltage loop, saturation,
/// current loop, inverse transforms.
pub fn controller_step(
    meas: &Measurements,
    state: &mut ControlState,
    params: &ControllerParams,
    dt: f64,
) -> (ThreePhase, ControlSignals) {
    let theta = state.droop.theta_c;
    let rot = Rotation::new(Angle(theta));
    let v_dq = rot.abc_to_dq(meas.v_g);
    let i_dq = rot.abc_to_dq(meas.i_f);
    let il_dq = rot.abc_to_dq(meas.i_line);

    let (p, q) = compute_power(v_dq, il_dq);
    let (droop, v_d_ref) = droop_step(&state.droop, p, q, &params.droop, dt);
    state.droop = droop;
    let omega_c = droop.omega_c;

    let i_ref_unsat = voltage_loop(
        DqPair::new(v_d_ref, 0.0),
        v_dq,
        il_dq,
        &mut state.pi_vd,
        &mut state.pi_vq,
        state.enable,
        omega_c,
        params.c_f,
        dt,
    );

    state.flux = vflux::estimate_fluxes(state.m_prev, params.v_dc, meas.v_g, &state.flux, dt);
    let flux = state.flux.to_dq(&rot);
    let flux = match params.flux_route {
        FluxRoute::Integrated => flux,
        FluxRoute::Algebraic => {
            let (psi_cd, psi_cq) =
                vflux::converter_flux_from_current(i_dq, flux.psi_gd, flux.psi_gq, params.l_f);
            FluxDq { psi_cd, psi_cq, ..flux }
        }
    };
    let i_flux = vflux::flux_currents(&flux, params.l_f);
    let phi_flux = vflux::flux_phase_angle(i_flux.d, i_flux.q);
    let phi_conv = i_ref_unsat.phase();

    let sat = match params.strategy {
        SaturationStrategy::PerComponent => {
            saturate_per_component(i_ref_unsat, params.i_d_max, params.i_q_max())
        }
        SaturationStrategy::Amplitude => saturate_amplitude(i_ref_unsat, params.i_max_sat),
        SaturationStrategy::Vflux => saturate_vflux(i_ref_unsat, params.i_max_sat, phi_flux),
    };
    state.enable = sat.enable;

    let m_dq = current_loop(
        sat.i_ref,
        i_dq,
        v_dq,
        &mut state.pi_id,
        &mut state.pi_iq,
        omega_c,
        params.l_f,
        params.v_dc,
        dt,
    );
    // The bridge cannot realize more than the DC rail on any phase.
    let m_abc = rot.dq_to_abc(m_dq).map(|m| m.clamp(-1.0, 1.0));
    state.m_prev = m_abc;

    let signals = ControlSignals {
        p,
        q,
        omega_c,
        theta_c: theta,
        v_dq,
        i_dq,
        i_ref_unsat,
        i_ref_sat: sat.i_ref,
        enable: sat.enable,
        phi_conv,
        phi_flux: phi_flux.0,
        flux,
        i_flux,
        m_dq,
    };
    (m_abc, signals)
}
