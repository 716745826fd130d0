//! Virtual-flux estimation and the flux-derived current phase angle.
//!
//! Converter-side and grid-side fluxes are integrals of the converter and
//! PCC voltages. A pure integrator would carry an unknown initial flux and
//! drift on any offset, so each phase uses the first-order filter
//! `1 / (s + omega_f)` instead, which matches `1 / s` well above `omega_f`
//! and forgets its initial condition at rate `omega_f`.
//!
//! The converter voltage is not measured: it is rebuilt from the modulation
//! references and the DC-link voltage.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::signal::{Angle, DqPair, Rotation, ThreePhase};

/// Flux currents below this magnitude [A] have no meaningful angle.
pub const DEGENERATE_CURRENT: f64 = 1e-6;

/// Default filter cut-off: 1 Hz.
pub const DEFAULT_OMEGA_F: f64 = 2.0 * PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxEstimatorState {
    /// Converter-side flux per phase [Wb].
    pub psi_c: ThreePhase,
    /// Grid-side flux per phase [Wb].
    pub psi_g: ThreePhase,
    /// Filter cut-off [rad/s].
    pub omega_f: f64,
}

impl FluxEstimatorState {
    pub fn new(omega_f: f64) -> Self {
        Self {
            psi_c: ThreePhase::ZERO,
            psi_g: ThreePhase::ZERO,
            omega_f,
        }
    }

    pub fn to_dq(&self, rot: &Rotation) -> FluxDq {
        let c = rot.abc_to_dq(self.psi_c);
        let g = rot.abc_to_dq(self.psi_g);
        FluxDq {
            psi_cd: c.d,
            psi_cq: c.q,
            psi_gd: g.d,
            psi_gq: g.q,
        }
    }
}

/// Converter and grid fluxes in the converter frame [Wb].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FluxDq {
    pub psi_cd: f64,
    pub psi_cq: f64,
    pub psi_gd: f64,
    pub psi_gq: f64,
}

/// Backward-Euler step of `dpsi/dt = v - omega_f * psi`.
pub fn flux_filter_step(psi: f64, v: f64, omega_f: f64, dt: f64) -> f64 {
    (psi + dt * v) / (1.0 + dt * omega_f)
}

/// How the converter-side flux that feeds the current angle is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxRoute {
    /// `psi_c = L_f i + psi_g` from the measured filter current, with only
    /// the grid-side flux integrated.
    #[default]
    Algebraic,
    /// Both fluxes integrated; the converter voltage is rebuilt from the
    /// modulation references.
    Integrated,
}

impl FluxRoute {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Algebraic => "algebraic",
            Self::Integrated => "integrated",
        }
    }
}

/// Converter flux in the converter frame from the filter current and the
/// grid-side flux.
pub fn converter_flux_from_current(i_dq: DqPair, psi_gd: f64, psi_gq: f64, l_f: f64) -> (f64, f64) {
    (l_f * i_dq.d + psi_gd, l_f * i_dq.q + psi_gq)
}

/// Advances both flux sets by one control period.
pub fn estimate_fluxes(
    m_abc: ThreePhase,
    v_dc: f64,
    v_g_meas: ThreePhase,
    state: &FluxEstimatorState,
    dt: f64,
) -> FluxEstimatorState {
    let v_c = m_abc * (0.5 * v_dc);
    let w = state.omega_f;
    FluxEstimatorState {
        psi_c: state.psi_c.zip_with(v_c, |psi, v| flux_filter_step(psi, v, w, dt)),
        psi_g: state.psi_g.zip_with(v_g_meas, |psi, v| flux_filter_step(psi, v, w, dt)),
        omega_f: w,
    }
}

/// Filter-inductor current implied by the flux difference across `L_f`.
pub fn flux_currents(flux: &FluxDq, l_f: f64) -> DqPair {
    DqPair::new((flux.psi_cd - flux.psi_gd) / l_f, (flux.psi_cq - flux.psi_gq) / l_f)
}

/// Four-quadrant angle of the flux currents; 0 when both are negligible.
pub fn flux_phase_angle(i_df: f64, i_qf: f64) -> Angle {
    if i_df.abs() < DEGENERATE_CURRENT && i_qf.abs() < DEGENERATE_CURRENT {
        Angle(0.0)
    } else {
        Angle(i_qf.atan2(i_df))
    }
}
