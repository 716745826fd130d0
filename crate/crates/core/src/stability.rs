//! Quasi-static transient stability of the droop loop.
//!
//! The converter and the grid are two voltage sources behind a lossless
//! reactance `X`. The power angle `delta` obeys
//!
//! ```text
//! d(delta)/dt = omega_c - omega_g
//! omega_c     = omega_0 + k_P (P_ref - P_f)
//! dP_f/dt     = omega_pp (P(delta) - P_f)
//! ```
//!
//! with `P(delta) = 0` while the fault is on. After clearance the power
//! follows `P_max sin(delta)`, or `P_max_sat cos(delta)` while the current
//! the two sources would drive through `X` exceeds the saturation limit.
//! Powers are three-phase totals of peak-valued phasors.
//!
//! Filter and grid resistances and the local load are ignored here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::config::ScenarioConfig;

/// Minimum time simulated after clearance before the outcome is judged [s].
/// Slowly damped parameter sets get a longer horizon.
pub const SETTLE_TIME: f64 = 6.0;

/// Upper bound on the recovery horizon [s].
pub const MAX_SETTLE_TIME: f64 = 1e4;

/// Step used once the first [`SETTLE_TIME`] seconds of recovery are past [s].
const SLOW_STEP: f64 = 1e-3;

/// Default integration step of [`swing_simulate`] [s].
pub const DEFAULT_SWING_DT: f64 = 1e-5;

/// Longest fault duration tried by [`critical_clearing_time`] [s].
pub const SEARCH_WINDOW: f64 = 2.0;

/// Resolution of the clearing-time bisection [s].
pub const CLEARING_RESOLUTION: f64 = 1e-3;

/// Tolerance on the final angle for a run to count as stable [rad].
pub const ANGLE_TOLERANCE: f64 = 1e-3;

/// Relative tolerance on the final power for a run to count as stable.
pub const POWER_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilityError {
    #[error("no equilibrium: P_ref = {p_ref} W exceeds {which} = {limit} W")]
    NoEquilibrium {
        p_ref: f64,
        which: &'static str,
        limit: f64,
    },
    #[error("invalid quasi-static parameters: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasiStaticParams {
    /// Converter voltage magnitude, phase peak [V].
    pub v_c: f64,
    /// Grid voltage magnitude, phase peak [V].
    pub v_g: f64,
    /// Line reactance [ohm].
    pub x: f64,
    pub p_ref: f64,
    /// Frequency droop [rad/s per W].
    pub k_p: f64,
    pub omega_0: f64,
    pub omega_g: f64,
    /// Current limit, peak [A].
    pub i_max_sat: f64,
    /// Power filter cut-off [rad/s].
    pub omega_pp: f64,
}

impl QuasiStaticParams {
    /// Lossless reduction of a scenario: `X = omega_grid * L_g`.
    pub fn from_scenario(cfg: &ScenarioConfig) -> Self {
        Self {
            v_c: cfg.droop.v_ref,
            v_g: cfg.plant.v_grid_peak,
            x: cfg.plant.omega_grid * cfg.plant.l_g,
            p_ref: cfg.droop.p_ref,
            k_p: cfg.droop.k_p,
            omega_0: cfg.droop.omega_ref,
            omega_g: cfg.plant.omega_grid,
            i_max_sat: cfg.i_max_sat,
            omega_pp: cfg.droop.omega_pp,
        }
    }

    pub fn validate(&self) -> Result<(), StabilityError> {
        let positive = [
            ("v_c", self.v_c),
            ("v_g", self.v_g),
            ("x", self.x),
            ("i_max_sat", self.i_max_sat),
            ("omega_pp", self.omega_pp),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(StabilityError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let finite = [
            ("p_ref", self.p_ref),
            ("k_p", self.k_p),
            ("omega_0", self.omega_0),
            ("omega_g", self.omega_g),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(StabilityError::Invalid(format!("{name} must be finite, got {v}")));
            }
        }
        if self.p_ref < 0.0 || self.k_p < 0.0 {
            return Err(StabilityError::Invalid("p_ref and k_p must be non-negative".into()));
        }
        Ok(())
    }

    pub fn p_max(&self) -> f64 {
        1.5 * self.v_c * self.v_g / self.x
    }

    pub fn p_max_sat(&self) -> f64 {
        1.5 * self.v_g * self.i_max_sat
    }

    /// Peak current the two sources would drive through `X` at angle `delta`.
    pub fn implied_current(&self, delta: f64) -> f64 {
        let dv2 = self.v_c * self.v_c + self.v_g * self.v_g - 2.0 * self.v_c * self.v_g * delta.cos();
        dv2.max(0.0).sqrt() / self.x
    }
}

pub fn p_delta_normal(delta: f64, params: &QuasiStaticParams) -> f64 {
    params.p_max() * delta.sin()
}

pub fn p_delta_saturated(delta: f64, params: &QuasiStaticParams) -> f64 {
    params.p_max_sat() * delta.cos()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumAngles {
    /// Stable operating angle.
    pub delta_0: f64,
    /// Unstable equilibrium of the unsaturated curve.
    pub delta_max: f64,
    /// Angle where the saturated curve delivers `P_ref`.
    pub delta_max_sat: f64,
}

pub fn equilibrium_angles(params: &QuasiStaticParams) -> Result<EquilibriumAngles, StabilityError> {
    let (p_max, p_max_sat) = (params.p_max(), params.p_max_sat());
    if params.p_ref > p_max {
        return Err(StabilityError::NoEquilibrium {
            p_ref: params.p_ref,
            which: "P_max",
            limit: p_max,
        });
    }
    if params.p_ref > p_max_sat {
        return Err(StabilityError::NoEquilibrium {
            p_ref: params.p_ref,
            which: "P_max_sat",
            limit: p_max_sat,
        });
    }
    let delta_0 = (params.p_ref / p_max).asin();
    Ok(EquilibriumAngles {
        delta_0,
        delta_max: std::f64::consts::PI - delta_0,
        delta_max_sat: (params.p_ref / p_max_sat).acos(),
    })
}

/// Settled converter frequency while the fault holds `P` at zero.
pub fn fault_frequency(params: &QuasiStaticParams) -> f64 {
    params.k_p * params.p_ref + params.omega_0
}

/// Smallest `|delta|` at which the implied current reaches `I_max_sat`, by
/// bisection on `[0, pi]`. `None` when the limit is never reached.
pub fn saturation_switch_angle(params: &QuasiStaticParams) -> Option<f64> {
    let over = |d: f64| params.implied_current(d) >= params.i_max_sat;
    if over(0.0) {
        return Some(0.0);
    }
    if !over(std::f64::consts::PI) {
        return None;
    }
    let (mut lo, mut hi) = (0.0, std::f64::consts::PI);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if over(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwingMode {
    Normal,
    Saturated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwingPoint {
    pub t: f64,
    pub delta: f64,
    /// Delivered power [W], before the filter.
    pub p: f64,
    pub mode: SwingMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwingResult {
    pub trajectory: Vec<SwingPoint>,
    pub stable: bool,
    /// Angle at fault clearance.
    pub clearing_angle: f64,
}

struct SwingModel {
    params: QuasiStaticParams,
    switch_angle: Option<f64>,
    with_saturation: bool,
}

impl SwingModel {
    fn new(params: &QuasiStaticParams, with_saturation: bool) -> Self {
        Self {
            params: *params,
            switch_angle: saturation_switch_angle(params),
            with_saturation,
        }
    }

    fn power(&self, delta: f64, faulted: bool) -> (f64, SwingMode) {
        if faulted {
            let mode = if self.with_saturation { SwingMode::Saturated } else { SwingMode::Normal };
            return (0.0, mode);
        }
        let saturated = self.with_saturation
            && self.switch_angle.is_some_and(|sw| wrap(delta).abs() >= sw);
        if saturated {
            (p_delta_saturated(delta, &self.params), SwingMode::Saturated)
        } else {
            (p_delta_normal(delta, &self.params), SwingMode::Normal)
        }
    }

    fn rates(&self, delta: f64, p_f: f64, faulted: bool) -> (f64, f64) {
        let p = &self.params;
        let omega_c = p.omega_0 + p.k_p * (p.p_ref - p_f);
        let (power, _) = self.power(delta, faulted);
        (omega_c - p.omega_g, p.omega_pp * (power - p_f))
    }

    fn rk4(&self, delta: f64, p_f: f64, faulted: bool, h: f64) -> (f64, f64) {
        let (a1, b1) = self.rates(delta, p_f, faulted);
        let (a2, b2) = self.rates(delta + 0.5 * h * a1, p_f + 0.5 * h * b1, faulted);
        let (a3, b3) = self.rates(delta + 0.5 * h * a2, p_f + 0.5 * h * b2, faulted);
        let (a4, b4) = self.rates(delta + h * a3, p_f + h * b3, faulted);
        (
            delta + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4),
            p_f + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4),
        )
    }
}

fn wrap(delta: f64) -> f64 {
    crate::signal::wrap_to_pi(delta)
}

/// Decay rate of the slowest small-signal mode around `delta_0` [1/s].
pub fn slowest_decay_rate(params: &QuasiStaticParams, delta_0: f64) -> f64 {
    let b = params.omega_pp;
    let k = params.omega_pp * params.k_p * params.p_max() * delta_0.cos();
    let disc = b * b - 4.0 * k;
    if disc <= 0.0 {
        0.5 * b
    } else {
        // Smaller root of s^2 + b s + k, written to avoid cancellation.
        2.0 * k / (b + disc.sqrt())
    }
}

/// Simulates a fault of `fault_duration` starting from the settled operating
/// point, followed by the recovery. The run stops early once the state is
/// back at the operating point, or when it slips a full pole (unstable).
pub fn swing_simulate(
    params: &QuasiStaticParams,
    fault_duration: f64,
    with_saturation: bool,
    dt: f64,
) -> Result<SwingResult, StabilityError> {
    let mut trajectory = Vec::new();
    let (stable, clearing_angle) = integrate(params, fault_duration, with_saturation, dt, Some(&mut trajectory))?;
    Ok(SwingResult {
        trajectory,
        stable,
        clearing_angle,
    })
}

fn integrate(
    params: &QuasiStaticParams,
    fault_duration: f64,
    with_saturation: bool,
    dt: f64,
    mut record: Option<&mut Vec<SwingPoint>>,
) -> Result<(bool, f64), StabilityError> {
    params.validate()?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(StabilityError::Invalid(format!("dt must be positive, got {dt}")));
    }
    if !(fault_duration.is_finite() && fault_duration >= 0.0) {
        return Err(StabilityError::Invalid(format!(
            "fault duration must be non-negative, got {fault_duration}"
        )));
    }
    // The unsaturated model only needs the operating point itself.
    let delta_0 = match equilibrium_angles(params) {
        Ok(eq) => eq.delta_0,
        Err(StabilityError::NoEquilibrium { which: "P_max_sat", .. }) if !with_saturation => {
            (params.p_ref / params.p_max()).asin()
        }
        Err(e) => return Err(e),
    };
    let model = SwingModel::new(params, with_saturation);
    let rate = slowest_decay_rate(params, delta_0);
    let settle = if rate > 0.0 {
        (10.0 / rate).clamp(SETTLE_TIME, MAX_SETTLE_TIME)
    } else {
        MAX_SETTLE_TIME
    };
    let t_end = fault_duration + settle;
    let coarse_from = fault_duration + SETTLE_TIME;
    let converged = |delta: f64, p_f: f64| {
        (delta - delta_0).abs() < ANGLE_TOLERANCE
            && (p_f - params.p_ref).abs() <= POWER_TOLERANCE * params.p_ref.max(1.0)
    };
    let settled = |delta: f64, p_f: f64| {
        (delta - delta_0).abs() < 0.1 * ANGLE_TOLERANCE
            && (p_f - params.p_ref).abs() <= 0.1 * POWER_TOLERANCE * params.p_ref.max(1.0)
    };

    let (mut t, mut delta, mut p_f) = (0.0, delta_0, params.p_ref);
    let mut clearing_angle = if fault_duration == 0.0 { Some(delta) } else { None };
    let push = |rec: &mut Option<&mut Vec<SwingPoint>>, t: f64, delta: f64, faulted: bool| {
        if let Some(v) = rec.as_deref_mut() {
            let (p, mode) = model.power(delta, faulted);
            v.push(SwingPoint { t, delta, p, mode });
        }
    };
    push(&mut record, t, delta, fault_duration > 0.0);

    while t < t_end {
        let faulted = t < fault_duration;
        // Land exactly on the clearance instant.
        let boundary = if faulted { fault_duration } else { t_end };
        let step = if t >= coarse_from { dt.max(SLOW_STEP) } else { dt };
        let h = step.min(boundary - t);
        (delta, p_f) = model.rk4(delta, p_f, faulted, h);
        t = if boundary - t <= step { boundary } else { t + h };
        if clearing_angle.is_none() && t >= fault_duration {
            clearing_angle = Some(delta);
        }
        push(&mut record, t, delta, t < fault_duration);
        if (delta - delta_0).abs() > 2.0 * std::f64::consts::PI {
            return Ok((false, clearing_angle.unwrap_or(delta)));
        }
        if !faulted && t >= coarse_from.min(t_end) && settled(delta, p_f) {
            break;
        }
    }

    Ok((converged(delta, p_f), clearing_angle.unwrap_or(delta)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClearingTime {
    /// Longest stable fault duration, to [`CLEARING_RESOLUTION`]; `None`
    /// when every duration in [`SEARCH_WINDOW`] is stable.
    pub t_cc: Option<f64>,
    /// Angle reached at `t_cc`.
    pub clearing_angle: Option<f64>,
    /// `delta_max` or `delta_max_sat`, depending on the mode.
    pub reference_angle: f64,
}

/// Bisection for the critical clearing time.
pub fn critical_clearing_time(
    params: &QuasiStaticParams,
    with_saturation: bool,
) -> Result<ClearingTime, StabilityError> {
    let eq = equilibrium_angles(params)?;
    let reference_angle = if with_saturation { eq.delta_max_sat } else { eq.delta_max };
    let stable = |d: f64| integrate(params, d, with_saturation, DEFAULT_SWING_DT, None);

    if stable(SEARCH_WINDOW)?.0 {
        return Ok(ClearingTime {
            t_cc: None,
            clearing_angle: None,
            reference_angle,
        });
    }
    let (mut lo, mut hi) = (0.0, SEARCH_WINDOW);
    if !stable(lo)?.0 {
        return Ok(ClearingTime {
            t_cc: Some(0.0),
            clearing_angle: Some(eq.delta_0),
            reference_angle,
        });
    }
    while hi - lo > CLEARING_RESOLUTION {
        let mid = 0.5 * (lo + hi);
        if stable(mid)?.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (_, angle) = stable(lo)?;
    Ok(ClearingTime {
        t_cc: Some(lo),
        clearing_angle: Some(angle),
        reference_angle,
    })
}

/// One cell of a stability map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCell {
    pub p_ref: f64,
    pub fault_duration: f64,
    /// `None` when `p_ref` has no operating point in that mode.
    pub stable_normal: Option<bool>,
    pub stable_saturated: Option<bool>,
}

/// Stability of every `(p_ref, fault_duration)` pair, row-major in `p_refs`.
pub fn stability_boundary(
    params: &QuasiStaticParams,
    p_refs: &[f64],
    durations: &[f64],
    dt: f64,
) -> Result<Vec<BoundaryCell>, StabilityError> {
    params.validate()?;
    let mut cells = Vec::with_capacity(p_refs.len() * durations.len());
    for &p_ref in p_refs {
        let p = QuasiStaticParams { p_ref, ..*params };
        for &fault_duration in durations {
            let outcome = |sat: bool| match integrate(&p, fault_duration, sat, dt, None) {
                Ok((stable, _)) => Ok(Some(stable)),
                Err(StabilityError::NoEquilibrium { .. }) => Ok(None),
                Err(e) => Err(e),
            };
            cells.push(BoundaryCell {
                p_ref,
                fault_duration,
                stable_normal: outcome(false)?,
                stable_saturated: outcome(true)?,
            });
        }
    }
    Ok(cells)
}
