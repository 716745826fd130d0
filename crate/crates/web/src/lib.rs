//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export returns a JSON string; failures come back as
//! `{"error": "..."}` so the page never has to catch exceptions.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use fluxsat::control::SaturationStrategy;
use fluxsat::plant::FaultKind;
use fluxsat::stability::{
    critical_clearing_time, equilibrium_angles, p_delta_normal, p_delta_saturated, saturation_switch_angle,
    swing_simulate, QuasiStaticParams, StabilityError, DEFAULT_SWING_DT,
};
use fluxsat::{run_scenario, ScenarioConfig};

/// Longest fault the page may request from the time-domain model [s].
pub const MAX_WEB_FAULT: f64 = 0.5;
const FAULT_START: f64 = 0.05;
const POST_FAULT: f64 = 0.25;
const CURVE_POINTS: usize = 181;
const MAX_TRACE_POINTS: usize = 2000;

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).unwrap_or_else(|e| error(&e.to_string()))
}

fn error(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

fn params(p_ref: f64, i_max_sat: f64, k_p: f64, omega_pp: f64) -> Result<QuasiStaticParams, StabilityError> {
    let p = QuasiStaticParams {
        p_ref,
        i_max_sat,
        k_p,
        omega_pp,
        ..QuasiStaticParams::from_scenario(&ScenarioConfig::default())
    };
    p.validate()?;
    Ok(p)
}

#[derive(Serialize)]
struct Curves {
    delta: Vec<f64>,
    normal: Vec<f64>,
    saturated: Vec<f64>,
}

#[derive(Serialize)]
struct QuasiStatic {
    p_max: f64,
    p_max_sat: f64,
    delta_0: Option<f64>,
    delta_max: Option<f64>,
    delta_max_sat: Option<f64>,
    switch_angle: Option<f64>,
    fault_frequency: f64,
    t_cc_normal: Option<f64>,
    t_cc_saturated: Option<f64>,
    note: Option<String>,
    curves: Curves,
}

/// P(delta) curves over [0, pi], equilibrium angles and clearing times.
#[wasm_bindgen]
pub fn quasi_static(p_ref: f64, i_max_sat: f64, k_p: f64, omega_pp: f64) -> String {
    let p = match params(p_ref, i_max_sat, k_p, omega_pp) {
        Ok(p) => p,
        Err(e) => return error(&e.to_string()),
    };
    let delta: Vec<f64> = (0..CURVE_POINTS)
        .map(|k| std::f64::consts::PI * k as f64 / (CURVE_POINTS - 1) as f64)
        .collect();
    let curves = Curves {
        normal: delta.iter().map(|&d| p_delta_normal(d, &p)).collect(),
        saturated: delta.iter().map(|&d| p_delta_saturated(d, &p)).collect(),
        delta,
    };
    let eq = equilibrium_angles(&p);
    let t_cc = |sat| critical_clearing_time(&p, sat).ok().and_then(|c| c.t_cc);
    let (delta_0, delta_max) = if p.p_ref <= p.p_max() {
        let d0 = (p.p_ref / p.p_max()).asin();
        (Some(d0), Some(std::f64::consts::PI - d0))
    } else {
        (None, None)
    };
    json(&QuasiStatic {
        p_max: p.p_max(),
        p_max_sat: p.p_max_sat(),
        delta_0,
        delta_max,
        delta_max_sat: eq.as_ref().ok().map(|e| e.delta_max_sat),
        switch_angle: saturation_switch_angle(&p),
        fault_frequency: fluxsat::stability::fault_frequency(&p),
        t_cc_normal: delta_0.and(t_cc(false)),
        t_cc_saturated: eq.as_ref().ok().and(t_cc(true)),
        note: eq.err().map(|e| e.to_string()),
        curves,
    })
}

#[derive(Serialize)]
struct Swing {
    stable: bool,
    clearing_angle: f64,
    t: Vec<f64>,
    delta: Vec<f64>,
    p: Vec<f64>,
    saturated: Vec<bool>,
}

/// Angle trajectory for one fault duration, thinned for plotting.
#[wasm_bindgen]
pub fn swing(p_ref: f64, i_max_sat: f64, k_p: f64, omega_pp: f64, fault_duration: f64, with_saturation: bool) -> String {
    let result = params(p_ref, i_max_sat, k_p, omega_pp)
        .and_then(|p| swing_simulate(&p, fault_duration, with_saturation, DEFAULT_SWING_DT));
    let r = match result {
        Ok(r) => r,
        Err(e) => return error(&e.to_string()),
    };
    let stride = r.trajectory.len().div_ceil(MAX_TRACE_POINTS).max(1);
    let pts: Vec<_> = r
        .trajectory
        .iter()
        .enumerate()
        .filter(|(k, _)| k % stride == 0 || *k == r.trajectory.len() - 1)
        .map(|(_, s)| s)
        .collect();
    json(&Swing {
        stable: r.stable,
        clearing_angle: r.clearing_angle,
        t: pts.iter().map(|s| s.t).collect(),
        delta: pts.iter().map(|s| s.delta).collect(),
        p: pts.iter().map(|s| s.p).collect(),
        saturated: pts
            .iter()
            .map(|s| s.mode == fluxsat::stability::SwingMode::Saturated)
            .collect(),
    })
}

#[derive(Serialize)]
struct FaultRun {
    strategy: SaturationStrategy,
    fault_start: f64,
    fault_end: f64,
    t: Vec<f64>,
    i_peak: Vec<f64>,
    p: Vec<f64>,
    omega_c: Vec<f64>,
    phi_conv: Vec<f64>,
    phi_flux: Vec<f64>,
    peak_phase_current: f64,
    phi_conv_max_step: f64,
    phi_flux_max_step: f64,
    diverged: bool,
}

/// Short time-domain run of the full model. `kind` is `three_phase_sag`,
/// `two_phase_short_to_ground` or `three_phase_shift`.
#[wasm_bindgen]
pub fn fault_run(kind: &str, strategy: &str, fault_duration: f64) -> String {
    let kind: FaultKind = match kind.parse() {
        Ok(k) => k,
        Err(e) => return error(&e),
    };
    let strategy: SaturationStrategy = match strategy.parse() {
        Ok(s) => s,
        Err(e) => return error(&e),
    };
    if !(fault_duration > 0.0 && fault_duration <= MAX_WEB_FAULT) {
        return error(&format!("fault duration must lie in (0, {MAX_WEB_FAULT}] s"));
    }
    let mut cfg = ScenarioConfig::default().with_strategy(strategy);
    cfg.fault.kind = kind;
    cfg.fault.start = FAULT_START;
    cfg.fault.duration = fault_duration;
    cfg.fault.sag_fraction = 1.0;
    cfg.fault.shift_angle = std::f64::consts::FRAC_PI_2;
    cfg.fault.fault_resistance = 1e-3;
    cfg.t_end = FAULT_START + fault_duration + POST_FAULT;
    if let Err(e) = cfg.validate() {
        return error(&e.to_string());
    }
    let out = run_scenario(&cfg);
    let s = &out.samples;
    let m = &out.metrics;
    json(&FaultRun {
        strategy,
        fault_start: cfg.fault.start,
        fault_end: cfg.fault.end(),
        t: s.iter().map(|x| x.t).collect(),
        i_peak: s
            .iter()
            .map(|x| x.i_f_a.abs().max(x.i_f_b.abs()).max(x.i_f_c.abs()))
            .collect(),
        p: s.iter().map(|x| x.p).collect(),
        omega_c: s.iter().map(|x| x.omega_c).collect(),
        phi_conv: s.iter().map(|x| x.phi_conv).collect(),
        phi_flux: s.iter().map(|x| x.phi_flux).collect(),
        peak_phase_current: m.peak_phase_current,
        phi_conv_max_step: m.phi_conv_max_step,
        phi_flux_max_step: m.phi_flux_max_step,
        diverged: m.diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn quasi_static_reports_rated_angles() {
        let v = parse(&quasi_static(30e3, 110.0, 1e-3, 35.0));
        assert!((v["delta_max_sat"].as_f64().unwrap() - 1.08838).abs() < 1e-5);
        assert!((v["fault_frequency"].as_f64().unwrap() - 344.0).abs() < 1e-9);
        assert_eq!(v["curves"]["delta"].as_array().unwrap().len(), CURVE_POINTS);
        assert!(v["t_cc_saturated"].as_f64().unwrap() < v["t_cc_normal"].as_f64().unwrap());
    }

    #[test]
    fn infeasible_saturated_point_is_reported_not_fatal() {
        let v = parse(&quasi_static(80e3, 110.0, 1e-3, 35.0));
        assert!(v["delta_max_sat"].is_null());
        assert!(v["delta_0"].is_number());
        assert!(v["note"].as_str().unwrap().contains("P_max_sat"));
        assert!(parse(&quasi_static(30e3, -1.0, 1e-3, 35.0))["error"].is_string());
    }

    #[test]
    fn swing_is_thinned_and_flags_stability() {
        let v = parse(&swing(30e3, 110.0, 1e-3, 35.0, 0.02, true));
        assert_eq!(v["stable"], true);
        assert!(v["t"].as_array().unwrap().len() <= MAX_TRACE_POINTS + 1);
        let v = parse(&swing(30e3, 110.0, 1e-3, 35.0, 0.2, true));
        assert_eq!(v["stable"], false);
    }

    #[test]
    fn fault_run_returns_traces() {
        let v = parse(&fault_run("three_phase_sag", "vflux", 0.05));
        let n = v["t"].as_array().unwrap().len();
        assert!(n > 300);
        assert_eq!(v["phi_flux"].as_array().unwrap().len(), n);
        assert!(v["peak_phase_current"].as_f64().unwrap() < 132.0);
        assert!(parse(&fault_run("brownout", "vflux", 0.05))["error"].is_string());
        assert!(parse(&fault_run("three_phase_sag", "vflux", 2.0))["error"].is_string());
    }
}
