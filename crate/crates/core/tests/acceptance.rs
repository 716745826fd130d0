//! Acceptance criteria 1 to 10. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails. Tolerances are pinned below.

use std::f64::consts::PI;
use std::time::Instant;

use fluxsat::control::SaturationStrategy;
use fluxsat::harness::compare::sweep_configs;
use fluxsat::harness::config::InitialState;
use fluxsat::harness::output::csv_string;
use fluxsat::harness::presets::{preset, preset_names};
use fluxsat::harness::run::Simulation;
use fluxsat::plant::{power_flows, step_plant, stored_energy, FaultDescriptor, PlantParams, PlantState};
use fluxsat::signal::{clarke, inverse_clarke, inverse_park, park, wrap_to_pi, Angle, DqPair, ThreePhase};
use fluxsat::stability::{
    critical_clearing_time, equilibrium_angles, fault_frequency, swing_simulate, QuasiStaticParams,
    StabilityError, DEFAULT_SWING_DT,
};
use fluxsat::vflux::{flux_filter_step, FluxRoute, DEFAULT_OMEGA_F};
use fluxsat::{run_scenario, RunOutput, ScenarioConfig};

// Criterion 1.
const I_MAX_SAT: f64 = 110.0;
const TRANSIENT_PEAK: f64 = 1.2 * I_MAX_SAT;
const SETTLED_PEAK: f64 = 1.05 * I_MAX_SAT;
const WALL_SECONDS_PER_10S: f64 = 60.0;
// Criterion 2.
const P_BAND: f64 = 0.01;
const OMEGA_BAND: f64 = 0.01;
const SETTLE_BY: f64 = 2.0;
// Criterion 3.
const FAULT_OMEGA: f64 = 344.0;
const FAULT_OMEGA_TOL: f64 = 1.0;
// Criterion 4.
const ANGLE_TOL: f64 = 1e-9;
// Criterion 5.
const SLEW_REL_TOL: f64 = 0.20;
const CLEARING_ANGLE_TOL: f64 = 0.05;
// Criterion 6.
const FLUX_AMP_REL_TOL: f64 = 3e-4;
const FLUX_PHASE_TOL_DEG: f64 = 1.2;
// Criterion 7.
const FLUX_CURRENT_MAG_TOL: f64 = 0.02;
const FLUX_CURRENT_ANGLE_TOL_DEG: f64 = 2.0;
// Criterion 9.
const SWEEP_DURATIONS: [f64; 8] = [0.1, 0.25, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0];
const SWEEP_TAIL: f64 = 3.0;
// Criterion 10.
const ROUND_TRIP_TOL: f64 = 1e-12;
const HALVING_TOL: f64 = 1e-6;
const ENERGY_TOL: f64 = 5e-3;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

struct PresetRuns {
    /// (preset, strategy, output, wall seconds)
    runs: Vec<(String, SaturationStrategy, RunOutput, f64)>,
}

fn run_presets() -> PresetRuns {
    let mut runs = Vec::new();
    for name in preset_names() {
        let cfg = preset(name).unwrap().unwrap();
        for strategy in [SaturationStrategy::Amplitude, SaturationStrategy::Vflux] {
            let started = Instant::now();
            let out = run_scenario(&cfg.with_strategy(strategy));
            runs.push((name.to_string(), strategy, out, started.elapsed().as_secs_f64()));
        }
    }
    PresetRuns { runs }
}

fn criterion_1(p: &PresetRuns) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, strategy, out, wall) in &p.runs {
        let m = &out.metrics;
        let per_10s = wall * 10.0 / m.t_final;
        let ok = m.peak_phase_current <= TRANSIENT_PEAK
            && m.peak_after_transient <= SETTLED_PEAK
            && per_10s < WALL_SECONDS_PER_10S;
        pass &= ok;
        parts.push(format!(
            "{name}/{strategy}: peak {:.1} A, after 10 ms {:.1} A, {per_10s:.1} s per 10 s",
            m.peak_phase_current, m.peak_after_transient
        ));
    }
    verdict(pass, parts.join("; "))
}

fn criterion_2() -> Verdict {
    let cfg = ScenarioConfig {
        t_end: SETTLE_BY + 1.0,
        initial_state: InitialState::NoLoad,
        ..ScenarioConfig::default()
    };
    let p_ref = cfg.droop.p_ref;
    let out = run_scenario(&cfg);
    let inside = |s: &fluxsat::harness::run::Sample| {
        (s.p - p_ref).abs() < P_BAND * p_ref && (s.omega_c - 314.0).abs() < OMEGA_BAND
    };
    let settled_at = out
        .samples
        .iter()
        .rposition(|s| !inside(s))
        .map(|k| out.samples.get(k + 1).map_or(f64::INFINITY, |s| s.t))
        .unwrap_or(0.0);
    let last = out.samples.last().unwrap();
    verdict(
        settled_at <= SETTLE_BY && !out.metrics.sync_lost,
        format!(
            "from no-load start, inside both bands from t = {settled_at:.3} s; final P = {:.1} W, omega_c = {:.5} rad/s",
            last.p, last.omega_c
        ),
    )
}

fn criterion_3(p: &PresetRuns) -> Verdict {
    let params = QuasiStaticParams::from_scenario(&ScenarioConfig::default());
    let omega = fault_frequency(&params);
    // Slope of the angle late in a long fault, after the power filter settled.
    let duration = 0.15;
    let r = swing_simulate(&params, duration, true, DEFAULT_SWING_DT).unwrap();
    let window: Vec<_> = r.trajectory.iter().filter(|s| s.t > duration - 0.01 && s.t <= duration).collect();
    let (a, b) = (window.first().unwrap(), window.last().unwrap());
    let slewed = (b.delta - a.delta) / (b.t - a.t) + params.omega_g;

    // Time-domain value for reference: the local load keeps P above zero.
    let info = p
        .runs
        .iter()
        .find(|(n, s, _, _)| n == "sag" && *s == SaturationStrategy::Vflux)
        .and_then(|(_, _, out, _)| {
            let cfg = preset("sag").unwrap().unwrap();
            out.samples.iter().rev().find(|s| s.t < cfg.fault.end() - 0.01).map(|s| (s.omega_c, s.p))
        });
    let info = info
        .map(|(w, p)| format!("; time-domain sag (info only): omega_c = {w:.1} rad/s at P = {p:.0} W"))
        .unwrap_or_default();
    verdict(
        (omega - FAULT_OMEGA).abs() < FAULT_OMEGA_TOL && (slewed - FAULT_OMEGA).abs() < FAULT_OMEGA_TOL,
        format!("quasi-static fault frequency {omega:.3} rad/s, slewing at {slewed:.3} rad/s{info}"),
    )
}

fn criterion_4() -> Verdict {
    let base = QuasiStaticParams::from_scenario(&ScenarioConfig::default());
    let (p_max, p_max_sat) = (base.p_max(), base.p_max_sat());
    let mut worst = 0.0f64;
    let mut pass = true;
    let (mut checked, mut sat_limited) = (0, 0);
    for k in 1..=20 {
        let ratio = k as f64 / 21.0;
        let params = QuasiStaticParams {
            p_ref: ratio * p_max,
            ..base
        };
        match equilibrium_angles(&params) {
            Ok(eq) => {
                let d0 = ratio.asin();
                let errs = [
                    (eq.delta_0 - d0).abs(),
                    (eq.delta_max - (PI - d0)).abs(),
                    (eq.delta_max_sat - (params.p_ref / p_max_sat).acos()).abs(),
                ];
                worst = errs.iter().copied().fold(worst, f64::max);
                checked += 1;
                pass &= params.p_ref <= p_max_sat;
            }
            Err(StabilityError::NoEquilibrium { which: "P_max_sat", .. }) => {
                sat_limited += 1;
                pass &= params.p_ref > p_max_sat;
            }
            Err(_) => pass = false,
        }
    }
    for ratio in [1.0 + 1e-9, 1.05, 2.0] {
        let params = QuasiStaticParams {
            p_ref: ratio * p_max,
            ..base
        };
        pass &= matches!(equilibrium_angles(&params), Err(StabilityError::NoEquilibrium { which: "P_max", .. }));
    }
    verdict(
        pass && worst < ANGLE_TOL,
        format!(
            "{checked} grid points with all angles, max error {worst:.1e} rad; {sat_limited} points above P_max_sat rejected; P_ref > P_max rejected"
        ),
    )
}

fn criterion_5() -> Verdict {
    let params = QuasiStaticParams::from_scenario(&ScenarioConfig::default());
    let eq = equilibrium_angles(&params).unwrap();
    let cc = critical_clearing_time(&params, true).unwrap();
    let oracle = (eq.delta_max_sat - eq.delta_0) / (params.k_p * params.p_ref);
    let Some(t_cc) = cc.t_cc else {
        return verdict(false, "no loss of synchronism inside the search window".into());
    };
    let angle = cc.clearing_angle.unwrap();
    let rel = (t_cc - oracle) / oracle;
    verdict(
        rel.abs() <= SLEW_REL_TOL && (angle - eq.delta_max_sat).abs() <= CLEARING_ANGLE_TOL,
        format!(
            "T_cc = {:.2} ms vs slew oracle {:.2} ms ({:+.1}%); delta(T_cc) = {angle:.4} rad vs delta_max_sat = {:.4} rad",
            t_cc * 1e3,
            oracle * 1e3,
            rel * 100.0,
            eq.delta_max_sat
        ),
    )
}

fn criterion_6() -> Verdict {
    let omega = 2.0 * PI * 50.0;
    let dt = 1e-6;
    let period = 2.0 * PI / omega;
    let n_settle = (6.0 / DEFAULT_OMEGA_F / dt).round() as usize;
    let n_cycle = (period / dt).round() as usize;
    let (mut psi, mut a, mut b) = (0.0, 0.0, 0.0);
    for k in 0..n_settle + n_cycle {
        let t = (k + 1) as f64 * dt;
        psi = flux_filter_step(psi, (omega * t).cos(), DEFAULT_OMEGA_F, dt);
        if k >= n_settle {
            a += psi * (omega * t).cos();
            b += psi * (omega * t).sin();
        }
    }
    let (a, b) = (2.0 * a / n_cycle as f64, 2.0 * b / n_cycle as f64);
    // The ideal integral of cos(wt) is sin(wt)/w: amplitude 1/w, lag 90 deg.
    let amp_err = (a.hypot(b) * omega - 1.0).abs();
    let phase_err = (b.atan2(a) - PI / 2.0).abs().to_degrees();
    verdict(
        amp_err < FLUX_AMP_REL_TOL && phase_err < FLUX_PHASE_TOL_DEG,
        format!("amplitude error {:.4}%, phase error {phase_err:.3} deg", amp_err * 100.0),
    )
}

fn criterion_7() -> Verdict {
    let cfg = ScenarioConfig {
        t_end: 1.2,
        flux_route: FluxRoute::Integrated,
        ..ScenarioConfig::default()
    };
    let mut sim = Simulation::new(&cfg);
    let mut last = None;
    while !sim.is_finished() {
        let (_, sig) = sim.step().unwrap();
        last = Some((sig.i_flux, sig.i_dq));
    }
    let (flux, meas): (DqPair, DqPair) = last.unwrap();
    let mag_err = (flux.magnitude() - meas.magnitude()).abs() / meas.magnitude();
    let ang_err = wrap_to_pi(flux.phase() - meas.phase()).abs().to_degrees();
    verdict(
        mag_err < FLUX_CURRENT_MAG_TOL && ang_err < FLUX_CURRENT_ANGLE_TOL_DEG,
        format!(
            "integrated flux route: |I_f| = {:.2} A vs |i| = {:.2} A ({:.2}%), angle gap {ang_err:.3} deg",
            flux.magnitude(),
            meas.magnitude(),
            mag_err * 100.0
        ),
    )
}

fn criterion_8(p: &PresetRuns) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in preset_names() {
        let find = |s| p.runs.iter().find(|(n, st, _, _)| n == name && *st == s).map(|r| &r.2.metrics).unwrap();
        let v = find(SaturationStrategy::Vflux);
        let a = find(SaturationStrategy::Amplitude);
        let ok = v.phi_flux_max_step < v.phi_conv_max_step;
        pass &= ok;
        parts.push(format!(
            "{name}: flux {:.4} vs conventional {:.4} rad/sample{} (amplitude run conventional {:.4})",
            v.phi_flux_max_step,
            v.phi_conv_max_step,
            if ok { "" } else { " NOT smaller" },
            a.phi_conv_max_step
        ));
    }
    verdict(pass, parts.join("; "))
}

fn criterion_9() -> Verdict {
    let mut base = preset("sag").unwrap().unwrap();
    base.t_end = base.fault.end() + SWEEP_TAIL;
    let configs = sweep_configs(&base, "fault.duration", &SWEEP_DURATIONS).unwrap();
    let recovered = |strategy| -> Vec<bool> {
        configs
            .iter()
            .map(|c| !run_scenario(&c.with_strategy(strategy)).metrics.sync_lost)
            .collect()
    };
    let amp = recovered(SaturationStrategy::Amplitude);
    let vf = recovered(SaturationStrategy::Vflux);
    let longest = |flags: &[bool]| {
        SWEEP_DURATIONS
            .iter()
            .zip(flags)
            .filter(|(_, &ok)| ok)
            .map(|(d, _)| *d)
            .fold(0.0f64, f64::max)
    };
    let (l_amp, l_vf) = (longest(&amp), longest(&vf));
    let separated = amp.iter().zip(&vf).any(|(a, v)| *v && !*a);
    let show = |f: &[bool]| f.iter().map(|&ok| if ok { 'R' } else { 'x' }).collect::<String>();
    let note = if separated {
        String::new()
    } else {
        " NOTE: no separation in the simulated regime; neither outcome favors a strategy at these durations".into()
    };
    verdict(
        l_vf >= l_amp,
        format!(
            "durations {SWEEP_DURATIONS:?} s; amplitude {} (longest {l_amp} s), vflux {} (longest {l_vf} s){note}",
            show(&amp),
            show(&vf)
        ),
    )
}

fn zoh_drive(t: f64, p: &PlantParams) -> ThreePhase {
    let t_hold = (t / 1e-4 + 1e-9).floor() * 1e-4;
    ThreePhase::balanced(1.05 * p.v_grid_peak, p.omega_grid * t_hold + 0.2)
}

fn open_loop(p: &PlantParams, dt: f64, t_end: f64) -> PlantState {
    let f = FaultDescriptor::none();
    let mut s = PlantState::default();
    for _ in 0..(t_end / dt).round() as usize {
        s = step_plant(&s, zoh_drive(s.t, p), p, &f, dt).unwrap();
    }
    s
}

fn criterion_10() -> Verdict {
    let mut rt = 0.0f64;
    for k in 0..200 {
        let x = ThreePhase::new((k as f64 * 0.37).sin() * 400.0, (k as f64 * 1.3).cos() * 250.0, k as f64 - 100.0);
        let theta = Angle(k as f64 * 0.0731 - 7.0);
        let back = inverse_clarke(inverse_park(park(clarke(x), theta), theta));
        rt = rt.max((back - x).max_abs() / x.max_abs());
    }

    let p = PlantParams::default();
    let a = open_loop(&p, 1e-6, 0.1);
    let b = open_loop(&p, 0.5e-6, 0.1);
    let halving = [(a.i_f, b.i_f), (a.v_g, b.v_g), (a.i_line, b.i_line)]
        .iter()
        .map(|(x, y)| (*x - *y).max_abs() / y.max_abs().max(1.0))
        .fold(0.0, f64::max);

    let f = FaultDescriptor::none();
    let mut s = PlantState::default();
    let e0 = stored_energy(&s, &p);
    let (mut w_conv, mut w_out) = (0.0, 0.0);
    let dt = 1e-6;
    for _ in 0..200_000 {
        let v_c = zoh_drive(s.t, &p);
        let before = power_flows(&s, v_c, &p, &f);
        let next = step_plant(&s, v_c, &p, &f, dt).unwrap();
        let after = power_flows(&next, v_c, &p, &f);
        w_conv += 0.5 * dt * (before.converter + after.converter);
        w_out += 0.5 * dt * (before.dissipated + after.dissipated + before.to_grid + after.to_grid);
        s = next;
    }
    let energy = (w_conv - w_out - (stored_energy(&s, &p) - e0)).abs() / w_conv.abs();

    let cfg = ScenarioConfig {
        t_end: 0.5,
        ..preset("short").unwrap().unwrap()
    };
    let mut cfg = cfg;
    cfg.fault.start = 0.2;
    cfg.fault.duration = 0.1;
    let identical = csv_string(&run_scenario(&cfg).samples) == csv_string(&run_scenario(&cfg).samples);

    verdict(
        rt < ROUND_TRIP_TOL && halving < HALVING_TOL && energy < ENERGY_TOL && identical,
        format!(
            "round trip {rt:.1e}; step halving {halving:.1e}; energy residual {:.3}%; repeated CSV identical: {identical}",
            energy * 100.0
        ),
    )
}

fn main() {
    // Invoked by the test runner with harness flags; listing must not run.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let started = Instant::now();
    let presets = run_presets();
    let results = [
        ("current limiting", criterion_1(&presets)),
        ("droop equilibrium", criterion_2()),
        ("fault frequency", criterion_3(&presets)),
        ("equilibrium angles", criterion_4()),
        ("critical clearing", criterion_5()),
        ("flux estimator", criterion_6()),
        ("flux currents", criterion_7()),
        ("angle smoothness", criterion_8(&presets)),
        ("fault-duration sweep", criterion_9()),
        ("numerical hygiene", criterion_10()),
    ];
    let mut failed = Vec::new();
    for (k, (name, v)) in results.iter().enumerate() {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} [{tag}] {name}: {}", k + 1, v.detail);
        if !v.pass {
            failed.push(k + 1);
        }
    }
    println!("acceptance finished in {:.0} s", started.elapsed().as_secs_f64());
    if failed.is_empty() {
        println!("acceptance: all 10 criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
