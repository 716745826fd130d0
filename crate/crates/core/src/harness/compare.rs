//! Side-by-side runs and parameter sweeps.

use std::fmt::Write as _;

use serde::Serialize;

use crate::control::SaturationStrategy;
use crate::harness::config::{ConfigError, ScenarioConfig};
use crate::harness::run::{run_scenario, RunMetrics};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub strategy: SaturationStrategy,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

/// Runs `cfg` once per strategy, in order.
pub fn compare_runs(cfg: &ScenarioConfig, strategies: &[SaturationStrategy]) -> Comparison {
    Comparison {
        rows: strategies
            .iter()
            .map(|&strategy| ComparisonRow {
                strategy,
                metrics: run_scenario(&cfg.with_strategy(strategy)).metrics,
            })
            .collect(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into())
}

impl Comparison {
    /// Plain-text table. The three angle columns are the largest per-sample
    /// change inside the fault window of the conventional angle, the
    /// flux-derived angle and the angle the strategy actually uses.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<14} {:>9} {:>11} {:>6} {:>9} {:>9} {:>10} {:>10} {:>10}",
            "strategy", "peak[A]", "late_pk[A]", "limit", "sync", "recov[s]", "dphi_conv", "dphi_flux", "dphi_used"
        );
        for r in &self.rows {
            let m = &r.metrics;
            let sync = if m.diverged {
                "diverged"
            } else if m.sync_lost {
                "lost"
            } else {
                "kept"
            };
            let _ = writeln!(
                s,
                "{:<14} {:>9.2} {:>11.2} {:>6} {:>9} {:>9} {:>10.4} {:>10.4} {:>10.4}",
                r.strategy.as_str(),
                m.peak_phase_current,
                m.peak_after_transient,
                if m.current_limit_violated { "FAIL" } else { "ok" },
                sync,
                opt(m.recovery_time),
                m.phi_conv_max_step,
                m.phi_flux_max_step,
                m.active_angle_max_step,
            );
        }
        s
    }

    /// Worst exit status over the rows.
    pub fn exit_code(&self) -> i32 {
        self.rows.iter().map(|r| r.metrics.exit_code()).max().unwrap_or(0)
    }
}

/// Parses `lo:hi:n` into `n` evenly spaced values including both ends.
pub fn parse_range(text: &str) -> Result<Vec<f64>, ConfigError> {
    let bad = || ConfigError::Validation(format!("range `{text}` is not lo:hi:n"));
    let parts: Vec<&str> = text.split(':').collect();
    let [lo, hi, n] = parts.as_slice() else {
        return Err(bad());
    };
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    if n == 0 || !lo.is_finite() || !hi.is_finite() {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..n)
        .map(|k| if k == n - 1 { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 })
        .collect())
}

/// One config per value of `key`. Fails before any run if a value is
/// rejected.
pub fn sweep_configs(cfg: &ScenarioConfig, key: &str, values: &[f64]) -> Result<Vec<ScenarioConfig>, ConfigError> {
    values
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            // Longer faults need a later end time to observe recovery.
            if key == "fault.duration" {
                let tail = cfg.t_end - cfg.fault.end();
                c.t_end = cfg.fault.start + v + tail;
            }
            c.set_param(key, v)?;
            Ok(c)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub exit_code: i32,
    pub peak_phase_current: f64,
    pub peak_after_transient: f64,
    pub current_limit_violated: bool,
    pub sync_lost: bool,
    pub diverged: bool,
    pub recovery_time: Option<f64>,
    pub phi_conv_max_step: f64,
    pub phi_flux_max_step: f64,
}

impl SweepRow {
    pub fn new(value: f64, m: &RunMetrics) -> Self {
        Self {
            value,
            exit_code: m.exit_code(),
            peak_phase_current: m.peak_phase_current,
            peak_after_transient: m.peak_after_transient,
            current_limit_violated: m.current_limit_violated,
            sync_lost: m.sync_lost,
            diverged: m.diverged,
            recovery_time: m.recovery_time,
            phi_conv_max_step: m.phi_conv_max_step,
            phi_flux_max_step: m.phi_flux_max_step,
        }
    }
}

/// CSV with one row per swept value.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("writing to memory");
    }
    if rows.is_empty() {
        return String::new();
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
}
