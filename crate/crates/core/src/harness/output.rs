//! CSV, SVG and JSON emission.
//!
//! CSV columns, in order (units in brackets):
//!
//! | column | meaning |
//! |---|---|
//! | `t` | time [s] |
//! | `v_pcc_a`, `v_pcc_b`, `v_pcc_c` | PCC phase voltages [V] |
//! | `i_f_a`, `i_f_b`, `i_f_c` | filter-inductor currents [A] |
//! | `i_line_a`, `i_line_b`, `i_line_c` | grid-line currents [A] |
//! | `p`, `q` | measured powers [W], [var] |
//! | `omega_c` | converter frequency [rad/s] |
//! | `theta_c` | converter angle, unwrapped [rad] |
//! | `i_d`, `i_q` | measured filter current, converter frame [A] |
//! | `i_d_ref`, `i_q_ref` | current references before saturation [A] |
//! | `i_d_ref_sat`, `i_q_ref_sat` | current references after saturation [A] |
//! | `enable` | 1 in normal operation, 0 while limiting |
//! | `phi_conv` | angle of the unsaturated reference [rad] |
//! | `phi_flux` | flux-derived current angle [rad] |
//! | `psi_cd`, `psi_cq`, `psi_gd`, `psi_gq` | converter and grid fluxes [Wb] |
//!
//! Floats are written in shortest round-trip form, so identical runs give
//! identical files.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::harness::config::ScenarioConfig;
use crate::harness::run::{RunMetrics, RunOutput, Sample};

/// Environment variable that overrides every configured output directory.
pub const OUT_DIR_ENV: &str = "FLUXSAT_OUT_DIR";

/// Directory used when neither the environment nor the config names one.
pub const DEFAULT_OUT_DIR: &str = "out";

pub const CSV_COLUMNS: [&str; 27] = [
    "t",
    "v_pcc_a",
    "v_pcc_b",
    "v_pcc_c",
    "i_f_a",
    "i_f_b",
    "i_f_c",
    "i_line_a",
    "i_line_b",
    "i_line_c",
    "p",
    "q",
    "omega_c",
    "theta_c",
    "i_d",
    "i_q",
    "i_d_ref",
    "i_q_ref",
    "i_d_ref_sat",
    "i_q_ref_sat",
    "enable",
    "phi_conv",
    "phi_flux",
    "psi_cd",
    "psi_cq",
    "psi_gd",
    "psi_gq",
];

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", .path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl OutputError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// `FLUXSAT_OUT_DIR`, else the configured directory, else `out`.
pub fn resolve_out_dir(cfg: &ScenarioConfig) -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Writes the header and one row per sample.
pub fn write_csv<W: Write>(samples: &[Sample], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(samples: &[Sample]) -> String {
    let mut buf = Vec::new();
    write_csv(samples, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

/// Machine-readable summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport<'a> {
    pub name: &'a str,
    pub strategy: &'a str,
    pub fault: &'a str,
    pub exit_code: i32,
    pub metrics: &'a RunMetrics,
}

pub fn report_json(name: &str, cfg: &ScenarioConfig, metrics: &RunMetrics) -> String {
    let report = RunReport {
        name,
        strategy: cfg.saturation_strategy.as_str(),
        fault: cfg.fault.kind.as_str(),
        exit_code: metrics.exit_code(),
        metrics,
    };
    serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
}

/// One named trace of a panel.
pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// A panel shares its y axis between its series.
pub struct Panel<'a> {
    pub y_label: &'a str,
    pub series: Vec<Series<'a>>,
}

const WIDTH: f64 = 900.0;
const PANEL_HEIGHT: f64 = 220.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 30.0;
const GAP: f64 = 30.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Stacked line plots sharing the time axis.
pub fn render_svg(title: &str, panels: &[Panel]) -> String {
    let height = MARGIN_T + panels.len() as f64 * (PANEL_HEIGHT + GAP) + 20.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" font-size="14">{}</text>"#, MARGIN_L, escape(title));

    let (x_min, x_max) = bounds(panels.iter().flat_map(|p| p.series.iter()).flat_map(|s| s.points.iter().map(|p| p.0)));
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;

    for (k, panel) in panels.iter().enumerate() {
        let top = MARGIN_T + k as f64 * (PANEL_HEIGHT + GAP);
        let (y_min, y_max) = bounds(panel.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
        let sx = |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w;
        let sy = |y: f64| top + PANEL_HEIGHT - (y - y_min) / (y_max - y_min) * PANEL_HEIGHT;

        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN_L}" y="{top}" width="{plot_w}" height="{PANEL_HEIGHT}" fill="none" stroke="black"/>"#
        );
        for (v, anchor_y) in [(y_max, top + 4.0), (y_min, top + PANEL_HEIGHT)] {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{anchor_y}" text-anchor="end">{}</text>"#,
                MARGIN_L - 4.0,
                tick(v)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{}</text>"#,
            top + PANEL_HEIGHT / 2.0,
            top + PANEL_HEIGHT / 2.0,
            escape(panel.y_label)
        );
        if y_min < 0.0 && y_max > 0.0 {
            let y0 = sy(0.0);
            let _ = writeln!(
                s,
                r##"<line x1="{MARGIN_L}" y1="{y0:.2}" x2="{:.2}" y2="{y0:.2}" stroke="#bbb"/>"##,
                MARGIN_L + plot_w
            );
        }
        for (j, series) in panel.series.iter().enumerate() {
            let color = COLORS[j % COLORS.len()];
            let mut pts = String::new();
            for &(x, y) in &series.points {
                if x.is_finite() && y.is_finite() {
                    let _ = write!(pts, "{:.2},{:.2} ", sx(x), sy(y));
                }
            }
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#,
                pts.trim_end()
            );
            let ly = top + 14.0 + 16.0 * j as f64;
            let lx = MARGIN_L + plot_w + 10.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"/><text x="{}" y="{ly}">{}</text>"#,
                ly - 4.0,
                lx + 18.0,
                ly - 4.0,
                lx + 24.0,
                escape(series.label)
            );
        }
    }
    let bottom = MARGIN_T + panels.len() as f64 * (PANEL_HEIGHT + GAP) - GAP + 14.0;
    let _ = writeln!(s, r#"<text x="{MARGIN_L}" y="{bottom}">{}</text>"#, tick(x_min));
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{bottom}" text-anchor="end">{} s</text>"#,
        MARGIN_L + plot_w,
        tick(x_max)
    );
    s.push_str("</svg>\n");
    s
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * lo.abs().max(1.0) {
        let pad = 0.5 * lo.abs().max(1.0);
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn trace<'a>(label: &'a str, samples: &[Sample], f: impl Fn(&Sample) -> f64) -> Series<'a> {
    Series {
        label,
        points: samples.iter().map(|s| (s.t, f(s))).collect(),
    }
}

/// The four standard figures of a run, as `(file suffix, svg)`.
pub fn run_figures(name: &str, samples: &[Sample]) -> Vec<(&'static str, String)> {
    let overview = render_svg(
        &format!("{name}: PCC voltage and filter current"),
        &[
            Panel {
                y_label: "v_pcc [V]",
                series: vec![
                    trace("a", samples, |s| s.v_pcc_a),
                    trace("b", samples, |s| s.v_pcc_b),
                    trace("c", samples, |s| s.v_pcc_c),
                ],
            },
            Panel {
                y_label: "i_f [A]",
                series: vec![
                    trace("a", samples, |s| s.i_f_a),
                    trace("b", samples, |s| s.i_f_b),
                    trace("c", samples, |s| s.i_f_c),
                ],
            },
        ],
    );
    let currents = render_svg(
        &format!("{name}: dq currents"),
        &[
            Panel {
                y_label: "d axis [A]",
                series: vec![
                    trace("i_d", samples, |s| s.i_d),
                    trace("i_d* unsat", samples, |s| s.i_d_ref),
                    trace("i_d* sat", samples, |s| s.i_d_ref_sat),
                ],
            },
            Panel {
                y_label: "q axis [A]",
                series: vec![
                    trace("i_q", samples, |s| s.i_q),
                    trace("i_q* unsat", samples, |s| s.i_q_ref),
                    trace("i_q* sat", samples, |s| s.i_q_ref_sat),
                ],
            },
        ],
    );
    let power = render_svg(
        &format!("{name}: power and frequency"),
        &[
            Panel {
                y_label: "P [W], Q [var]",
                series: vec![trace("P", samples, |s| s.p), trace("Q", samples, |s| s.q)],
            },
            Panel {
                y_label: "omega_c [rad/s]",
                series: vec![trace("omega_c", samples, |s| s.omega_c)],
            },
        ],
    );
    let angles = render_svg(
        &format!("{name}: current angles"),
        &[
            Panel {
                y_label: "angle [rad]",
                series: vec![
                    trace("phi conventional", samples, |s| s.phi_conv),
                    trace("phi flux", samples, |s| s.phi_flux),
                ],
            },
            Panel {
                y_label: "E_n",
                series: vec![trace("enable", samples, |s| s.enable as f64)],
            },
        ],
    );
    vec![
        ("overview", overview),
        ("currents", currents),
        ("power", power),
        ("angles", angles),
    ]
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), OutputError> {
    std::fs::write(path, contents).map_err(|e| OutputError::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<(), OutputError> {
    std::fs::create_dir_all(dir).map_err(|e| OutputError::io(dir, e))
}

/// Writes `<name>.csv`, `<name>.json` and `<name>_<figure>.svg` into `dir`
/// and returns the paths written.
pub fn emit_run(dir: &Path, name: &str, cfg: &ScenarioConfig, out: &RunOutput) -> Result<Vec<PathBuf>, OutputError> {
    ensure_dir(dir)?;
    let mut written = Vec::new();

    let csv_path = dir.join(format!("{name}.csv"));
    let file = std::fs::File::create(&csv_path).map_err(|e| OutputError::io(&csv_path, e))?;
    write_csv(&out.samples, std::io::BufWriter::new(file)).map_err(|source| OutputError::Csv {
        path: csv_path.clone(),
        source,
    })?;
    written.push(csv_path);

    let json_path = dir.join(format!("{name}.json"));
    write_file(&json_path, report_json(name, cfg, &out.metrics).as_bytes())?;
    written.push(json_path);

    for (suffix, svg) in run_figures(name, &out.samples) {
        let path = dir.join(format!("{name}_{suffix}.svg"));
        write_file(&path, svg.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Writes `text` to `dir/file_name`.
pub fn emit_text(dir: &Path, file_name: &str, text: &str) -> Result<PathBuf, OutputError> {
    ensure_dir(dir)?;
    let path = dir.join(file_name);
    write_file(&path, text.as_bytes())?;
    Ok(path)
}
