//! `fluxsat` command-line interface.
//!
//! Exit status: 0 stable, 2 synchronism lost, 3 numerical divergence,
//! 1 configuration or I/O error. Commands running several scenarios report
//! the worst status.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use fluxsat::control::SaturationStrategy;
use fluxsat::harness::compare::{parse_range, sweep_configs, sweep_csv, Comparison, ComparisonRow, SweepRow};
use fluxsat::harness::output::{emit_run, emit_text, resolve_out_dir};
use fluxsat::harness::presets::{preset, preset_names, PRESETS};
use fluxsat::stability::{
    critical_clearing_time, equilibrium_angles, fault_frequency, saturation_switch_angle, stability_boundary,
    swing_simulate, BoundaryCell, QuasiStaticParams, SwingPoint, CLEARING_RESOLUTION, DEFAULT_SWING_DT,
};
use fluxsat::{run_scenario, RunMetrics, ScenarioConfig};

#[derive(Parser)]
#[command(name = "fluxsat", version, about = "Grid-forming converter fault simulator")]
struct Cli {
    /// Output directory; overrides FLUXSAT_OUT_DIR and the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Do not write any files.
    #[arg(long, global = true)]
    no_files: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// Scenario TOML file, or a preset name (sag, short, shift).
    config: String,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write CSV, SVG and a JSON report.
    Run {
        #[command(flatten)]
        source: Source,
        /// Overrides the configured saturation strategy.
        #[arg(long)]
        strategy: Option<SaturationStrategy>,
    },
    /// Run a scenario once per strategy and tabulate the outcomes.
    Compare {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_delimiter = ',', default_value = "per_component,amplitude,vflux")]
        strategies: Vec<SaturationStrategy>,
    },
    /// Quasi-static stability: swing trajectory, clearing times and a
    /// stability map over P_ref and fault duration.
    Stability {
        #[command(flatten)]
        source: Source,
        /// Fault duration of the trajectory [s]; defaults to the config's.
        #[arg(long)]
        fault_duration: Option<f64>,
        /// Use the unsaturated P(delta) curve only.
        #[arg(long)]
        unsaturated: bool,
        /// P_ref grid as lo:hi:n [W].
        #[arg(long, default_value = "5000:60000:12")]
        p_ref_range: String,
        /// Fault-duration grid as lo:hi:n [s].
        #[arg(long, default_value = "0.005:0.1:20")]
        duration_range: String,
        /// Integration step [s].
        #[arg(long, default_value_t = DEFAULT_SWING_DT)]
        dt: f64,
    },
    /// Run a scenario for each value of one parameter.
    Sweep {
        #[command(flatten)]
        source: Source,
        /// Dotted parameter key, e.g. fault.duration or droop.k_p.
        #[arg(long)]
        param: String,
        /// Values as lo:hi:n.
        #[arg(long)]
        range: String,
        /// Also write the full output of every run.
        #[arg(long)]
        emit_runs: bool,
    },
    /// List the presets, or print one as TOML.
    Presets { name: Option<String> },
}

struct Loaded {
    cfg: ScenarioConfig,
    name: String,
}

fn load(source: &Source) -> Result<Loaded> {
    let path = Path::new(&source.config);
    let (cfg, stem) = if path.exists() {
        let cfg = ScenarioConfig::from_path(path)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        (cfg, stem.unwrap_or_else(|| "run".into()))
    } else if let Some(cfg) = preset(&source.config) {
        (cfg?, source.config.clone())
    } else {
        let names: Vec<_> = preset_names().collect();
        bail!("{}: no such file, and not a preset ({})", source.config, names.join(", "));
    };
    let name = cfg.output.name.clone().unwrap_or(stem);
    Ok(Loaded { cfg, name })
}

struct Output {
    dir: Option<PathBuf>,
}

impl Output {
    fn new(cli: &Cli, cfg: &ScenarioConfig) -> Self {
        let dir = (!cli.no_files).then(|| cli.out_dir.clone().unwrap_or_else(|| resolve_out_dir(cfg)));
        Self { dir }
    }

    fn run(&self, name: &str, cfg: &ScenarioConfig, out: &fluxsat::RunOutput) -> Result<()> {
        if let Some(dir) = &self.dir {
            for p in emit_run(dir, name, cfg, out)? {
                println!("wrote {}", p.display());
            }
        }
        Ok(())
    }

    fn text(&self, file_name: &str, text: &str) -> Result<()> {
        if let Some(dir) = &self.dir {
            println!("wrote {}", emit_text(dir, file_name, text)?.display());
        }
        Ok(())
    }
}

fn describe(m: &RunMetrics) -> String {
    let status = if m.diverged {
        format!("diverged at t = {:.4} s", m.diverged_at.unwrap_or(m.t_final))
    } else if m.sync_lost {
        "synchronism lost".into()
    } else {
        match m.recovery_time {
            Some(t) => format!("stable, recovered {t:.3} s after the disturbance"),
            None => "stable".into(),
        }
    };
    format!(
        "{status}\npeak phase current {:.2} A ({:.2} A after the onset transient){}\nfinal P {:.1} W, omega_c {:.4} rad/s",
        m.peak_phase_current,
        m.peak_after_transient,
        if m.current_limit_violated { ", LIMIT EXCEEDED" } else { "" },
        m.final_p,
        m.final_omega_c
    )
}

fn cmd_run(cli: &Cli, source: &Source, strategy: Option<SaturationStrategy>) -> Result<i32> {
    let Loaded { mut cfg, name } = load(source)?;
    if let Some(s) = strategy {
        cfg.saturation_strategy = s;
    }
    let out = run_scenario(&cfg);
    println!("{name} ({}): {}", cfg.saturation_strategy, describe(&out.metrics));
    Output::new(cli, &cfg).run(&name, &cfg, &out)?;
    Ok(out.metrics.exit_code())
}

fn cmd_compare(cli: &Cli, source: &Source, strategies: &[SaturationStrategy]) -> Result<i32> {
    let Loaded { cfg, name } = load(source)?;
    if strategies.is_empty() {
        bail!("--strategies needs at least one strategy");
    }
    let runs: Vec<_> = strategies
        .par_iter()
        .map(|&s| {
            let c = cfg.with_strategy(s);
            let out = run_scenario(&c);
            (s, c, out)
        })
        .collect();
    let output = Output::new(cli, &cfg);
    for (s, c, out) in &runs {
        output.run(&format!("{name}_{s}"), c, out)?;
    }
    let comparison = Comparison {
        rows: runs
            .iter()
            .map(|(strategy, _, out)| ComparisonRow {
                strategy: *strategy,
                metrics: out.metrics,
            })
            .collect(),
    };
    let table = comparison.table();
    print!("{table}");
    output.text(&format!("{name}_compare.txt"), &table)?;
    output.text(
        &format!("{name}_compare.json"),
        &(serde_json::to_string_pretty(&comparison)? + "\n"),
    )?;
    Ok(comparison.exit_code())
}

fn cmd_sweep(cli: &Cli, source: &Source, param: &str, range: &str, emit_runs: bool) -> Result<i32> {
    let Loaded { cfg, name } = load(source)?;
    let values = parse_range(range)?;
    let configs = sweep_configs(&cfg, param, &values)?;
    let runs: Vec<_> = configs.par_iter().map(run_scenario).collect();

    let output = Output::new(cli, &cfg);
    let rows: Vec<SweepRow> = values.iter().zip(&runs).map(|(&v, out)| SweepRow::new(v, &out.metrics)).collect();
    println!("{:>12} {:>5} {:>9} {:>9} {:>9}", param, "exit", "peak[A]", "sync", "recov[s]");
    for r in &rows {
        println!(
            "{:>12.6} {:>5} {:>9.2} {:>9} {:>9}",
            r.value,
            r.exit_code,
            r.peak_phase_current,
            if r.sync_lost { "lost" } else { "kept" },
            r.recovery_time.map(|t| format!("{t:.3}")).unwrap_or_else(|| "-".into())
        );
    }
    if emit_runs {
        for (k, (c, out)) in configs.iter().zip(&runs).enumerate() {
            output.run(&format!("{name}_{k:03}"), c, out)?;
        }
    }
    output.text(&format!("{name}_sweep_{}.csv", param.replace('.', "_")), &sweep_csv(&rows))?;
    Ok(rows.iter().map(|r| r.exit_code).max().unwrap_or(0))
}

fn to_csv<T: serde::Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| anyhow!("{e}"))?)?)
}

#[derive(serde::Serialize)]
struct ClearingRow {
    p_ref: f64,
    t_cc_normal: Option<f64>,
    t_cc_saturated: Option<f64>,
}

/// Clearing time in ms; `-` when none was found in the search window.
fn ms(t: Option<f64>) -> String {
    match t {
        Some(t) if t < CLEARING_RESOLUTION => format!("<{:.0}", CLEARING_RESOLUTION * 1e3),
        Some(t) => format!("{:.1}", t * 1e3),
        None => "-".into(),
    }
}

struct StabilityArgs<'a> {
    fault_duration: Option<f64>,
    unsaturated: bool,
    p_ref_range: &'a str,
    duration_range: &'a str,
    dt: f64,
}

fn cmd_stability(cli: &Cli, source: &Source, a: StabilityArgs) -> Result<i32> {
    let Loaded { cfg, name } = load(source)?;
    let params = QuasiStaticParams::from_scenario(&cfg);
    let p_refs = parse_range(a.p_ref_range)?;
    let durations = parse_range(a.duration_range)?;
    let with_saturation = !a.unsaturated;
    let duration = a.fault_duration.unwrap_or(cfg.fault.duration);

    let eq = equilibrium_angles(&params)?;
    println!("P_max {:.1} W, P_max_sat {:.1} W", params.p_max(), params.p_max_sat());
    println!(
        "delta_0 {:.5} rad, delta_max {:.5} rad, delta_max_sat {:.5} rad",
        eq.delta_0, eq.delta_max, eq.delta_max_sat
    );
    if let Some(d) = saturation_switch_angle(&params) {
        println!("current limit reached at |delta| = {d:.5} rad");
    }
    println!("frequency during the fault {:.3} rad/s", fault_frequency(&params));
    for sat in [false, true] {
        let cc = critical_clearing_time(&params, sat)?;
        println!(
            "{} clearing time: {} ms (angle {} rad, reference {:.5} rad)",
            if sat { "saturated" } else { "unsaturated" },
            ms(cc.t_cc),
            cc.clearing_angle.map(|x| format!("{x:.5}")).unwrap_or_else(|| "-".into()),
            cc.reference_angle
        );
    }

    let swing = swing_simulate(&params, duration, with_saturation, a.dt)?;
    println!(
        "{duration} s fault: clearing angle {:.5} rad, {}",
        swing.clearing_angle,
        if swing.stable { "stable" } else { "synchronism lost" }
    );

    let cells: Vec<BoundaryCell> = p_refs
        .par_iter()
        .map(|&p| stability_boundary(&params, &[p], &durations, a.dt))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    let clearing: Vec<ClearingRow> = p_refs
        .par_iter()
        .map(|&p_ref| {
            let p = QuasiStaticParams { p_ref, ..params };
            let t = |sat| critical_clearing_time(&p, sat).ok().and_then(|c| c.t_cc);
            ClearingRow {
                p_ref,
                t_cc_normal: t(false),
                t_cc_saturated: t(true),
            }
        })
        .collect();

    let mark = |s: Option<bool>| match s {
        Some(true) => 'S',
        Some(false) => 'x',
        None => '.',
    };
    println!("\nstability map, {} model (S stable, x lost, . no operating point)", if with_saturation { "saturated" } else { "unsaturated" });
    println!(
        "{:>10}  {:<width$}  T_cc unsaturated / saturated [ms]",
        "P_ref[W]",
        format!("fault {:.3} .. {:.3} s", durations[0], durations[durations.len() - 1]),
        width = durations.len().max(24)
    );
    for (k, &p) in p_refs.iter().enumerate() {
        let row: String = cells[k * durations.len()..(k + 1) * durations.len()]
            .iter()
            .map(|c| mark(if with_saturation { c.stable_saturated } else { c.stable_normal }))
            .collect();
        let r = &clearing[k];
        println!(
            "{p:>10.0}  {row:<width$}  {} / {}",
            ms(r.t_cc_normal),
            ms(r.t_cc_saturated),
            width = durations.len().max(24)
        );
    }

    let output = Output::new(cli, &cfg);
    output.text(&format!("{name}_swing.csv"), &to_csv::<SwingPoint>(&swing.trajectory)?)?;
    output.text(&format!("{name}_boundary.csv"), &to_csv(&cells)?)?;
    output.text(&format!("{name}_clearing.csv"), &to_csv(&clearing)?)?;
    Ok(if swing.stable { 0 } else { 2 })
}

fn cmd_presets(name: Option<&str>) -> Result<i32> {
    match name {
        None => {
            for (n, text) in PRESETS {
                let cfg = ScenarioConfig::parse(text)?;
                println!(
                    "{n:<6} {} from {} s for {} s, t_end {} s",
                    cfg.fault.kind.as_str(),
                    cfg.fault.start,
                    cfg.fault.duration,
                    cfg.t_end
                );
            }
        }
        Some(n) => {
            let (_, text) = PRESETS
                .iter()
                .find(|(p, _)| *p == n)
                .ok_or_else(|| anyhow!("unknown preset {n}"))?;
            print!("{text}");
        }
    }
    Ok(0)
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Run { source, strategy } => cmd_run(cli, source, *strategy),
        Command::Compare { source, strategies } => cmd_compare(cli, source, strategies),
        Command::Stability {
            source,
            fault_duration,
            unsaturated,
            p_ref_range,
            duration_range,
            dt,
        } => cmd_stability(
            cli,
            source,
            StabilityArgs {
                fault_duration: *fault_duration,
                unsaturated: *unsaturated,
                p_ref_range,
                duration_range,
                dt: *dt,
            },
        ),
        Command::Sweep {
            source,
            param,
            range,
            emit_runs,
        } => cmd_sweep(cli, source, param, range, *emit_runs),
        Command::Presets { name } => cmd_presets(name.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors share status 1 with configuration errors; 2 is
            // reserved for loss of synchronism.
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn strategies_parse_from_a_list() {
        let cli = Cli::try_parse_from(["fluxsat", "compare", "sag", "--strategies", "amplitude,vflux"]).unwrap();
        match cli.command {
            Command::Compare { strategies, .. } => {
                assert_eq!(strategies, [SaturationStrategy::Amplitude, SaturationStrategy::Vflux])
            }
            _ => panic!("wrong command"),
        }
        assert!(Cli::try_parse_from(["fluxsat", "compare", "sag", "--strategies", "clip"]).is_err());
    }

    #[test]
    fn missing_config_is_an_error() {
        let err = load(&Source {
            config: "no/such/file.toml".into(),
        })
        .err()
        .unwrap();
        assert!(err.to_string().contains("not a preset"));
    }
}
