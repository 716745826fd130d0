//! End-to-end checks of the `fluxsat` binary: files, exit codes, tables.

use std::path::Path;
use std::process::{Command, Output};

fn fluxsat(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fluxsat"))
        .args(args)
        .current_dir(dir)
        .env("FLUXSAT_OUT_DIR", dir.join("env_out"))
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    std::fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

const NO_FAULT: &str = "t_end = 0.8\n";

const SAG: &str = r#"
t_end = 1.6
[fault]
kind = "three_phase_sag"
start = 0.3
duration = 0.5
sag_fraction = 1.0
"#;

#[test]
fn run_writes_outputs_to_the_env_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "calm.toml", NO_FAULT);
    let o = fluxsat(tmp.path(), &["run", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("stable"));
    for f in ["calm.csv", "calm.json", "calm_overview.svg", "calm_angles.svg"] {
        assert!(tmp.path().join("env_out").join(f).exists(), "{f}");
    }
}

#[test]
fn out_dir_flag_wins_and_no_files_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "calm.toml", "t_end = 0.05\n");
    fluxsat(tmp.path(), &["run", &cfg, "--out-dir", "flag_out"]);
    assert!(tmp.path().join("flag_out/calm.csv").exists());
    assert!(!tmp.path().join("env_out").exists());

    fluxsat(tmp.path(), &["--no-files", "run", &cfg]);
    assert!(!tmp.path().join("env_out").exists());
}

#[test]
fn lost_synchronism_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "sag.toml", SAG);
    let o = fluxsat(tmp.path(), &["--no-files", "run", &cfg, "--strategy", "vflux"]);
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    assert!(stdout(&o).contains("synchronism lost"));
}

#[test]
fn divergence_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "coarse.toml", "t_end = 1.0\ndt_plant = 2e-3\ndt_ctrl = 2e-3\n");
    let o = fluxsat(tmp.path(), &["--no-files", "run", &cfg]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
}

#[test]
fn configuration_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write(tmp.path(), "bad.toml", "dt_ctrl = 0.00015\ndt_plant = 0.0001\n");
    let o = fluxsat(tmp.path(), &["run", &bad]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("integer multiple"));

    let typo = write(tmp.path(), "typo.toml", "t_edn = 1.0\n");
    let o = fluxsat(tmp.path(), &["run", &typo]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("typo.toml"));

    assert_eq!(fluxsat(tmp.path(), &["run", "missing.toml"]).status.code(), Some(1));
    assert_eq!(fluxsat(tmp.path(), &["launch", "x"]).status.code(), Some(1));
    assert_eq!(fluxsat(tmp.path(), &["compare", "sag", "--strategies", "clip"]).status.code(), Some(1));
    assert_eq!(fluxsat(tmp.path(), &["sweep", &bad, "--param", "t_end", "--range", "1:2"]).status.code(), Some(1));
}

#[test]
fn compare_tabulates_each_strategy() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "calm.toml", NO_FAULT);
    let o = fluxsat(tmp.path(), &["compare", &cfg, "--strategies", "amplitude,vflux"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("amplitude") && out.contains("vflux") && !out.contains("per_component"));
    let dir = tmp.path().join("env_out");
    assert!(dir.join("calm_compare.txt").exists());
    assert!(dir.join("calm_amplitude.csv").exists() && dir.join("calm_vflux.csv").exists());
    // Both strategies pass references through below the limit.
    assert_eq!(
        std::fs::read(dir.join("calm_amplitude.csv")).unwrap(),
        std::fs::read(dir.join("calm_vflux.csv")).unwrap()
    );
}

#[test]
fn sweep_writes_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "calm.toml", NO_FAULT);
    let o = fluxsat(tmp.path(), &["sweep", &cfg, "--param", "droop.p_ref", "--range", "20000:30000:3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let csv = std::fs::read_to_string(tmp.path().join("env_out/calm_sweep_droop_p_ref.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("value,exit_code"));
    assert!(lines[2].starts_with("25000"));
}

#[test]
fn stability_reports_trajectory_and_map() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "stability",
        "sag",
        "--p-ref-range",
        "10000:70000:4",
        "--duration-range",
        "0.01:0.05:5",
    ];
    // The preset's 5 s fault is far past the clearing time.
    let o = fluxsat(tmp.path(), &args);
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.contains("delta_max_sat 1.08838"), "{out}");
    assert!(out.contains("344.000"));

    let dir = tmp.path().join("env_out");
    let swing = std::fs::read_to_string(dir.join("sag_swing.csv")).unwrap();
    assert!(swing.starts_with("t,delta,p,mode\n"));
    let map = std::fs::read_to_string(dir.join("sag_boundary.csv")).unwrap();
    assert_eq!(map.lines().count(), 1 + 4 * 5);
    // 70 kW exceeds P_max_sat: no saturated operating point.
    assert!(map.lines().last().unwrap().ends_with(','), "{map}");
    let clearing = std::fs::read_to_string(dir.join("sag_clearing.csv")).unwrap();
    assert_eq!(clearing.lines().count(), 5);

    let mut short = args.to_vec();
    short.extend(["--fault-duration", "0.01"]);
    assert_eq!(fluxsat(tmp.path(), &short).status.code(), Some(0));
}

#[test]
fn presets_are_listed_and_printed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = stdout(&fluxsat(tmp.path(), &["presets"]));
    for kind in ["three_phase_sag", "two_phase_short_to_ground", "three_phase_shift"] {
        assert!(out.contains(kind), "{out}");
    }
    let o = fluxsat(tmp.path(), &["presets", "short"]);
    assert!(stdout(&o).contains("fault_resistance"));
    assert_eq!(fluxsat(tmp.path(), &["presets", "nope"]).status.code(), Some(1));
}
