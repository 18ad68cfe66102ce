use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use levcool::cli::ExperimentConfig;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/z_mode.cfg")
}

fn levcool(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levcool")).args(args).output().unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}\n{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

#[test]
fn simulate_is_byte_identical_for_equal_seeds() {
    let cfg = fixture();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = levcool(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "1",
            "--set",
            "simulation.duration=100 s",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["series.csv", "series.gp", "simulate_report.txt"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(!x.is_empty());
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn analyze_recovers_bath_temperature_from_simulated_file() {
    let cfg = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = levcool(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let series = dir.path().join("series.csv");
    let out = levcool(&[
        "analyze",
        "--config",
        cfg.to_str().unwrap(),
        "--input",
        series.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    let t = report["temperature_k"].as_f64().unwrap();
    assert!((t / 4.4 - 1.0).abs() < 0.1, "T = {t}");
    let f = report["frequency_hz"].as_f64().unwrap();
    assert!((f - 42.4).abs() < report["resolution_bandwidth_hz"].as_f64().unwrap());
}

#[test]
fn table_check_passes_on_shipped_fixture() {
    let out = levcool(&["table-check"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let out = levcool(&["table-check", "--format", "json"]);
    let report = json(&out);
    assert_eq!(report["all_within_tolerance"], serde_json::json!(true));
    assert!(report["derivable_rows"].as_u64().unwrap() >= 20);
}

#[test]
fn table_check_tight_tolerance_exits_four() {
    let out = levcool(&["table-check", "--tolerance", "1e-4"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    assert_eq!(levcool(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(levcool(&["limits", "--config", "/no/such/file.cfg"]).status.code(), Some(5));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "[mode z]\nfrequency = 42.4\n").unwrap();
    let out = levcool(&["limits", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    // white noise has no resonance to fit
    let noise = dir.path().join("noise.csv");
    let mut text = String::from("# unit=m sample_rate_hz=1000.0\ntime_s,measured_position\n");
    let mut state = 12345u64;
    for i in 0..20000 {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let v = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
        text.push_str(&format!("{:?},{:?}\n", i as f64 / 1000.0, v));
    }
    std::fs::write(&noise, text).unwrap();
    let out = levcool(&["analyze", "--config", fixture().to_str().unwrap(), "--input", noise.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pressure_correct_reports_and_rejects_gap() {
    let out = levcool(&["pressure-correct", "--gauge", "1e-8 mbar", "--cold", "410 mK", "--format", "json"]);
    assert!(out.status.success());
    let r = json(&out);
    assert_eq!(r["gas_factor"].as_f64(), Some(5.9));
    assert_eq!(r["warm_temperature_assumed"], serde_json::json!(true));
    let expected = 5.9 * 1e-8 * (0.41f64 / 295.0).sqrt();
    assert!((r["cold_side_mbar"].as_f64().unwrap() / expected - 1.0).abs() < 1e-12);
    let out = levcool(&["pressure-correct", "--gauge", "1e-2 mbar", "--cold", "4 K"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no correction factor"));
}

#[test]
fn limits_and_coil_optimize_produce_json() {
    let cfg = fixture();
    let r = json(&levcool(&["limits", "--config", cfg.to_str().unwrap(), "--format", "json"]));
    assert!(r["t_min_k"].as_f64().unwrap() > 0.0);
    assert!(r["caveat"].as_str().unwrap().contains("backaction"));

    let dir = tempfile::tempdir().unwrap();
    let out = levcool(&[
        "coil-optimize",
        "--config",
        cfg.to_str().unwrap(),
        "--format",
        "json",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let r = json(&out);
    assert!(r["best_coupling_wb_per_m"].as_f64().unwrap() >= r["configured_coupling_wb_per_m"].as_f64().unwrap());
    let map = std::fs::read_to_string(dir.path().join("coupling_map.csv")).unwrap();
    assert!(map.starts_with("x_m,z_m,orientation,dphi_dz_wb_per_m"));
    assert!(dir.path().join("coupling_map.gp").exists());
}

#[test]
fn ringdown_recovers_configured_q() {
    let r = json(&levcool(&["ringdown", "--config", fixture().to_str().unwrap(), "--format", "json"]));
    let q = r["q_factor"].as_f64().unwrap();
    assert!((q / 50.0 - 1.0).abs() < 0.02, "Q = {q}");
}

#[test]
fn csv_gain_sweep_has_one_row_per_gain() {
    let out = levcool(&[
        "simulate",
        "--config",
        fixture().to_str().unwrap(),
        "--set",
        "feedback.mode=ideal_velocity",
        "--set",
        "simulation.gains=0, 1, 10",
        "--set",
        "simulation.duration=200 s",
        "--format",
        "csv",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "gain,temperature_k,temperature_error_k,cold_damping_k,unstable");
    assert_eq!(lines.len(), 4);
}

#[test]
fn shipped_config_round_trips() {
    let text = std::fs::read_to_string(fixture()).unwrap();
    let cfg = ExperimentConfig::parse(&text).unwrap();
    assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
}
