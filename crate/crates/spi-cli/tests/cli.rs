//! End-to-end tests of the `spi` binary: exit codes, artifact layout, and
//! byte-level determinism of outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn spi() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spi"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("spi-cli-test-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn base_config(covariance: &str, rate: &str, grid: &str) -> String {
    format!(
        r#"{{
            "schema_version": 1,
            "dimension": 2,
            "motion": {{ "psd": 0.001, "duration_s": 8.0, "truth_step_s": 0.02 }},
            "sensor": {{ "kind": "position", "covariance": {covariance} }},
            "accuracy": {{ "grid": {grid} }},
            "schedule": {{ "rate_hz": {rate} }},
            "trials": {{ "count": 2, "base_seed": 11 }}
        }}"#
    )
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn spi")
}

#[test]
fn schedule_solves_and_reports() {
    let dir = temp_dir("schedule");
    let cfg = write_config(&dir, "cfg.json", &base_config("0.0064", "\"solve\"", "[0.05]"));
    let out = run(spi()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .arg("schedule"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(dir.join("out/schedule_report.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(json["command"], "schedule");
    let entry = &json["entries"][0];
    assert_eq!(entry["status"], "optimal");
    // The classic isotropic case: ~1.424 Hz.
    let rate: f64 = entry["rate_hz"]
        .as_str()
        .unwrap()
        .parse()
        .unwrap();
    assert!((rate - 1.424).abs() < 1e-2, "rate {rate}");
}

#[test]
fn covariance_solves_and_reports() {
    let dir = temp_dir("covariance");
    let cfg = write_config(&dir, "cfg.json", &base_config("\"solve\"", "20.0", "[0.05]"));
    let out = run(spi()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .arg("covariance"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(dir.join("out/covariance_report.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&report).unwrap();
    let entry = &json["entries"][0];
    assert_eq!(entry["status"], "optimal");
    let cov00: f64 = entry["implied_covariance"][0][0]
        .as_str()
        .unwrap()
        .parse()
        .unwrap();
    assert!((cov00 - 0.1225).abs() < 1e-4, "cov {cov00}");
}

#[test]
fn infeasible_accuracy_exits_3() {
    let dir = temp_dir("infeasible");
    // ka below sqrt(Q/m) = 0.00707: unreachable at 20 Hz.
    let cfg = write_config(&dir, "cfg.json", &base_config("\"solve\"", "20.0", "[0.005]"));
    let out = run(spi()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .arg("covariance"));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(dir.join("out/covariance_report.json")).unwrap();
    assert!(report.contains("infeasible"));
    assert!(report.contains("k_a,min"));
}

#[test]
fn bad_config_exits_2() {
    let dir = temp_dir("badcfg");
    let cfg = write_config(&dir, "cfg.json", &base_config("0.0064", "\"solve\"", "[0.0]"));
    let out = run(spi().arg("--config").arg(&cfg).arg("schedule"));
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("accuracy must be positive"), "{stderr}");

    // Missing config path.
    let out = run(spi().arg("schedule"));
    assert_eq!(out.status.code(), Some(2));

    // Command/config mismatch: schedule with a fixed rate.
    let cfg = write_config(&dir, "cfg2.json", &base_config("0.0064", "20.0", "[0.05]"));
    let out = run(spi().arg("--config").arg(&cfg).arg("schedule"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pcrb_trace_within_envelope_at_solved_rate() {
    let dir = temp_dir("trace");
    let cfg = write_config(&dir, "cfg.json", &base_config("0.0064", "\"solve\"", "[0.05]"));
    let out = run(spi()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .arg("pcrb-trace"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.join("out/pcrb_trace_ka0.050000.csv")).unwrap();
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let bound: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(bound <= 0.05f64.powi(2) + 1e-9, "bound breached: {line}");
        rows += 1;
    }
    assert!(rows > 5, "trace too short: {rows} rows");
}

#[test]
fn pure_prediction_trace_diverges() {
    let dir = temp_dir("trace-none");
    let text = r#"{
        "schema_version": 1,
        "dimension": 2,
        "motion": { "psd": 0.001, "duration_s": 5.0 },
        "sensor": { "kind": "none", "covariance": 1.0 },
        "accuracy": { "grid": [0.05] },
        "schedule": { "rate_hz": 2.0 }
    }"#;
    let cfg = write_config(&dir, "cfg.json", text);
    let out = run(spi()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .arg("pcrb-trace"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.join("out/pcrb_trace_ka0.050000.csv")).unwrap();
    let bounds: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(bounds.len() > 3);
    for w in bounds.windows(2) {
        assert!(w[1] > w[0], "prediction-only bound must grow monotonically");
    }
}

#[test]
fn simulate_then_estimate_pipeline() {
    let dir = temp_dir("pipeline");
    let cfg = write_config(&dir, "cfg.json", &base_config("0.0064", "10.0", "[0.05]"));
    let out_dir = dir.join("out");
    let out = run(spi()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .arg("simulate"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("trajectory.csv").exists());
    assert!(out_dir.join("measurements.csv").exists());

    let out = run(spi()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .arg("estimate"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(out_dir.join("estimate_report.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(json["converged"], true);
    let rmse: f64 = json["rmse_m"].as_str().unwrap().parse().unwrap();
    // 10 Hz position fixes at sigma = 0.08 smooth comfortably below sigma.
    assert!(rmse < 0.08, "rmse {rmse}");
}

#[test]
fn experiment_outputs_are_byte_identical_across_runs() {
    let dir = temp_dir("determinism");
    let mut text = base_config("0.0064", "\"solve\"", "[0.04, 0.08]");
    text = text.replace(
        "\"trials\": { \"count\": 2, \"base_seed\": 11 }",
        "\"trials\": { \"count\": 2, \"base_seed\": 11 },\n            \"output\": { \"formats\": [\"csv\", \"dat\"] }",
    );
    let cfg = write_config(&dir, "cfg.json", &text);

    let run_once = |tag: &str, jobs: &str| -> Vec<(String, Vec<u8>)> {
        let out_dir = dir.join(tag);
        let out = run(spi()
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir)
            .arg("--jobs")
            .arg(jobs)
            .arg("experiment")
            .arg("rate-sweep"));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out_dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        files.sort();
        files
    };

    let a = run_once("a", "1");
    let b = run_once("b", "4");
    assert_eq!(a.len(), b.len());
    for ((name_a, bytes_a), (name_b, bytes_b)) in a.iter().zip(&b) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "{name_a} differs between runs");
    }
    assert!(a.iter().any(|(n, _)| n == "results.csv"));
    assert!(a.iter().any(|(n, _)| n == "summary.csv"));
    assert!(a.iter().any(|(n, _)| n == "rmse_vs_ka_optimal.dat"));
}

#[test]
fn schedule_infeasible_at_rate_cap_exits_3() {
    // Two almost-collinear anchors leave one state direction nearly
    // unobserved; the pessimistic per-query information is so small that
    // no rate below the bracket cap can hold the bound.
    let dir = temp_dir("schedule-infeasible");
    let text = r#"{
        "schema_version": 1,
        "dimension": 2,
        "motion": { "psd": 0.001, "duration_s": 5.0, "truth_step_s": 0.05 },
        "sensor": { "kind": "range", "covariance": 0.0064,
                    "anchors": [[1000.0, 0.0], [1000.0, 0.5]] },
        "accuracy": { "grid": [0.02] },
        "schedule": { "rate_hz": "solve" }
    }"#;
    let cfg = write_config(&dir, "cfg.json", text);
    let out = run(spi()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .arg("schedule"));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(dir.join("out/schedule_report.json")).unwrap();
    assert!(report.contains("infeasible"));
    assert!(report.contains("upper bracket"), "{report}");
}
