//! End-to-end subcommand checks through the compiled binary.

use std::path::PathBuf;
use std::process::{Command, Output};

fn qreset(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qreset"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tmp_dir() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("qreset-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn simulate_special_unitary_succeeds_with_certainty() {
    let out = qreset(&["simulate", "--protocol", "w4", "--unitary", "special-xz"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("p_success = 1.000000"), "{text}");
}

#[test]
fn simulate_product_unitary_never_succeeds() {
    let out = qreset(&[
        "simulate",
        "--protocol",
        "w4",
        "--unitary",
        "product",
        "--seed",
        "7",
    ]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("p_success = 0.000000"));
}

#[test]
fn simulate_is_deterministic() {
    let args = ["simulate", "--protocol", "w4", "--unitary", "haar", "--seed", "1"];
    let a = qreset(&args);
    let b = qreset(&args);
    assert!(a.status.success());
    assert_eq!(stdout(&a), stdout(&b));
    assert!(!stdout(&a).contains("p_success = 0.000000"));
}

#[test]
fn table1_degenerate_sample_count() {
    let out = qreset(&[
        "table1",
        "--m-max",
        "0",
        "--samples",
        "2",
        "--seed",
        "3",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("m,mean,stderr"));
    let row = lines.next().expect("one row");
    assert!(row.starts_with("0,"));
    assert_eq!(row.split(',').count(), 3);
}

#[test]
fn table1_budget_exceeded_gives_partial_table_and_code_4() {
    let out = qreset(&[
        "table1",
        "--m-max",
        "1",
        "--samples",
        "4",
        "--seed",
        "3",
        "--budget-bytes",
        "512",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stdout(&out).contains("m,mean,stderr"));
    assert!(stderr(&out).contains("memory budget"));
}

#[test]
fn scenario_rejects_missing_delta_with_path() {
    let dir = tmp_dir();
    let cfg = dir.join("missing-delta.json");
    std::fs::write(
        &cfg,
        r#"{
            "protocols": ["w4"],
            "T_grid": [0.5],
            "lambda": {"dist": "uniform", "lo": -1.0, "hi": 1.0},
            "samples": 4,
            "seed": 1,
            "hamiltonian": {"XY": -1.0}
        }"#,
    )
    .unwrap();
    let out = qreset(&["scenario", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("$.delta"), "{}", stderr(&out));
}

#[test]
fn scenario_zero_coupling_curve_is_zero() {
    let dir = tmp_dir();
    let cfg = dir.join("zero-coupling.json");
    std::fs::write(
        &cfg,
        r#"{
            "protocols": ["w4"],
            "T_grid": [0.5, 1.0],
            "delta": 0.5,
            "lambda": {"dist": "uniform", "lo": -1.0, "hi": 1.0},
            "samples": 4,
            "seed": 1,
            "hamiltonian": {}
        }"#,
    )
    .unwrap();
    let out = qreset(&["scenario", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("T,protocol_id,mean,stderr,samples"));
    for line in text.lines().skip(1) {
        let mean: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!(mean.abs() < 1e-12);
    }
}

#[test]
fn design_injective_emits_full_rank_unitary() {
    let dir = tmp_dir();
    let out_path = dir.join("injective.json");
    let out = qreset(&[
        "design",
        "injective",
        "--ds",
        "2",
        "--seed",
        "9",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(doc["span_rank"], 4);
    assert_eq!(doc["length"], 5);
    assert_eq!(doc["matrix"].as_array().unwrap().len(), 4);
}

#[test]
fn subspace_dump_load_roundtrip() {
    let dir = tmp_dir();
    let cache = dir.join("hc-n3.json");
    let out = qreset(&[
        "subspace",
        "dump",
        "--n",
        "3",
        "--seed",
        "11",
        "--out",
        cache.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("dim 0 of 64"), "{}", stdout(&out));

    let out = qreset(&["subspace", "load", "--file", cache.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("dim 0 of 64"));
}

#[test]
fn validate_accepts_and_rejects_testers() {
    let dir = tmp_dir();
    // valid trivial tester straight from the library
    let t = qreset_core::network::TesterChoi::trivial(2, 2);
    let good = dir.join("tester-good.json");
    std::fs::write(
        &good,
        serde_json::to_string(&qreset_core::io::tester_to_json(&t)).unwrap(),
    )
    .unwrap();
    let out = qreset(&["validate", "--tester", good.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("PASS"));

    // corrupt one entry of M0
    let mut t = qreset_core::network::TesterChoi::trivial(2, 2);
    t.m0.set(0, 0, num_complex::Complex64::new(-0.1, 0.0));
    let bad = dir.join("tester-bad.json");
    std::fs::write(
        &bad,
        serde_json::to_string(&qreset_core::io::tester_to_json(&t)).unwrap(),
    )
    .unwrap();
    let out = qreset(&["validate", "--tester", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = qreset(&["simulate", "--definitely-not-a-flag"]);
    assert_eq!(out.status.code(), Some(1));
}
