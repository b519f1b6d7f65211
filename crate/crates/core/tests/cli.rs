//! End-to-end runs of the command-line tool on small settings.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mlevidence"));
    c.env("MLEVIDENCE_JOBS", "1");
    c
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn simulate_then_evidence_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    assert!(bin().args(["simulate", "--seed", "5", "--out"]).arg(&sim).output().unwrap().status.success());
    for f in ["D0.csv", "D1.csv", "D2.csv", "D3.csv", "true_params.json", "manifest.json"] {
        assert!(sim.join(f).exists(), "{f} missing");
    }
    let run = |name: &str| {
        let out = dir.path().join(name);
        let st = bin()
            .args(["evidence", "--model", "sim:M3", "--particles", "200", "--runs", "2", "--seed", "9", "--data"])
            .arg(sim.join("D3.csv"))
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap()
            .status;
        assert!(st.success());
        out
    };
    let (a, b) = (read_json(&run("a.json")), read_json(&run("b.json")));
    assert_eq!(a["runs"], b["runs"]);
    assert_eq!(a["manifest_digest"], b["manifest_digest"]);
    let exact = a["analytic"].as_f64().unwrap();
    assert!((a["mean"].as_f64().unwrap() - exact).abs() < 0.5);
    assert!(dir.path().join("a.manifest.json").exists());
}

#[test]
fn bad_mode_is_a_usage_error() {
    let out = bin().args(["evidence", "--model", "radon:M0", "--mode", "exact"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_data_fails() {
    let out = bin().args(["evidence", "--model", "sim:M1", "--particles", "50", "--runs", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--data"));
}

#[test]
fn compare_ranks_radon_models_by_aic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp.json");
    let st = bin()
        .args(["compare", "--models", "radon:M0,radon:M1,radon:M4", "--particles", "100", "--runs", "2", "--out"])
        .arg(&out)
        .output()
        .unwrap()
        .status;
    assert!(st.success());
    let t = read_json(&out);
    let rows = t["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let aic: Vec<f64> = rows.iter().map(|r| r["aic"].as_f64().unwrap()).collect();
    assert!(aic[2] < aic[1] && aic[1] < aic[0], "{aic:?}");
    assert_eq!(t["bayes_factors"].as_array().unwrap().len(), 3);
}

#[test]
fn fit_export_writes_every_county_and_floor() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fits.csv");
    let st = bin().args(["fit-export", "--model", "radon:M3", "--particles", "100", "--out"]).arg(&out).output().unwrap().status;
    assert!(st.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("county,t,mean,sd,present"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 170);
    assert_eq!(rows.iter().filter(|l| l.ends_with(",false")).count(), 25);
}
