use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tempering"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"sigma_p2": -1.0}"#).unwrap();
    let unknown = dir.path().join("unknown.json");
    fs::write(&unknown, r#"{"no_such_key": 1}"#).unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["deviance", "--n-alpha", "0"],
        vec!["deviance", "--no-such-flag"],
        vec!["deviance", "--config", bad.to_str().unwrap()],
        vec!["deviance", "--config", unknown.to_str().unwrap()],
        vec!["example2", "--analytic"],
        vec!["density", "--alpha", "1.5"],
        vec!["density", "--grid", "1,0:64"],
        vec!["spectral", "--problem", "example3"],
    ];
    for args in cases {
        let o = run(&args, &dir.path().join("out"));
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn deviance_outputs_and_manifest() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("dev");
    let o = run(&["deviance", "--seed", "4", "--n-samples", "300", "--n-alpha", "20"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(header(&out.join("dataset.csv")), "y");
    assert!(header(&out.join("deviance.csv")).starts_with("alpha,"));
    let rows = fs::read_to_string(out.join("deviance.csv")).unwrap().lines().count();
    assert_eq!(rows, 22);

    let m = manifest(&out);
    assert_eq!(m["command"], "deviance");
    assert_eq!(m["seed"], 4);
    assert_eq!(m["n_samples"], 300);
    assert_eq!(m["n_alpha"], 20);
    assert_eq!(m["forward_evals_ensemble"], 300);
    assert_eq!(m["forward_evals_grid"], 0);
    for f in m["outputs"].as_array().unwrap() {
        assert!(out.join(f.as_str().unwrap()).exists(), "{f} missing");
    }
}

#[test]
fn density_and_sample_headers() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("den");
    let o = run(&["density", "--n-samples", "200", "--alpha", "0.5", "--grid", "0.6,1.4:64"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(header(&out.join("density_a0.5.csv")), "theta1,log_density,density");
    let meta: Value = serde_json::from_str(&fs::read_to_string(out.join("density_a0.5.json")).unwrap()).unwrap();
    assert_eq!(meta["resolution"], serde_json::json!([64]));
    assert_eq!(meta["forward_evals_grid"], 64);
    assert_eq!(manifest(&out)["forward_evals_grid"], 64);

    let out = dir.path().join("smp");
    let o = run(&["sample", "--n-samples", "200", "--n-out", "50", "--alpha", "1"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["samples_sir.csv", "samples_grid.csv"] {
        let text = fs::read_to_string(out.join(name)).unwrap();
        assert_eq!(text.lines().next().unwrap(), "theta1");
        assert_eq!(text.lines().count(), 51);
    }
}

#[test]
fn mgf_and_spectral_headers() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("mgf");
    assert!(run(&["mgf", "--n-samples", "200"], &out).status.success());
    assert_eq!(header(&out.join("mgf.csv")), "alpha,beta,m");
    assert_eq!(header(&out.join("moments.csv")), "alpha,phi1,phi2,phi3,phi4");

    let out = dir.path().join("spec");
    assert!(run(&["spectral", "--n-samples", "1000"], &out).status.success());
    assert!(out.join("spectral.csv").exists());
    assert!(out.join("spectral.json").exists());

    // a small ensemble overestimates L1 relative to the conserved constant and the traces blow up
    let o = run(&["spectral", "--n-samples", "200", "--seed", "0"], &dir.path().join("esc"));
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("escape"));
}

#[test]
fn example1_analytic_smoke() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("ex1");
    let o = run(&["example1", "--analytic", "--n-alpha", "40"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert!(out.join("analytic.csv").exists());
    assert_eq!(header(&out.join("analytic.csv")), "alpha,phi1_analytic,h_analytic,log_z_analytic,post_mean,post_var");
    for f in m["outputs"].as_array().unwrap() {
        assert!(out.join(f.as_str().unwrap()).exists(), "{f} missing");
    }
}
