use std::path::Path;
use std::process::{Command, Output};

use splab::cli::RunManifest;
use splab::io::FieldDump;
use splab::sweeps::config_hash;

fn splab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splab")).args(args).env("RUST_LOG", "error").output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

const TINY_SWEEP: &str = r#"{
  "rho": [0.5],
  "lambda": [1.0, 2.0],
  "radial_lambda": [4.0, 8.0],
  "annulus_lambda": [1.0],
  "cells_per_unit": 1.0,
  "annulus_cells_per_unit": 1.0,
  "radial_h": 0.25,
  "c_inf_radius": 32.0,
  "margin_cells_per_unit": 8.0
}"#;

#[test]
fn solve_on_a_large_ball_has_negative_multiplier() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = splab(&["solve", "--lambda", "16", "--resolution", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let result: serde_json::Value = serde_json::from_slice(&read(&out.join("result.json"))).unwrap();
    assert!(result["omega"].as_f64().unwrap() < 0.0);
    assert_eq!(result["status"], "converged");

    let manifest = RunManifest::read(&out).unwrap();
    assert!(manifest.complete);
    assert_eq!(manifest.exit_status, Some(0));
    assert_eq!(manifest.config_hash, config_hash(&read(&out.join("config.json"))));
    for f in &manifest.files {
        assert!(out.join(f).exists(), "{f} listed but missing");
    }
    for entry in std::fs::read_dir(&out).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        assert!(manifest.files.contains(&name), "{name} not listed");
    }

    let dump = FieldDump::load(&out.join("field.bin")).unwrap();
    assert_eq!(dump.header.cells, result["cells"].as_u64().unwrap() as usize);
    let mut bytes = Vec::new();
    dump.write_to(&mut bytes).unwrap();
    assert_eq!(bytes, read(&out.join("field.bin")));
}

#[test]
fn repeated_solves_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = splab(&["solve", "--domain", "box", "--resolution", "3", "--init", "random", "--seed", "11", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["result.json", "field.bin", "config.json"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f} differs");
    }
}

#[test]
fn malformed_solve_config_exits_one_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = splab(&["solve", "--domain", r#"{"kind":"ball","radius":1"#, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("domain"));
    assert!(!out.exists());

    let o = splab(&["solve", "--p", "3.5", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("p:"));
    assert!(!out.exists());
}

#[test]
fn stalled_solve_exits_two_with_result() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = splab(&["solve", "--resolution", "6", "--max-iters", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("result.json").exists());
    assert_eq!(RunManifest::read(&out).unwrap().exit_status, Some(2));
}

#[test]
fn sweep_output_is_independent_of_workers_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    std::fs::write(&cfg, TINY_SWEEP).unwrap();
    let run = |name: &str, workers: &str| {
        let out = dir.path().join(name);
        let o = splab(&["sweep", "--config", cfg.to_str().unwrap(), "--workers", workers, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        (out, String::from_utf8(o.stdout).unwrap())
    };
    let (a, _) = run("a", "1");
    let (b, _) = run("b", "2");
    let manifest = RunManifest::read(&a).unwrap();
    assert!(manifest.complete);
    assert_eq!(manifest.config_hash, config_hash(&read(&a.join("config.json"))));
    let csvs: Vec<&String> = manifest.files.iter().filter(|f| f.ends_with(".csv")).collect();
    assert!(csvs.len() >= 6);
    for f in csvs {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f} differs between worker counts");
    }
    assert_eq!(read(&a.join("report.json")), read(&b.join("report.json")));

    let full = String::from_utf8(read(&a.join("records.jsonl"))).unwrap();
    let kept: Vec<&str> = full.lines().take(3).collect();
    assert!(full.lines().count() > kept.len());
    std::fs::write(a.join("records.jsonl"), kept.join("\n") + "\n").unwrap();
    let csv_before: Vec<Vec<u8>> = manifest.files.iter().filter(|f| f.ends_with(".csv")).map(|f| read(&a.join(f))).collect();
    let (_, stdout) = run("a", "1");
    assert!(stdout.contains(", 3 resumed,"), "{stdout}");
    let csv_after: Vec<Vec<u8>> = manifest.files.iter().filter(|f| f.ends_with(".csv")).map(|f| read(&a.join(f))).collect();
    assert_eq!(csv_before, csv_after);
}

#[test]
fn oversized_sweep_is_rejected_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    std::fs::write(&cfg, TINY_SWEEP.replace("\"cells_per_unit\": 1.0", "\"cells_per_unit\": 1000.0")).unwrap();
    let out = dir.path().join("run");
    let o = splab(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("cap"));
    assert!(!out.exists());
}

#[test]
fn malformed_sweep_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"rho": [0.5], "lambdas": [2.0]}"#).unwrap();
    let out = dir.path().join("run");
    let o = splab(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("lambdas"));
    assert!(!out.exists());
}

#[test]
fn verify_exit_codes() {
    let o = splab(&["verify", "--suite", "scalings", "--quick"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
    let o = splab(&["verify", "--suite", "nonsense"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown suite"));
}

#[test]
fn greens_reports_the_ball_robin_value() {
    let o = splab(&["greens", "--resolution", "12", "--delta", "0.3", "--pair", "0,0,0", "0,0,0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let h00 = v["pair"]["value"].as_f64().unwrap();
    let exact = 1.0 / (4.0 * std::f64::consts::PI);
    assert!((h00 - exact).abs() < 0.05 * exact, "{h00} vs {exact}");
    assert!(v["bound"]["m_delta"].as_f64().unwrap() > exact);
}

#[test]
fn appendix_command_prints_thresholds() {
    let o = splab(&["appendix", "--resolution", "6"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let e = &v["embedding"];
    let c_tilde = e["c_tilde"].as_f64().unwrap();
    assert!((e["rho_d"].as_f64().unwrap() - (2.5 / (4.0 * c_tilde)).powi(2)).abs() < 1e-12);
}
