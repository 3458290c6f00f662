use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn mixnl(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixnl"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn write_json(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, v.to_string()).unwrap();
    p
}

fn region(neumann: bool, s: f64) -> Value {
    let n = if neumann {
        json!([{"left": 1.0, "right": 1.5}])
    } else {
        json!([])
    };
    json!({"omega": [{"left": 0.0, "right": 1.0}], "neumann": n, "s": s})
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn invalid_fractional_order_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_json(tmp.path(), "c.json", &json!({"region": region(true, 1.5)}));
    let o = mixnl(&["solve"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("region.s"));
}

#[test]
fn unknown_key_and_fault_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_json(
        tmp.path(),
        "bad.json",
        &json!({"region": region(true, 0.5), "colour": 1}),
    );
    assert_eq!(
        mixnl(&["solve"], &bad, &tmp.path().join("a")).status.code(),
        Some(2)
    );
    let cfg = write_json(
        tmp.path(),
        "c.json",
        &json!({"region": region(true, 0.5), "target_h": 0.0625}),
    );
    let o = mixnl(
        &["verify", "--inject-fault", "gremlins"],
        &cfg,
        &tmp.path().join("b"),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn converge_needs_three_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_json(tmp.path(), "c.json", &json!({"region": region(false, 0.5)}));
    let o = mixnl(
        &["converge", "--h-list", "1/8,1/16"],
        &cfg,
        &tmp.path().join("out"),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn too_many_eigenpairs_is_a_solver_error() {
    let tmp = tempfile::tempdir().unwrap();
    // h = 1/4 on Ω = (0, 1) leaves 4 DOFs with Ω-mass.
    let cfg = write_json(
        tmp.path(),
        "c.json",
        &json!({"region": region(true, 0.5), "target_h": 0.25, "k": 6}),
    );
    let o = mixnl(&["solve"], &cfg, &tmp.path().join("out"));
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn solve_is_deterministic_and_config_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_json(
        tmp.path(),
        "c.json",
        &json!({"region": region(true, 0.5), "target_h": 0.0625, "k": 4}),
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(
        mixnl(&["solve", "--dump-matrices"], &cfg, &a).status.code(),
        Some(0)
    );
    assert_eq!(mixnl(&["solve"], &cfg, &b).status.code(), Some(0));
    for f in ["eigenvalues.csv", "eigenvectors.csv"] {
        assert_eq!(
            read(&a.join(f)),
            read(&b.join(f)),
            "{f} differs between runs"
        );
    }
    assert!(a.join("a.mtx").exists() && a.join("b.mtx").exists());
    assert_eq!(read(&a.join("eigenvalues.csv")).lines().count(), 5);

    // The echoed config reproduces the run.
    let meta: Value = serde_json::from_str(&read(&a.join("run_meta.json"))).unwrap();
    assert_eq!(meta["b_rank"], 16);
    let echoed = write_json(tmp.path(), "echo.json", &meta["config"]);
    let c = tmp.path().join("c");
    assert_eq!(mixnl(&["solve"], &echoed, &c).status.code(), Some(0));
    assert_eq!(
        read(&a.join("eigenvalues.csv")),
        read(&c.join("eigenvalues.csv"))
    );
}

#[test]
fn toml_config_matches_json() {
    let tmp = tempfile::tempdir().unwrap();
    let toml = tmp.path().join("c.toml");
    std::fs::write(
        &toml,
        "k = 3\ntarget_h = 0.0625\n[region]\ns = 0.5\nomega = [{ left = 0.0, right = 1.0 }]\n\
         neumann = [{ left = 1.0, right = 1.5 }]\n",
    )
    .unwrap();
    let json = write_json(
        tmp.path(),
        "c.json",
        &json!({"region": region(true, 0.5), "target_h": 0.0625, "k": 3}),
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(mixnl(&["solve"], &toml, &a).status.code(), Some(0));
    assert_eq!(mixnl(&["solve"], &json, &b).status.code(), Some(0));
    assert_eq!(
        read(&a.join("eigenvalues.csv")),
        read(&b.join("eigenvalues.csv"))
    );
}

#[test]
fn local_only_verify_reports_closed_form() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_json(
        tmp.path(),
        "c.json",
        &json!({"region": region(false, 0.5), "target_h": 0.015625}),
    );
    let out = tmp.path().join("out");
    let o = mixnl(&["verify", "--toggle", "local-only"], &cfg, &out);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    let report: Value = serde_json::from_str(&read(&out.join("report.json"))).unwrap();
    let obs = report["observations"].as_array().unwrap();
    let closed = obs
        .iter()
        .find(|o| o["name"] == "lambda1_vs_closed_form")
        .unwrap();
    assert!(closed["value"].as_f64().unwrap().abs() < 1e-3);
    assert_eq!(report["checks"].as_array().unwrap().len(), 15);
}

#[test]
fn local_only_verify_with_neumann_region() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_json(
        tmp.path(),
        "c.json",
        &json!({"region": region(true, 0.5), "target_h": 0.03125}),
    );
    let out = tmp.path().join("out");
    let o = mixnl(&["verify", "--toggle", "local-only"], &cfg, &out);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    // Without the nonlocal term there is no nonlocal Neumann condition to check.
    let report: Value = serde_json::from_str(&read(&out.join("report.json"))).unwrap();
    let checks = report["checks"].as_array().unwrap();
    assert!(checks.iter().all(|c| c["name"] != "weak_neumann_decrease"));
    assert_eq!(checks.len(), 15);
}

#[test]
fn converge_local_only_rate_is_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_json(
        tmp.path(),
        "c.json",
        &json!({"region": region(false, 0.5), "k": 3}),
    );
    let out = tmp.path().join("out");
    let o = mixnl(
        &[
            "converge",
            "--toggle",
            "local-only",
            "--h-list",
            "1/64,1/128,1/256",
        ],
        &cfg,
        &out,
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let csv = read(&out.join("convergence.csv"));
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header
        .iter()
        .position(|h| *h == "reference_rate_1")
        .unwrap();
    let last: Vec<&str> = lines.last().unwrap().split(',').collect();
    let rate: f64 = last[col].parse().unwrap();
    assert!((rate - 2.0).abs() < 0.2, "rate {rate}");
    assert_eq!(read(&out.join("convergence_limits.csv")).lines().count(), 4);
}

#[test]
fn ibp_command_writes_terms() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_json(tmp.path(), "c.json", &json!({"region": region(true, 0.5)}));
    let out = tmp.path().join("out");
    assert_eq!(mixnl(&["ibp"], &cfg, &out).status.code(), Some(0));
    let v: Value = serde_json::from_str(&read(&out.join("ibp.json"))).unwrap();
    assert_eq!(v["pairs"].as_array().unwrap().len(), 3);
    assert_eq!(v["check"]["passed"], true);
    let f = mixnl(
        &["ibp", "--inject-fault", "ibp_identity"],
        &cfg,
        &tmp.path().join("f"),
    );
    assert_eq!(f.status.code(), Some(1));
}
