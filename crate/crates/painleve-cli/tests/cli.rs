use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::{json, Value};

fn painleve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_painleve")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not one JSON document ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

fn write_state(dir: &Path, name: &str, doc: &Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, doc.to_string()).unwrap();
    path.display().to_string()
}

fn rank_one_state(t: &str) -> Value {
    json!({
        "system": "PA2n1star",
        "n": 1,
        "alpha": ["1/4", "1/3", "1/6", "1/4"],
        "eta": "1/5",
        "q": ["1/2"],
        "p": ["2/3"],
        "t": t,
    })
}

#[test]
fn lax_check_passes_and_reports() {
    for partition in ["n+1,n+1", "(2n-1,1)", "2n,1", "n,n,1"] {
        let out = painleve(&["lax-check", "--partition", partition, "--n", "2", "--mode", "exact", "--points", "3"]);
        assert_eq!(code(&out), 0, "{partition}: {}", String::from_utf8_lossy(&out.stderr));
        let r = report(&out);
        assert_eq!(r["passed"], true);
        assert_eq!(r["points"], 3);
        assert_eq!(r["max_residual"], 0.0);
    }
}

#[test]
fn lax_check_is_deterministic_per_seed() {
    let args = ["lax-check", "--partition", "2n,1", "--n", "1", "--points", "30", "--seed", "7"];
    let (a, b) = (painleve(&args), painleve(&args));
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let other = painleve(&["lax-check", "--partition", "2n,1", "--n", "1", "--points", "30", "--seed", "8"]);
    assert_ne!(report(&a)["max_residual"], report(&other)["max_residual"]);
}

#[test]
fn mutations_fail_verification() {
    for m in ["H:1,0", "dp1", "B:1,1,0"] {
        let out = painleve(&["lax-check", "--partition", "n+1,n+1", "--n", "1", "--mode", "exact", "--points", "3", "--mutate", m]);
        assert_eq!(code(&out), 4, "{m}");
        assert_eq!(report(&out)["passed"], false);
    }
    let out = painleve(&["weyl-check", "--n", "1", "--trials", "5", "--mutate-r0"]);
    assert_eq!(code(&out), 4);
}

#[test]
fn jsonl_emits_one_line_per_shard() {
    let out = painleve(&["lax-check", "--partition", "n,n,1", "--n", "1", "--points", "60", "--jsonl"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let shard_lines: Vec<&str> = text.lines().take_while(|l| l.starts_with('{') && l.ends_with('}')).collect();
    assert_eq!(shard_lines.len(), 3);
    let total: u64 = shard_lines.iter().map(|l| serde_json::from_str::<Value>(l).unwrap()["points"].as_u64().unwrap()).sum();
    assert_eq!(total, 60);
}

#[test]
fn usage_and_schema_errors_exit_2() {
    assert_eq!(code(&painleve(&["lax-check", "--partition", "3,2", "--n", "1"])), 2);
    assert_eq!(code(&painleve(&["lax-check", "--n", "1"])), 2);
    assert_eq!(code(&painleve(&["weyl-check", "--n", "0"])), 2);
    assert_eq!(code(&painleve(&["lax-check", "--partition", "n,n,1", "--mutate", "Q:1"])), 2);
    assert_eq!(code(&painleve(&["no-such-command"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let mut doc = rank_one_state("3");
    doc.as_object_mut().unwrap().remove("q");
    let path = write_state(dir.path(), "bad.json", &doc);
    assert_eq!(code(&painleve(&["eval", "--in", &path])), 2);
    assert_eq!(code(&painleve(&["eval", "--in", "/nonexistent/state.json"])), 2);
}

#[test]
fn eval_exact_and_domain_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_state(dir.path(), "s.json", &rank_one_state("3"));
    let out = painleve(&["eval", "--in", &path, "--mode", "exact"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    assert!(r["hamiltonian"].is_string());
    assert_eq!(r["dq_dt"].as_array().unwrap().len(), 1);
    let float = report(&painleve(&["eval", "--in", &path]));
    let exact: f64 = {
        let s = r["hamiltonian"].as_str().unwrap();
        let (a, b) = s.split_once('/').unwrap_or((s, "1"));
        a.parse::<f64>().unwrap() / b.parse::<f64>().unwrap()
    };
    assert!((float["hamiltonian"].as_f64().unwrap() - exact).abs() < 1e-12);

    let singular = write_state(dir.path(), "t1.json", &rank_one_state("1"));
    assert_eq!(code(&painleve(&["eval", "--in", &singular, "--mode", "exact"])), 3);
}

#[test]
fn eval_reads_stdin() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_painleve"))
        .args(["eval", "--in", "-", "--mode", "exact"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(rank_one_state("3").to_string().as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(report(&out)["system"], "PA2n1star");
}

#[test]
fn integrate_then_check_along() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = json!({
        "partition": "n+1,n+1",
        "n": 1,
        "alpha": [0.3, 0.2, 0.1, 0.4],
        "eta": 0.25,
        "q": [0.4],
        "p": [0.3],
        "t": 2.0,
        "aux": {"w": 0.8},
    });
    // the positional form is equivalent
    let named = report(&painleve(&["eval", "--in", &write_state(dir.path(), "named.json", &doc)]));
    doc["aux"] = json!([0.8]);
    let positional = report(&painleve(&["eval", "--in", &write_state(dir.path(), "pos.json", &doc)]));
    assert_eq!(named, positional);
    assert!(named["aux_dlog_dt"].is_array());
    let path = write_state(dir.path(), "start.json", &doc);
    let stem = dir.path().join("run").display().to_string();
    let out = painleve(&["integrate", "--in", &path, "--t1", "2.5", "--out", &stem, "--points", "10"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(format!("{stem}.csv")).unwrap();
    assert_eq!(csv.lines().count(), 12);
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(format!("{stem}.json")).unwrap()).unwrap();
    assert_eq!(meta["samples"], 11);
    assert_eq!(meta["final"]["t"], 2.5);

    let along = painleve(&["lax-check", "--in", &stem]);
    assert_eq!(code(&along), 0, "{}", String::from_utf8_lossy(&along.stdout));
    assert_eq!(report(&along)["tangent"], "field");

    let through = painleve(&["integrate", "--in", &path, "--t1", "0.5", "--out", &stem]);
    assert_eq!(code(&through), 3);
}

#[test]
fn weyl_check_and_p6_compare_pass() {
    let out = painleve(&["weyl-check", "--n", "2", "--trials", "5"]);
    assert_eq!(code(&out), 0);
    let r = report(&out);
    assert_eq!(r["passed"], true);
    // relations for 6 nodes plus equivariance and symplecticity per reflection
    assert_eq!(r["reports"].as_array().unwrap().len(), 6 + 15 + 12);

    let out = painleve(&["p6-compare", "--seed", "7"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert!(report(&out)["deviation"].as_f64().unwrap() <= 1e-8);
}
