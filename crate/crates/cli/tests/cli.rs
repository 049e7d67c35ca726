use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pca-gcb"));
    c.env_remove("PCA_GCB_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}):\n{}\nstderr:\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

/// CSV body without the manifest comment line.
fn body(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn constants_ledger_reaches_stationary_value() {
    let out = run(&[
        "constants",
        "--c",
        "0.25",
        "--C0",
        "0.25",
        "--kappa",
        "0.16",
        "--n",
        "50",
    ]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    let c_inf = v["result"]["ledger"]["c_inf"].as_f64().unwrap();
    assert!((c_inf - 0.297_619_047_619_047_6).abs() < 1e-15);
    assert_eq!(v["result"]["ledger"]["c_n"].as_array().unwrap().len(), 51);
    assert_eq!(v["manifest"]["subcommand"], "constants");
}

#[test]
fn expand_stavskaya_table() {
    let dir = tempfile::tempdir().unwrap();
    let eps = 0.3;
    let table = write(
        dir.path(),
        "stavskaya.json",
        &format!(
            r#"{{"dimension": 1, "neighborhood": [[0], [1]], "probs": [{eps}, {eps}, {eps}, 1.0]}}"#
        ),
    );
    let out = run(&["rule", "expand", "--table", &table]);
    assert_eq!(code(&out), 0);
    let coeffs = json(&out)["result"]["coeffs"].as_array().unwrap().clone();
    assert_eq!(coeffs.len(), 4);
    let get = |a: Value| {
        coeffs
            .iter()
            .find(|c| c["A"] == a)
            .map(|c| c["r"].as_f64().unwrap())
            .unwrap()
    };
    assert!((get(serde_json::json!([])) - (3.0 * eps - 1.0) / 2.0).abs() < 1e-12);
    for a in [
        serde_json::json!([[0]]),
        serde_json::json!([[1]]),
        serde_json::json!([[0], [1]]),
    ] {
        assert!((get(a) - (1.0 - eps) / 2.0).abs() < 1e-12);
    }
    let manifest = &json(&out)["manifest"]["inputs"];
    assert_eq!(manifest[&table].as_str().unwrap().len(), 64);
}

#[test]
fn expand_then_inspect_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let probs = [0.11, 0.42, 0.93, 0.27, 0.5, 0.05, 0.66, 0.8];
    let text = format!(
        r#"{{"dimension": 1, "neighborhood": [[-1], [0], [2]], "probs": {}}}"#,
        serde_json::to_string(&probs).unwrap()
    );
    let table = write(dir.path(), "t.json", &text);
    let out = run(&["rule", "expand", "--table", &table]);
    assert_eq!(code(&out), 0);
    let rule = json(&out)["result"].to_string();
    let rule_path = write(dir.path(), "r.json", &rule);
    let out = run(&["rule", "inspect", "--rule", &rule_path]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    let back: Vec<f64> = v["result"]["probs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    for (a, b) in back.iter().zip(&probs) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn inadmissible_rule_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let rule = write(
        dir.path(),
        "bad.json",
        r#"{"dimension": 1, "coeffs": [{"A": [], "r": 0.8}, {"A": [[0]], "r": 0.5}]}"#,
    );
    let out = run(&["rule", "inspect", "--rule", &rule]);
    assert_eq!(code(&out), 2);
    assert_eq!(json(&out)["result"]["validation"]["admissible"], false);
    let out = run(&["simulate", "--rule", &rule, "--torus", "8", "--steps", "1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn verification_failure_exits_3() {
    // fair coins satisfy the bound at C = 1/4 but not at C = 0.2
    let base = [
        "verify",
        "mgf",
        "--builtin",
        "independent_flip:0,0",
        "--torus",
        "4",
        "--init",
        "product:0.5",
    ];
    let out = run(&[&base[..], &["--C", "0.25"]].concat());
    assert_eq!(code(&out), 0);
    let out = run(&[&base[..], &["--C", "0.2"]].concat());
    assert_eq!(code(&out), 3);
    assert_eq!(json(&out)["result"]["passed"], false);
}

#[test]
fn dirac_measure_passes_with_zero_slack() {
    let out = run(&[
        "verify",
        "mgf",
        "--builtin",
        "always_plus",
        "--torus",
        "5",
        "--init",
        "all_plus",
        "--C",
        "0",
    ]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    assert_eq!(v["result"]["passed"], true);
    assert_eq!(v["result"]["min_slack"].as_f64().unwrap(), 0.0);
}

#[test]
fn resource_cap_exits_4() {
    let out = run(&[
        "exact",
        "stationary",
        "--builtin",
        "noisy_majority3:0.45",
        "--torus",
        "30",
    ]);
    assert_eq!(code(&out), 4);
}

#[test]
fn usage_errors_exit_64_and_help_exits_0() {
    assert_eq!(code(&run(&["constants", "--no-such-flag"])), 64);
    assert_eq!(code(&run(&["frobnicate"])), 64);
    assert_eq!(code(&run(&["simulate", "--torus", "8"])), 64);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
}

#[test]
fn simulation_output_ignores_thread_count() {
    let args = [
        "simulate",
        "--builtin",
        "stavskaya:0.8",
        "--torus",
        "40",
        "--init",
        "product:0.3",
        "--steps",
        "5",
        "--replicas",
        "20",
        "--seed",
        "9",
        "--emit",
        "trajectory",
    ];
    let one = run(&[&args[..], &["--threads", "1"]].concat());
    let four = run(&[&args[..], &["--threads", "4"]].concat());
    let env = bin()
        .args(args)
        .env("PCA_GCB_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(code(&one), 0);
    assert_eq!(body(&one), body(&four));
    assert_eq!(body(&one), body(&env));
    // header plus replica x step x observable rows
    assert_eq!(body(&one).lines().count(), 1 + 20 * 6);
    assert!(String::from_utf8_lossy(&env.stdout).contains("\"threads\":3"));
}

#[test]
fn simulate_stats_with_observable_file() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(
        dir.path(),
        "f.json",
        r#"{"dimension": 1, "sites": [[0], [1]], "table": [0, 0, 0, 1]}"#,
    );
    let obs = format!("{f}@3");
    let out = run(&[
        "simulate",
        "--builtin",
        "always_plus",
        "--torus",
        "8",
        "--steps",
        "2",
        "--replicas",
        "5",
        "--observable",
        &obs,
        "--emit",
        "stats",
    ]);
    assert_eq!(code(&out), 0);
    let stats = json(&out)["result"]["stats"].as_array().unwrap().clone();
    assert_eq!(stats.len(), 3);
    assert_eq!(stats[2]["mean"].as_f64().unwrap(), 1.0);
}

#[test]
fn relax_and_entropy_reports() {
    let out = run(&[
        "verify",
        "relax",
        "--builtin",
        "noisy_majority3:0.45",
        "--torus",
        "8",
        "--k-max",
        "5",
    ]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    assert_eq!(v["result"]["rows"].as_array().unwrap().len(), 6);
    let out = run(&[
        "verify",
        "relax",
        "--builtin",
        "stavskaya:0.5",
        "--torus",
        "8",
    ]);
    assert_eq!(code(&out), 2);
    let dir = tempfile::tempdir().unwrap();
    let side = dir.path().join("points.csv");
    let out = run(&[
        "verify",
        "entropy",
        "--builtin",
        "noisy_majority3:0.45",
        "--torus",
        "8",
        "--csv",
        side.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert!(fs::read_to_string(&side)
        .unwrap()
        .contains("volume_size,ent"));
}

#[test]
fn monte_carlo_tail_check() {
    let out = run(&[
        "verify",
        "tail",
        "--builtin",
        "noisy_majority3:0.45",
        "--torus",
        "16",
        "--stationary",
        "--source",
        "mc",
        "--replicas",
        "2000",
        "--burn-in",
        "30",
        "--seed",
        "4",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["manifest"]["seed"], 4);
}
