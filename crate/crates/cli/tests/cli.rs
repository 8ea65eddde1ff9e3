use aggpolicy::parse_csv;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use tempfile::tempdir;

fn aggpolicy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aggpolicy"))
        .args(args)
        .env_remove("AGGPOLICY_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = aggpolicy(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn summary(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fig1_writes_the_named_files() {
    let dir = tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&["fig1", "--out", out]);
    for name in ["fig1_api.csv", "fig1_pg.csv", "fig1_summary.json", "fig1.svg", "fig1_mdp.json", "fig1_agg.json"] {
        assert!(dir.path().join(name).is_file(), "missing {name}");
    }
    let rows = parse_csv(&fs::read_to_string(dir.path().join("fig1_api.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 101);
    assert_eq!(rows.last().unwrap().cycle_period, Some(2));
    assert!(rows[..100].iter().all(|r| r.cycle_period.is_none()));
    assert_eq!(rows[0].policy_hash, rows[2].policy_hash);
    assert_ne!(rows[0].policy_hash, rows[1].policy_hash);

    let s = summary(&dir.path().join("fig1_summary.json"));
    assert_eq!(s["provenance"]["preset"], "fig1");
    assert!(s["provenance"]["version"].as_str().unwrap().starts_with("v0.1.0"));
    assert_eq!(s["config"]["algorithms"][1]["algo"], "pg");
    assert_eq!(s["two_eps_line"], 2.0);
    assert!((s["api_lower_bound_line"].as_f64().unwrap() - 24.75).abs() < 1e-9);
    assert!((s["eps_phi"]["estimate"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(s["traces"][0]["cycle_period"], 2);
    // the summary echoes the CSV's terminal value bit for bit
    assert_eq!(s["traces"][0]["terminal_objective"].as_f64().unwrap(), rows.last().unwrap().j);

    let svg = fs::read_to_string(dir.path().join("fig1.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert!(svg.contains("api") && svg.contains("pg") && svg.contains("2 eps"));
}

#[test]
fn fig2_reports_the_adaptive_cycle() {
    let dir = tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&["fig2", "--out", out, "--api-iters", "6", "--pg-iters", "3", "--no-plot"]);
    let rows = parse_csv(&fs::read_to_string(dir.path().join("fig2_api-adaptive.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 7);
    assert_eq!(rows[0].policy_hash, rows[2].policy_hash);
    assert_eq!(rows.last().unwrap().cycle_period, Some(2));
    assert!(!dir.path().join("fig2.svg").exists());
    assert_eq!(parse_csv(&fs::read_to_string(dir.path().join("fig2_pg.csv")).unwrap()).unwrap().len(), 4);
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn same_seed_gives_byte_identical_outputs() {
    let dir = tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&["fig1", "--out", out, "--seed", "7", "--pg-iters", "20"]);
    let first = snapshot(dir.path());
    ok(&["fig1", "--out", out, "--seed", "7", "--pg-iters", "20"]);
    assert_eq!(first, snapshot(dir.path()));
}

#[test]
fn run_loads_files_and_seeds_the_start() {
    let dir = tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&["fig1", "--out", out, "--api-iters", "1", "--pg-iters", "1", "--no-plot"]);
    let mdp = dir.path().join("fig1_mdp.json");
    let agg = dir.path().join("fig1_agg.json");
    let (mdp, agg) = (mdp.to_str().unwrap(), agg.to_str().unwrap());
    let run = |seed: &str, sub: &str| {
        let target = dir.path().join(sub);
        let args =
            ["run", "--mdp", mdp, "--agg", agg, "--algo", "soft-api", "--alpha", "0.2", "--iters", "5", "--init", "random"];
        ok(&[&args[..], &["--seed", seed, "--out", target.to_str().unwrap(), "--dump-policies"]].concat());
        (fs::read(target.join("run_soft-api.csv")).unwrap(), target)
    };
    let (a, target) = run("3", "a");
    let (b, _) = run("3", "b");
    let (c, _) = run("4", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(target.join("run_soft-api_policies.json").is_file());
    assert!(target.join("run_summary.json").is_file());
    assert!(summary(&target.join("run_summary.json"))["provenance"]["preset"].is_null());
}

#[test]
fn output_directory_defaults_from_the_environment() {
    let dir = tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_aggpolicy"))
        .args(["fig1", "--api-iters", "2", "--pg-iters", "2"])
        .env("AGGPOLICY_OUT_DIR", dir.path())
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(dir.path().join("fig1_api.csv").is_file());
}

#[test]
fn invalid_inputs_are_rejected_with_context() {
    let dir = tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let missing = missing.to_str().unwrap();
    let out = aggpolicy(&["run", "--mdp", missing, "--agg", missing, "--algo", "pg", "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));

    let out_dir = dir.path().to_str().unwrap();
    ok(&["fig1", "--out", out_dir, "--api-iters", "1", "--pg-iters", "1", "--no-plot"]);
    let mdp = dir.path().join("fig1_mdp.json");
    let agg = dir.path().join("fig1_agg.json");
    let base = ["run", "--mdp", mdp.to_str().unwrap(), "--agg", agg.to_str().unwrap(), "--out", out_dir];
    let out = aggpolicy(&[&base[..], &["--algo", "soft-api", "--alpha", "1.5"]].concat());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("(0, 1]"));
    let out = aggpolicy(&[&base[..], &["--algo", "api", "--tiebreak", "whatever"]].concat());
    assert!(!out.status.success());
    // an aggregation over the wrong number of states
    fs::write(dir.path().join("small.json"), r#"{"num_segments": 1, "phi": [0, 0]}"#).unwrap();
    let small = dir.path().join("small.json");
    let out = aggpolicy(&["run", "--mdp", mdp.to_str().unwrap(), "--agg", small.to_str().unwrap(), "--algo", "pg", "--out", out_dir]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("2 states"));
}

#[test]
fn check_suites_pass_and_report() {
    for suite in ["grad", "proj", "equiv", "bounds"] {
        let stdout = ok(&["check", "--suite", suite]);
        assert!(stdout.contains("0 failed"), "{stdout}");
        assert!(!stdout.contains("FAIL"));
    }
}

#[test]
fn epsilon_recovers_the_construction() {
    let dir = tempdir().unwrap();
    ok(&["fig1", "--out", dir.path().to_str().unwrap(), "--api-iters", "1", "--pg-iters", "1", "--no-plot"]);
    let mdp = dir.path().join("fig1_mdp.json");
    let agg = dir.path().join("fig1_agg.json");
    let stdout = ok(&["epsilon", "--mdp", mdp.to_str().unwrap(), "--agg", agg.to_str().unwrap(), "--det-budget", "8", "--samples", "2"]);
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!((v["estimate"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(v["deterministic_checked"], 8);
}
