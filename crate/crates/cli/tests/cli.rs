use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> String {
    let mut p = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    p.push("../core/data");
    p.push(name);
    p.to_string_lossy().into_owned()
}

fn lrt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrt"))
        .args(args)
        .env_remove("LRT_TIME_BUDGET_MS")
        .output()
        .expect("lrt runs")
}

fn json_out(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn json_err(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let last = text.lines().last().expect("stderr has a line");
    serde_json::from_str(last).expect("stderr ends with JSON")
}

fn temp_file(name: &str, contents: &str) -> String {
    let dir = std::env::temp_dir().join(format!("lrt-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn solve_matches_oracle() {
    let toy = data("toy.json");
    let args = ["--instance", &toy, "--registers", "6", "--unroll", "6"];
    let solve = lrt(&[&["solve"], &args[..], &["--seed", "1"]].concat());
    assert_eq!(solve.status.code(), Some(0));
    let solved = json_out(&solve);
    assert_eq!(solved["status"], "optimal");
    assert_eq!(solved["manifest"]["subcommand"], "solve");
    assert_eq!(solved["manifest"]["seed"], 1);

    let oracle = lrt(&[&["oracle"], &args[..]].concat());
    assert_eq!(oracle.status.code(), Some(0));
    assert_eq!(solved["best"]["cost"]["spill"], json_out(&oracle)["spill"]);
}

#[test]
fn solved_solution_feeds_back_into_cost() {
    let toy = data("toy.json");
    let solved = json_out(&lrt(&["solve", "--instance", &toy, "--registers", "6"]));
    let sol = temp_file("solved.json", &solved["best"]["solution"].to_string());
    let cost = lrt(&["cost", "--instance", &toy, "--registers", "6", "--solution", &sol]);
    let cost = json_out(&cost);
    assert_eq!(cost["spill"], solved["best"]["cost"]["spill"]);
    assert_eq!(cost["feasible"], true);
}

#[test]
fn reference_tiling_costs_three() {
    let out = lrt(&[
        "cost",
        "--instance",
        &data("toy.json"),
        "--solution",
        &data("reference_tiling.json"),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_out(&out);
    assert_eq!(v["spill"], "3");
    assert_eq!(v["cost"]["uspill"], 18);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = lrt(&["solve", "--instance", &data("toy.json"), "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(json_err(&out)["error"]["kind"], "usage");
}

#[test]
fn invalid_document_is_a_validation_error() {
    let bad = temp_file(
        "bad.json",
        r#"{"name":"x","registers":3,"unroll":1,"nodes":[{"id":"A","comp":-1}],"edges":[]}"#,
    );
    let out = lrt(&["solve", "--instance", &bad]);
    assert_eq!(out.status.code(), Some(2));
    let err = json_err(&out);
    assert_eq!(err["error"]["kind"], "validation");
    assert!(err["error"]["message"].as_str().unwrap().contains("nodes[0].comp"));
}

#[test]
fn register_flag_overrides_document() {
    // the document allows 3 registers; 2 is below the largest comp
    let toy = data("toy.json");
    let out = lrt(&["solve", "--instance", &toy, "--registers", "2"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(json_out(&out)["status"], "infeasible");
    let out = lrt(&["solve", "--instance", &toy]);
    let v = json_out(&out);
    assert_eq!(v["instance"]["registers"], 3);
    assert_eq!(v["instance"]["unroll"], 6);
    let out = json_out(&lrt(&["solve", "--instance", &toy, "--unroll", "4"]));
    assert_eq!(out["instance"]["unroll"], 4);
    assert_eq!(out["instance"]["max_width"], 4);
}

#[test]
fn exhausted_budget_exits_four() {
    let toy = data("toy.json");
    let out = lrt(&["solve", "--instance", &toy, "--registers", "6", "--node-budget", "2"]);
    assert_eq!(out.status.code(), Some(4));
    let v = json_out(&out);
    assert_eq!(v["status"], "feasible_unproven");
    assert!(v["best"]["solution"].is_object());

    let out = Command::new(env!("CARGO_BIN_EXE_lrt"))
        .args(["solve", "--instance", &toy, "--registers", "6"])
        .env("LRT_TIME_BUDGET_MS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn codegen_text_is_golden() {
    let out = lrt(&[
        "codegen",
        "--instance",
        &data("toy.json"),
        "--solution",
        &data("reference_tiling.json"),
        "--registers",
        "6",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let golden = include_str!("../../core/tests/golden/toy_reference_unroll6.txt");
    assert_eq!(String::from_utf8(out.stdout).unwrap(), golden);
}

#[test]
fn codegen_refuses_infeasible_without_force() {
    let args = [
        "codegen",
        "--instance",
        &data("toy.json"),
        "--solution",
        &data("reference_tiling.json"),
    ];
    let out = lrt(&args);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(json_err(&out)["error"]["kind"], "infeasible");
    let forced = lrt(&[&args[..], &["--force", "--emit-json"]].concat());
    assert_eq!(forced.status.code(), Some(0));
    let v = json_out(&forced);
    assert_eq!(v["loads"], 18);
    assert!(!v["program"]["diagnostics"].as_array().unwrap().is_empty());
}

#[test]
fn baseline_budget() {
    let toy = data("toy.json");
    let v = json_out(&lrt(&["baseline", "--instance", &toy, "--budget", "1"]));
    assert_eq!(v["report"]["naive_loads"], 5);
    assert_eq!(v["report"]["pipelined_loads"], 4);
    // default budget: 3 registers minus the largest comp of 3
    let v = json_out(&lrt(&["baseline", "--instance", &toy]));
    assert_eq!(v["report"]["budget"], 0);
    assert_eq!(v["report"]["pipelined_loads"], 5);
}

#[test]
fn stats_csv() {
    let out = lrt(&["stats", "--instance", &data("toy.json")]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("instance,name,nodes,scc_count,max_pressure,interesting")
    );
    assert!(lines.next().unwrap().ends_with(",toy,4,4,10,true"));

    let a = lrt(&["stats", "--generate", "1,10"]);
    let b = lrt(&["stats", "--generate", "1,10"]);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(String::from_utf8(a.stdout).unwrap().lines().count(), 11);
}

#[test]
fn sweep_is_ordered() {
    let out = lrt(&[
        "sweep",
        "--instance",
        &data("toy.json"),
        "--registers",
        "6",
        "--unroll",
        "1..4",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_out(&out);
    let unrolls: Vec<u64> = v["sweep"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["unroll"].as_u64().unwrap())
        .collect();
    assert_eq!(unrolls, vec![1, 2, 3, 4]);
    assert!(v["sweep"].as_array().unwrap().iter().all(|r| r["status"] == "optimal"));
}
