use std::path::Path;
use std::process::{Command, Output};

use chainrace_core::chain::{build_honest_chain, Chain, TimeUnit};
use serde_json::Value;

fn chainrace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chainrace"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn plan_verifiable_worked_examples() {
    let out = chainrace(&["plan-verifiable", "--ma", "16", "--blocks", "4"]);
    assert_eq!(code(&out), 0);
    let plan = json(&out);
    assert_eq!(plan["powers"], serde_json::json!([2.0, 4.0, 8.0, 16.0]));
    assert_eq!(plan["duration"], 2.0);

    let out = chainrace(&["plan-verifiable", "--ma", "27", "--deficit", "2"]);
    assert_eq!(code(&out), 0);
    assert_eq!(json(&out)["blocks"], 3);
}

#[test]
fn infeasible_deficit_exits_3() {
    let out = chainrace(&["plan-verifiable", "--ma", "3", "--deficit", "2"]);
    assert_eq!(code(&out), 3);
    let verdict = json(&out);
    assert!((verdict["max_deficit"].as_f64().unwrap() - 3f64.ln()).abs() < 1e-15);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&chainrace(&["plan-verifiable", "--ma", "3"])), 2);
    assert_eq!(
        code(&chainrace(&[
            "plan-verifiable",
            "--ma",
            "3",
            "--blocks",
            "2",
            "--deficit",
            "1"
        ])),
        2
    );
    assert_eq!(
        code(&chainrace(&[
            "plan-verifiable",
            "--ma",
            "0.5",
            "--blocks",
            "2"
        ])),
        2
    );
    assert_eq!(
        code(&chainrace(&[
            "simulate",
            "--ma",
            "3",
            "--blocks",
            "2",
            "--deficit",
            "0.5"
        ])),
        2
    );
}

#[test]
fn solver_budget_exhaustion_exits_4() {
    let out = chainrace(&[
        "plan-unverifiable",
        "--ma",
        "3",
        "--blocks",
        "60",
        "--max-iterations",
        "1",
    ]);
    assert_eq!(code(&out), 4);
}

#[test]
fn two_block_unverifiable_plan() {
    let out = chainrace(&["plan-unverifiable", "--ma", "3", "--blocks", "2"]);
    assert_eq!(code(&out), 0);
    let plan = json(&out);
    let claims = plan["schedule"]["claimed_intervals"].as_array().unwrap();
    assert_eq!(claims.len(), 1);
    assert!((claims[0].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!((plan["actual_duration"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-9);
}

#[test]
fn plans_round_trip_through_simulate_check() {
    let dir = tempfile::tempdir().unwrap();
    for (name, args) in [
        (
            "verifiable.json",
            vec!["plan-verifiable", "--ma", "16", "--blocks", "4"],
        ),
        (
            "unverifiable.json",
            vec!["plan-unverifiable", "--ma", "99", "--blocks", "20"],
        ),
    ] {
        let out = chainrace(&args);
        assert_eq!(code(&out), 0);
        let path = dir.path().join(name);
        std::fs::write(&path, &out.stdout).unwrap();
        let sim = chainrace(&[
            "simulate",
            "--plan",
            path_str(&path),
            "--deficit",
            "2",
            "--check",
        ]);
        assert_eq!(code(&sim), 0, "{}", String::from_utf8_lossy(&sim.stderr));
        assert!(String::from_utf8_lossy(&sim.stderr).contains("analytic check passed"));
        let outcome = json(&sim);
        assert!(outcome["success"].as_bool().unwrap());
    }
}

#[test]
fn tampered_or_malformed_plans_exit_5() {
    let dir = tempfile::tempdir().unwrap();
    let good = json(&chainrace(&[
        "plan-verifiable",
        "--ma",
        "16",
        "--blocks",
        "4",
    ]));

    let mut tampered = good.clone();
    tampered["powers"][2] = serde_json::json!(20.0);
    let path = dir.path().join("tampered.json");
    std::fs::write(&path, tampered.to_string()).unwrap();
    assert_eq!(
        code(&chainrace(&[
            "simulate",
            "--plan",
            path_str(&path),
            "--deficit",
            "2"
        ])),
        5
    );

    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{\"powers\": [2.0,").unwrap();
    assert_eq!(
        code(&chainrace(&[
            "simulate",
            "--plan",
            path_str(&path),
            "--deficit",
            "2"
        ])),
        5
    );
}

#[test]
fn misreporting_plan_under_truthful_regime_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let out = chainrace(&["plan-unverifiable", "--ma", "3", "--blocks", "5"]);
    let path = dir.path().join("plan.json");
    std::fs::write(&path, &out.stdout).unwrap();
    let sim = chainrace(&[
        "simulate",
        "--plan",
        path_str(&path),
        "--deficit",
        "2",
        "--regime",
        "verifiable",
    ]);
    assert_eq!(code(&sim), 5);
}

#[test]
fn csv_outcome_has_header_and_row() {
    let out = chainrace(&[
        "simulate",
        "--ma",
        "3",
        "--blocks",
        "5",
        "--strategy",
        "naive",
        "--deficit",
        "2",
        "--mode",
        "faithful",
        "--format",
        "csv",
        "--check",
    ]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("plan,capacity,blocks,deficit"));
    let header: Vec<&str> = lines[0].split(',').collect();
    let row: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(header.len(), row.len());
    assert_eq!(row[0], "naive");
    assert_eq!(
        row[header.iter().position(|h| *h == "success").unwrap()],
        "false"
    );
}

#[test]
fn table_output_is_deterministic() {
    let first = chainrace(&["table1"]);
    let second = chainrace(&["table1"]);
    assert_eq!(code(&first), 0);
    assert_eq!(first.stdout, second.stdout);
    let text = String::from_utf8(first.stdout).unwrap();
    assert!(!text.contains('\r'));
    assert!(text.ends_with('\n'));
    assert_eq!(text.lines().count(), 21);
    assert_eq!(text.lines().next(), Some("ma,n,regime,t_star,a_max"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.csv");
    assert_eq!(code(&chainrace(&["table1", "--out", path_str(&path)])), 0);
    assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
}

#[test]
fn validate_honest_and_mutated_chains() {
    let dir = tempfile::tempdir().unwrap();
    let honest = build_honest_chain(10);

    let records = dir.path().join("honest.csv");
    std::fs::write(&records, honest.to_records()).unwrap();
    let out = chainrace(&["validate", path_str(&records)]);
    assert_eq!(code(&out), 0);
    let as_json = dir.path().join("honest.json");
    std::fs::write(&as_json, serde_json::to_string(&honest).unwrap()).unwrap();
    assert_eq!(code(&chainrace(&["validate", path_str(&as_json)])), 0);
    assert_eq!(
        code(&chainrace(&[
            "validate",
            path_str(&records),
            "--regime",
            "unverifiable",
            "--reveal-time",
            "10"
        ])),
        0
    );

    let mut blocks = honest.clone().into_blocks();
    blocks[5].reported_timestamp = TimeUnit::new(3.5).unwrap();
    let mutated = dir.path().join("mutated.csv");
    std::fs::write(&mutated, Chain::from_blocks(blocks).unwrap().to_records()).unwrap();
    let out = chainrace(&["validate", path_str(&mutated)]);
    assert_eq!(code(&out), 5);
    assert_eq!(
        json(&out)["violations"][0]["kind"],
        "non_increasing_timestamps"
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-increasing timestamps"));

    assert_eq!(
        code(&chainrace(&[
            "validate",
            path_str(&records),
            "--regime",
            "unverifiable"
        ])),
        2
    );
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&chainrace(&["validate", path_str(&missing)])), 1);
}
