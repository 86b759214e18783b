//! End-to-end binary tests: exit codes, report shape, golden text output
//! with the timing field normalized, and JSON round-tripping.

use std::path::PathBuf;
use std::process::Command;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_conic-markets"))
}

fn run(args: &[&str]) -> (String, String, i32) {
    let out = bin().args(args).output().expect("binary runs");
    (
        String::from_utf8(out.stdout).expect("stdout is utf8"),
        String::from_utf8(out.stderr).expect("stderr is utf8"),
        out.status.code().expect("no signal"),
    )
}

fn temp_file(name: &str, text: &str) -> PathBuf {
    let path = std::env::temp_dir().join(format!("conic-markets-{}-{name}", std::process::id()));
    std::fs::write(&path, text).expect("temp file writes");
    path
}

/// Scenario for the k = 10, N = 2 family, produced by the binary itself.
fn family_scenario() -> PathBuf {
    let (stdout, stderr, code) = run(&["example3", "--k", "10", "--N", "2", "--emit-scenario"]);
    assert_eq!(code, 0, "emit-scenario failed: {stderr}");
    temp_file("family.json", &stdout)
}

/// A market where a round trip through the frictionless root exchange and
/// the cheap leaf rate creates something out of nothing.
const ARBITRAGE_SCENARIO: &str = r#"{
  "assets": 2,
  "horizon": 1,
  "nodes": [
    {"id": 0, "time": 0, "parent": null, "prob": "1"},
    {"id": 1, "time": 1, "parent": 0, "prob": "1/2"},
    {"id": 2, "time": 1, "parent": 0, "prob": "1/2"}
  ],
  "bidask": {
    "0": [["1", "1"], ["1", "1"]],
    "1": [["1", "2"], ["1/2", "1"]],
    "2": [["1", "2"], ["1", "1"]]
  }
}"#;

fn normalize(output: &str, scenario: &PathBuf) -> String {
    let mut text = output.replace(scenario.to_str().unwrap(), "<scenario>");
    text = text
        .lines()
        .map(|l| {
            if l.starts_with("timing_ms:") {
                "timing_ms: <t>"
            } else {
                l
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    text.push('\n');
    text
}

#[test]
fn validate_accepts_the_emitted_scenario() {
    let scenario = family_scenario();
    let (stdout, _, code) = run(&["validate", scenario.to_str().unwrap()]);
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.contains("valid: true"));
    assert!(stdout.contains("market: assets=2 horizon=1 leaves=2 nodes=3"));
}

#[test]
fn validate_rejects_missing_files_with_exit_one() {
    let (stdout, _, code) = run(&["validate", "/nonexistent/market.json"]);
    assert_eq!(code, 1);
    assert!(stdout.contains("error:"));
}

#[test]
fn argument_errors_use_exit_one_not_the_verdict_code() {
    let (_, stderr, code) = run(&["maximal", "--claim"]);
    assert_eq!(code, 1, "{stderr}");
}

#[test]
fn unknown_claims_are_validation_errors() {
    let scenario = family_scenario();
    let (stdout, _, code) = run(&["maximal", scenario.to_str().unwrap(), "--claim", "nope"]);
    assert_eq!(code, 1, "{stdout}");
    assert!(stdout.contains("unknown claim"));
}

#[test]
fn inline_claims_must_cover_every_leaf() {
    let scenario = family_scenario();
    let (stdout, _, code) = run(&["maximal", scenario.to_str().unwrap(), "--claim", "-1,0"]);
    assert_eq!(code, 1, "{stdout}");
    assert!(stdout.contains("leaf vectors"));
}

#[test]
fn maximal_zero_claim_matches_the_golden_report() {
    let scenario = family_scenario();
    let (stdout, _, code) = run(&["maximal", scenario.to_str().unwrap(), "--claim", "zero"]);
    assert_eq!(code, 0, "{stdout}");
    let expected = "\
command: maximal <scenario> --claim zero
version: 0.1.0
market: assets=2 horizon=1 leaves=2 nodes=3
attainable: true
maximal: true
properly_maximal: true
certificate:
  values:
    node 0: (2/3, 1/3)
    node 1: (2/3, 1/3)
    node 2: (2/3, 1/3)
timing_ms: <t>
exit_code: 0
";
    assert_eq!(normalize(&stdout, &scenario), expected);
}

#[test]
fn decompose_reports_the_canonical_family_legs() {
    let scenario = family_scenario();
    let (stdout, _, code) = run(&["decompose", scenario.to_str().unwrap(), "--claim", "theta"]);
    assert_eq!(code, 0, "{stdout}");
    let expected = "\
command: decompose <scenario> --claim theta
version: 0.1.0
market: assets=2 horizon=1 leaves=2 nodes=3
legs:
  [0]:
    node 0: (-1, 1)
  [1]:
    node 1: (1/2, -1)
    node 2: (1/4, -1/2)
stage_objectives: (16/33)
scalarizations:
  [0]:
    time: 0
    values:
      node 0: (25/33, 41/33)
timing_ms: <t>
exit_code: 0
";
    assert_eq!(normalize(&stdout, &scenario), expected);
}

#[test]
fn theta_is_not_maximal_and_the_improvement_is_reported() {
    let scenario = family_scenario();
    let (stdout, _, code) = run(&[
        "maximal",
        scenario.to_str().unwrap(),
        "--claim",
        "theta",
        "--format",
        "json",
    ]);
    assert_eq!(code, 2, "{stdout}");
    let doc: Value = serde_json::from_str(&stdout).expect("json parses");
    assert_eq!(doc["results"]["maximal"], Value::Bool(false));
    assert!(doc["results"]["improvement_value"]
        .as_str()
        .is_some_and(|s| !s.starts_with('-') && s != "0/1"));
}

#[test]
fn cpp_finds_a_strict_process_on_the_family() {
    let scenario = family_scenario();
    let (stdout, _, code) = run(&[
        "cpp",
        scenario.to_str().unwrap(),
        "--strict",
        "--format",
        "json",
    ]);
    assert_eq!(code, 0, "{stdout}");
    let doc: Value = serde_json::from_str(&stdout).expect("json parses");
    assert_eq!(doc["results"]["strictly_consistent"], Value::Bool(true));
    assert!(doc["results"]["process"]["strict_slack"].is_string());
}

#[test]
fn cpp_on_an_arbitrage_market_exits_two_with_a_farkas_certificate() {
    let scenario = temp_file("arbitrage.json", ARBITRAGE_SCENARIO);
    let (stdout, _, code) = run(&["cpp", scenario.to_str().unwrap(), "--format", "json"]);
    assert_eq!(code, 2, "{stdout}");
    let doc: Value = serde_json::from_str(&stdout).expect("json parses");
    assert_eq!(doc["results"]["consistent"], Value::Bool(false));
    assert!(!doc["results"]["farkas_certificate"]
        .as_array()
        .expect("certificate present")
        .is_empty());
    assert_eq!(doc["exit_code"], Value::from(2));
}

#[test]
fn arbitrage_command_agrees_with_cpp_on_both_markets() {
    let healthy = family_scenario();
    let (_, _, code) = run(&["arbitrage", healthy.to_str().unwrap()]);
    assert_eq!(code, 0);
    let bad = temp_file("arbitrage2.json", ARBITRAGE_SCENARIO);
    let (stdout, _, code) = run(&["arbitrage", bad.to_str().unwrap(), "--format", "json"]);
    assert_eq!(code, 2);
    let doc: Value = serde_json::from_str(&stdout).expect("json parses");
    assert_eq!(doc["results"]["arbitrage"], Value::Bool(true));
    // the witness claim is nonnegative and its flagged coordinate positive
    let coord = &doc["results"]["witness_positive_coordinate"];
    assert!(coord["leaf"].is_number() && coord["asset"].is_number());
}

#[test]
fn price_zero_side_constraint_is_honored() {
    let scenario = family_scenario();
    // the uniformly improved claim is properly maximal, so a consistent
    // process pricing it to zero exists
    let (stdout, _, code) = run(&[
        "cpp",
        scenario.to_str().unwrap(),
        "--price-zero",
        "-1/2,1/4;-3/4,3/4",
        "--format",
        "json",
    ]);
    assert_eq!(code, 0, "{stdout}");
    let doc: Value = serde_json::from_str(&stdout).expect("json parses");
    assert_eq!(doc["results"]["claim_price"], Value::from("0/1"));

    // theta itself is not maximal: no consistent process prices it to zero
    let (stdout, _, code) = run(&[
        "cpp",
        scenario.to_str().unwrap(),
        "--price-zero",
        "theta",
    ]);
    assert_eq!(code, 2, "{stdout}");
    assert!(stdout.contains("farkas_certificate"));
}

#[test]
fn price_reports_the_exact_expectation() {
    let scenario = family_scenario();
    let (stdout, _, code) = run(&[
        "price",
        scenario.to_str().unwrap(),
        "--claim",
        "theta",
        "--process",
        "1,3/4",
        "--format",
        "json",
    ]);
    assert_eq!(code, 0, "{stdout}");
    let doc: Value = serde_json::from_str(&stdout).expect("json parses");
    assert_eq!(doc["results"]["price"], Value::from("-11/24"));
    assert_eq!(
        doc["results"]["value_process"]["node 1"],
        Value::from("-1/2")
    );
}

#[test]
fn inconsistent_processes_are_rejected_as_input() {
    let scenario = family_scenario();
    let (stdout, _, code) = run(&[
        "price",
        scenario.to_str().unwrap(),
        "--claim",
        "theta",
        "--process",
        "1,100",
    ]);
    assert_eq!(code, 1, "{stdout}");
    assert!(stdout.contains("not consistent"));
}

#[test]
fn verify_only_accepts_lazy_disposal_and_rejects_split_disposal() {
    let scenario = family_scenario();
    let lazy = temp_file(
        "lazy.json",
        r#"{"legs": [{"0": ["0", "0"]}, {"1": ["-1", "0"], "2": ["-1", "0"]}]}"#,
    );
    let (stdout, _, code) = run(&[
        "decompose",
        scenario.to_str().unwrap(),
        "--claim",
        "-1,0;-1,0",
        "--verify-only",
        lazy.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.contains("efficient: true"));

    let split = temp_file(
        "split.json",
        r#"{"legs": [{"0": ["-1/2", "0"]}, {"1": ["-1/2", "0"], "2": ["-1/2", "0"]}]}"#,
    );
    let (stdout, _, code) = run(&[
        "decompose",
        scenario.to_str().unwrap(),
        "--claim",
        "-1,0;-1,0",
        "--verify-only",
        split.to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "{stdout}");
    assert!(stdout.contains("efficient: false"));
    assert!(stdout.contains("deferrable"));
}

#[test]
fn approximate_reports_steps_in_input_order_with_exact_bounds() {
    let scenario = family_scenario();
    let (stdout, _, code) = run(&[
        "approximate",
        scenario.to_str().unwrap(),
        "--claim",
        "-1/2,1/4;-3/4,3/4",
        "--M",
        "4",
        "--n",
        "2,1,4",
        "--format",
        "json",
    ]);
    assert_eq!(code, 0, "{stdout}");
    let doc: Value = serde_json::from_str(&stdout).expect("json parses");
    let steps = doc["results"]["steps"].as_array().expect("steps");
    let ns: Vec<i64> = steps.iter().map(|s| s["n"].as_i64().unwrap()).collect();
    assert_eq!(ns, vec![2, 1, 4]);
    let bounds: Vec<&str> = steps.iter().map(|s| s["bound"].as_str().unwrap()).collect();
    assert_eq!(bounds, vec!["1/5", "7/15", "0/1"]);
    let gaps: Vec<&str> = steps
        .iter()
        .map(|s| s["disagreement"].as_str().unwrap())
        .collect();
    assert_eq!(gaps, vec!["2/15", "14/45", "0/1"]);
}

#[test]
fn approximate_rejects_non_maximal_claims_with_exit_two() {
    let scenario = family_scenario();
    let (stdout, _, code) = run(&[
        "approximate",
        scenario.to_str().unwrap(),
        "--claim",
        "theta",
        "--M",
        "4",
        "--n",
        "1",
    ]);
    assert_eq!(code, 2, "{stdout}");
    assert!(stdout.contains("not maximal"));
}

#[test]
fn example3_verifies_the_documented_facts_for_k10_n4() {
    let (stdout, _, code) = run(&["example3", "--k", "10", "--N", "4", "--format", "json"]);
    assert_eq!(code, 0, "{stdout}");
    let doc: Value = serde_json::from_str(&stdout).expect("json parses");
    let r = &doc["results"];
    assert_eq!(r["arbitrage_free"], Value::Bool(true));
    assert_eq!(r["strictly_consistent"], Value::Bool(true));
    assert_eq!(r["strict_margin"], Value::from("1/4"));
    assert_eq!(r["theta_maximal"], Value::Bool(false));
    assert_eq!(r["epsilon_star"], Value::from("1/8"));
    assert_eq!(r["coefficient_formulas_match"], Value::Bool(true));
    assert_eq!(r["feasible_only_at_unit_coefficients"], Value::Bool(true));
    let chain = r["membership_chain"].as_array().expect("chain");
    assert_eq!(chain.len(), 3); // n = 2, 3, 4
    for step in chain {
        assert_eq!(step["displaced_scalar"], Value::Bool(true));
        assert_eq!(step["displaced_measurable"], Value::Bool(true));
        assert_eq!(step["explicit_representation"], Value::Bool(true));
    }
    assert_eq!(r["limit_has_positive_coordinate"], Value::Bool(true));
}

#[test]
fn reports_are_deterministic_and_rationals_never_decimals() {
    let scenario = family_scenario();
    let args = [
        "cpp",
        scenario.to_str().unwrap(),
        "--strict",
        "--format",
        "json",
    ];
    let (first, _, _) = run(&args);
    let (second, _, _) = run(&args);
    let mut a: Value = serde_json::from_str(&first).expect("json parses");
    let mut b: Value = serde_json::from_str(&second).expect("json parses");
    a["timing_ms"] = Value::from(0);
    b["timing_ms"] = Value::from(0);
    assert_eq!(a, b);
    // round trip: serialize and reparse losslessly
    let again: Value = serde_json::from_str(&a.to_string()).expect("round trip");
    assert_eq!(a, again);
    // every rational in the results subtree is an exact p/q string
    fn scan(v: &Value) {
        match v {
            Value::String(s) if s.contains('/') => {
                let (p, q) = s.split_once('/').expect("fraction");
                assert!(p.strip_prefix('-').unwrap_or(p).bytes().all(|b| b.is_ascii_digit()));
                assert!(q.bytes().all(|b| b.is_ascii_digit()));
            }
            Value::String(s) => assert!(!s.contains('.'), "decimal leaked: {s}"),
            Value::Array(items) => items.iter().for_each(scan),
            Value::Object(map) => map.values().for_each(scan),
            _ => {}
        }
    }
    scan(&a["results"]);
}
