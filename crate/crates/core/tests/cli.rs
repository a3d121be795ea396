mod common;

use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use routeforge::gateway::{RecordingBackend, ScriptedBackend};
use routeforge::instance::{ProblemInstance, ProblemType};
use routeforge::pipeline::{solve_request, PipelineConfig};
use routeforge::spf::CaseLibrary;
use routeforge::verifier::{verify, CandidateSolution};

use common::*;

fn routeforge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_routeforge"))
        .args(args)
        .current_dir(dir)
        .env_remove("ROUTEFORGE_CONFIG")
        .env_remove("ROUTEFORGE_BACKEND")
        .env_remove("ROUTEFORGE_CASSETTE_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn lines(routes: &[usize]) -> String {
    CandidateSolution::from_model(vec![routes.to_vec()]).to_route_lines(None)
}

fn write_script(dir: &Path, name: &str, script: &[String]) {
    std::fs::write(dir.join(name), serde_json::to_string(script).unwrap()).unwrap();
}

fn write_instance(dir: &Path, name: &str, instance: &ProblemInstance) {
    std::fs::write(dir.join(name), instance.to_json()).unwrap();
}

#[test]
fn solve_replays_cassette_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let instance = apex();
    write_instance(d, "apex.json", &instance);
    let mut script = vec!["TSP_SINGLE".to_string(), lines(&[0, 2, 1, 4, 3, 0])];
    script.extend(std::iter::repeat_n(lines(&[0, 1, 2, 4, 3, 0]), 5));
    let recorder = RecordingBackend::new(ScriptedBackend::new(script));
    solve_request(&instance.request_text, &instance, &CaseLibrary::builtin(), &PipelineConfig::default(), &recorder)
        .unwrap();
    recorder.cassette().save(d.join("apex.cassette.json")).unwrap();

    let o = routeforge(d, &["solve", "--instance", "apex.json", "--cassette", "apex.cassette.json", "--svg", "-o", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("Status: SOLVED"));
    assert!(text.contains("Day 1: 0 -> 1 -> 2 -> 4 -> 3 -> 0"), "{text}");
    assert!(text.contains("Total cost: 15.66"), "{text}");
    let svg = std::fs::read_to_string(d.join("out/route.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("Total cost: 15.66"));
    let solution: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("out/solution.json")).unwrap()).unwrap();
    assert_eq!(solution["status"], "SOLVED");
    assert_eq!(solution["refinement_success"], true);
    assert!(d.join("out/trace.json").exists());
}

#[test]
fn missing_instance_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = routeforge(dir.path(), &["solve", "--instance", "nowhere.json", "--script", "s.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nowhere.json"), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(routeforge(dir.path(), &["plan"]).status.code(), Some(1));
}

#[test]
fn exhausted_budget_exits_2_and_keeps_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_instance(d, "apex.json", &apex());
    let mut script = vec!["TSP_SINGLE".to_string()];
    script.extend(std::iter::repeat_n(lines(&[0, 1, 0]), 5));
    write_script(d, "script.json", &script);
    let o = routeforge(d, &["solve", "--instance", "apex.json", "--script", "script.json", "-o", "out"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stdout(&o).contains("Status: INFEASIBLE_AFTER_BUDGET"));
    let trace: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("out/trace.json")).unwrap()).unwrap();
    let reports = trace["iterations"].as_array().unwrap().iter().filter(|i| i["report"].is_object()).count();
    assert_eq!(reports, 5);
}

#[test]
fn oracle_brute_on_unit_square() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let square = ProblemInstance {
        cities: points(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]),
        problem_type: ProblemType::TspSingle,
        depots: vec![0],
        days: 1,
        request_text: "Tour the square.".into(),
    };
    write_instance(d, "square.json", &square);
    let o = routeforge(d, &["oracle", "--instance", "square.json", "--method", "brute", "-o", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("Total cost: 4.00"), "{}", stdout(&o));
    let file: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("out/oracle.json")).unwrap()).unwrap();
    assert_eq!(file["method"], "brute");
    assert_eq!(file["kind"], "EXACT");
}

#[test]
fn oracle_rejects_oversized_exact_requests() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    write_instance(d, "big.json", &random_instance(&mut rng, ProblemType::TspSingle, 30, 1));
    for method in ["brute", "heldkarp"] {
        let o = routeforge(d, &["oracle", "--instance", "big.json", "--method", method, "-o", "out"]);
        assert_eq!(o.status.code(), Some(2), "{method}");
        assert!(stderr(&o).contains("too large") || stderr(&o).contains("at most"), "{}", stderr(&o));
    }
}

#[test]
fn oracle_heuristic_output_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let instance = random_instance(&mut rng, ProblemType::MultiDayDepotPerDay, 30, 3);
    write_instance(d, "big.json", &instance);
    let o = routeforge(d, &["oracle", "--instance", "big.json", "--method", "heuristic", "-o", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let file: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("out/oracle.json")).unwrap()).unwrap();
    assert_eq!(file["kind"], "HEURISTIC");
    let solution: CandidateSolution = serde_json::from_value(file["solution"].clone()).unwrap();
    assert!(verify(&solution, &reference_spf(&instance), &instance).feasible);
}

#[test]
fn evaluate_without_verification() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_instance(d, "apex.json", &apex());
    std::fs::write(d.join("suite.json"), r#"[{"id": "apex", "instance_path": "apex.json", "problem_type": "TSP_SINGLE"}]"#)
        .unwrap();
    write_script(d, "script.json", &["TSP_SINGLE".to_string(), lines(&[0, 2, 1, 4, 3, 0])]);
    let o = routeforge(
        d,
        &["evaluate", "--suite", "suite.json", "--script", "script.json", "--no-verify", "--no-iterate", "-o", "out"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("Problem Type | Without Iteration"));
    let records = std::fs::read_to_string(d.join("out/records.jsonl")).unwrap();
    let record: serde_json::Value = serde_json::from_str(records.lines().next().unwrap()).unwrap();
    assert_eq!(record["verification_mode"], "NONE");
    assert_eq!(record["feasible"], true);
    assert!(d.join("out/metrics.json").exists() && d.join("out/report.txt").exists());
}

#[test]
fn config_file_rejects_api_key() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_instance(d, "apex.json", &apex());
    std::fs::write(d.join("routeforge.toml"), "[backend]\napi_key = \"sk-nope\"\n").unwrap();
    let o = routeforge(d, &["solve", "--instance", "apex.json", "--config", "routeforge.toml"]);
    assert_eq!(o.status.code(), Some(1));
}
