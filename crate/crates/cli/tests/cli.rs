use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use abx_core::embed::stub::{StubConfig, StubServer};
use abx_core::report::REPORT_SCHEMA;
use serde_json::Value;
use tempfile::TempDir;

fn abx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_abx"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("ABX_EMBED_ENDPOINT")
        .output()
        .expect("abx runs")
}

fn ok(args: &[&str]) -> Output {
    let out = abx(args);
    assert!(
        out.status.success(),
        "abx {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small synthetic cohort: 150 cultures, dim 8, two antibiotics.
fn synth(dir: &Path) {
    ok(&["synth", "--n", "150", "--dim", "8", "--n-antibiotics", "2", "--seed", "3", "--out-dir", s(dir)]);
}

fn evaluate(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["evaluate", "--data-dir", s(data), "--out-dir", s(out), "--k", "3", "--seed", "5"];
    args.extend_from_slice(extra);
    abx(&args)
}

fn read(p: PathBuf) -> String {
    fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn help_exits_zero_and_bad_flags_exit_one() {
    assert_eq!(abx(&["--help"]).status.code(), Some(0));
    assert_eq!(abx(&["evaluate", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(abx(&["evaluate", "--k", "ten"]).status.code(), Some(1));
    assert_eq!(abx(&[]).status.code(), Some(1));
}

#[test]
fn missing_store_exits_two_and_names_the_path() {
    let dir = TempDir::new().unwrap();
    synth(dir.path());
    let store = dir.path().join("embeddings.abxe");
    fs::remove_file(&store).unwrap();
    let out = evaluate(dir.path(), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(s(&store)), "{stderr}");
}

#[test]
fn nothing_evaluable_exits_two() {
    let dir = TempDir::new().unwrap();
    synth(dir.path());
    let out = evaluate(dir.path(), dir.path(), &["--antibiotics", "VANCOMYCIN"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn report_validates_against_the_schema_and_figures_rerender() {
    let dir = TempDir::new().unwrap();
    synth(dir.path());
    let out = dir.path().join("out");
    assert!(evaluate(dir.path(), &out, &[]).status.success());

    let schema: Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let report: Value = serde_json::from_str(&read(out.join("report.json"))).unwrap();
    let errors: Vec<String> = validator.iter_errors(&report).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");

    let models = report["models"].as_array().unwrap();
    assert_eq!(models.len(), 2);
    let cells: usize = models.iter().map(|m| m["antibiotics"].as_array().unwrap().len()).sum();
    assert_eq!(cells, 4);
    let csv = read(out.join("figure.csv"));
    assert_eq!(csv.lines().count(), 1 + cells * 2);

    let again = dir.path().join("again");
    ok(&["report", "--report", s(&out.join("report.json")), "--out-dir", s(&again)]);
    assert_eq!(read(again.join("figure.csv")), csv);
    assert_eq!(read(again.join("figure.svg")), read(out.join("figure.svg")));

    let cohort: Value = serde_json::from_str(&read(out.join("cohort_summary.json"))).unwrap();
    assert_eq!(cohort["cultures_total"], 150);
}

#[test]
fn hash_mode_reproduces_the_synthetic_store() {
    let dir = TempDir::new().unwrap();
    synth(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(evaluate(dir.path(), &a, &["--model", "gbt"]).status.success());
    assert!(evaluate(dir.path(), &b, &["--model", "gbt", "--embed-mode", "hash", "--dim", "8"])
        .status
        .success());
    assert_eq!(read(a.join("report.json")), read(b.join("report.json")));
}

#[test]
fn remote_mode_against_the_stub_matches_hash_mode() {
    let dir = TempDir::new().unwrap();
    synth(dir.path());
    let server = StubServer::start("127.0.0.1:0", StubConfig { dim: 8, seed: 0, ..StubConfig::default() }).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(evaluate(dir.path(), &a, &["--model", "gbt"]).status.success());
    let url = server.url();
    let out = evaluate(dir.path(), &b, &["--model", "gbt", "--embed-mode", "remote", "--endpoint", &url]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(a.join("figure.csv")), read(b.join("figure.csv")));
    let report: Value = serde_json::from_str(&read(b.join("report.json"))).unwrap();
    assert_eq!(report["config"]["embedding_model_id"], "hash-v1-stub");
}

#[test]
fn embed_then_evaluate_from_the_written_store() {
    let dir = TempDir::new().unwrap();
    synth(dir.path());
    let store = dir.path().join("rehashed.abxe");
    ok(&["embed", "--data-dir", s(dir.path()), "--dim", "8", "--antibiotics", "CEFTRIAXONE", "--out", s(&store)]);
    let out = dir.path().join("out");
    let run = evaluate(
        dir.path(),
        &out,
        &["--model", "gbt", "--antibiotics", "CEFTRIAXONE", "--store", s(&store)],
    );
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
}

#[test]
fn ingest_writes_the_fixture_cohort_summary() {
    let fixture: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "core", "tests", "fixtures", "cohort"].iter().collect();
    let out = TempDir::new().unwrap();
    ok(&["ingest", "--data-dir", s(&fixture), "--out-dir", s(out.path())]);
    let got: Value = serde_json::from_str(&read(out.path().join("cohort_summary.json"))).unwrap();
    let expected: Value = serde_json::from_str(&read(fixture.join("expected.json"))).unwrap();
    for key in ["cultures_total", "cultures_included", "subjects", "notes_per_subject_median"] {
        assert_eq!(got[key], expected["cohort"][key], "{key}");
    }
}

#[test]
fn check_service_passes_on_the_stub_and_fails_without_a_server() {
    let server = StubServer::start("127.0.0.1:0", StubConfig::default()).unwrap();
    let out = ok(&["check-service", "--endpoint", &server.url()]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS ")).count(), 5, "{stdout}");

    let port = {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        listener.local_addr().unwrap().port()
    };
    let out = abx(&["check-service", "--endpoint", &format!("http://127.0.0.1:{port}"), "--timeout", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(abx(&["check-service"]).status.code(), Some(2));
}
