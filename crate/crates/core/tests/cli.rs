use std::path::Path;
use std::process::{Command, Output};

fn qspec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qspec"))
        .args(args)
        .arg("--dir")
        .arg(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("qspec runs")
}

const SMALL: [&str; 4] = ["--set", "synthetic.lookup_intents=1", "--set", "synthetic.exploratory_intents=1"];

#[test]
fn stages_chain_through_the_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = qspec(dir, &[&["ingest"][..], &SMALL].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // Later stages pick the saved run.conf up without repeating the overrides.
    for stage in ["graph", "related", "mine", "labels"] {
        let out = qspec(dir, &[stage]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let labels = std::fs::read_to_string(dir.join("labels.tsv")).unwrap();
    let truth = std::fs::read_to_string(dir.join("truth.tsv")).unwrap();
    let anchors: Vec<(&str, &str)> = truth
        .lines()
        .map(|l| l.split('\t').collect::<Vec<_>>())
        .filter(|f| f[3] == "true")
        .map(|f| (f[0], f[1]))
        .collect();
    assert_eq!(anchors.len(), 2);
    for (query, label) in anchors {
        assert!(labels.lines().any(|l| l.starts_with(&format!("{query}\t{label}\t"))), "{query} not labeled {label}");
    }
}

#[test]
fn hitting_times_print_one_row_per_pair() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(qspec(tmp.path(), &[&["ingest"][..], &SMALL].concat()).status.success());
    let out = qspec(tmp.path(), &["hitting-times", "--horizon", "6"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(!text.is_empty());
    for line in text.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        let h: f64 = f[2].parse().unwrap();
        assert!(f[0] != f[1] && h > 0.0 && h <= 6.0, "{line}");
    }
}

#[test]
fn missing_artifact_names_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = qspec(tmp.path(), &["mine"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage mine") && err.contains("missing artifact"), "{err}");
}

#[test]
fn bad_override_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = qspec(tmp.path(), &["ingest", "--set", "walk.horizon=zero"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("walk.horizon"));
}
