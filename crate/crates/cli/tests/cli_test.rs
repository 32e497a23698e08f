//! End-to-end CLI behavior: exit codes, staged pipeline, idempotent reruns.

use std::path::{Path, PathBuf};
use std::process::Command;

use prodrome_core::simulator::{generate_synthetic_cohort, synthetic_taxonomy, SyntheticSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_prodrome"))
}

fn write_fixture(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let spec = SyntheticSpec {
        n_cases: 30,
        n_controls: 30,
        vocab_size: 10,
        seed: 42,
        ..SyntheticSpec::default()
    };
    let (patients, messages, _) = generate_synthetic_cohort(&spec).unwrap();
    let taxonomy = synthetic_taxonomy(spec.vocab_size);

    let messages_path = dir.join("messages.ndjson");
    let patients_path = dir.join("patients.ndjson");
    let taxonomy_path = dir.join("taxonomy.json");
    let lines: Vec<String> = messages
        .iter()
        .map(|m| serde_json::to_string(m).unwrap())
        .collect();
    std::fs::write(&messages_path, lines.join("\n") + "\n").unwrap();
    let lines: Vec<String> = patients
        .iter()
        .map(|p| serde_json::to_string(p).unwrap())
        .collect();
    std::fs::write(&patients_path, lines.join("\n") + "\n").unwrap();
    std::fs::write(
        &taxonomy_path,
        serde_json::to_string_pretty(&taxonomy).unwrap(),
    )
    .unwrap();
    (messages_path, patients_path, taxonomy_path)
}

#[test]
fn unknown_flag_is_usage_error() {
    let output = bin().args(["--definitely-not-a-flag"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.to_lowercase().contains("usage") || stderr.contains("error"));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let output = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn missing_messages_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let output = bin()
        .args([
            "ingest",
            "--messages",
            "/no/such/messages.ndjson",
            "--patients",
            "/no/such/patients.ndjson",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("/no/such/messages.ndjson"),
        "stderr must name the missing file: {stderr}"
    );
}

#[test]
fn bad_override_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let output = bin()
        .args(["simulate", "--set", "nonexistent.knob=1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn staged_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let (messages, patients, taxonomy) = write_fixture(dir.path());
    let small = [
        "--set",
        "gnn.epochs=30",
        "--set",
        "en.n_lambdas=8",
        "--set",
        "cohort.strata_keys=[\"sex\"]",
    ];

    let run = |args: &[&str]| {
        let output = bin()
            .args(args)
            .args(small)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(
            output.status.success(),
            "command {:?} failed: {}",
            args,
            String::from_utf8_lossy(&output.stderr)
        );
        output
    };

    run(&[
        "ingest",
        "--messages",
        messages.to_str().unwrap(),
        "--patients",
        patients.to_str().unwrap(),
    ]);
    assert!(out.join("cohort.json").exists());
    assert!(out.join("shortfall.json").exists());

    run(&[
        "annotate",
        "--messages",
        messages.to_str().unwrap(),
        "--taxonomy",
        taxonomy.to_str().unwrap(),
    ]);
    let annotated = out.join("annotated.ndjson");
    assert!(annotated.exists());
    // lexicon backend must have labeled the trigger phrases
    let body = std::fs::read_to_string(&annotated).unwrap();
    assert!(body.contains("\"sub2_id\""));

    run(&[
        "graph",
        "--annotated",
        annotated.to_str().unwrap(),
        "--cohort",
        out.join("cohort.json").to_str().unwrap(),
        "--taxonomy",
        taxonomy.to_str().unwrap(),
    ]);
    assert!(out.join("graph/patient_symptom.csv").exists());
    assert!(out.join("graph/centrality.csv").exists());

    run(&[
        "train-gnn",
        "--annotated",
        annotated.to_str().unwrap(),
        "--cohort",
        out.join("cohort.json").to_str().unwrap(),
        "--taxonomy",
        taxonomy.to_str().unwrap(),
    ]);
    assert!(out.join("model.json").exists());

    run(&[
        "fit-en",
        "--annotated",
        annotated.to_str().unwrap(),
        "--cohort",
        out.join("cohort.json").to_str().unwrap(),
    ]);
    assert!(out.join("en_fit.json").exists());
    assert!(out.join("en_coefficients.csv").exists());

    run(&[
        "score",
        "--annotated",
        annotated.to_str().unwrap(),
        "--cohort",
        out.join("cohort.json").to_str().unwrap(),
        "--taxonomy",
        taxonomy.to_str().unwrap(),
        "--model",
        out.join("model.json").to_str().unwrap(),
        "--en-fit",
        out.join("en_fit.json").to_str().unwrap(),
    ]);
    assert!(out.join("scores.csv").exists());
    assert!(out.join("proximity_curves.csv").exists());

    run(&[
        "calibrate",
        "--annotated",
        annotated.to_str().unwrap(),
        "--patients",
        patients.to_str().unwrap(),
        "--scores",
        out.join("scores.csv").to_str().unwrap(),
    ]);
    assert!(out.join("screeners.json").exists());

    run(&[
        "screen",
        "--annotated",
        annotated.to_str().unwrap(),
        "--cohort",
        out.join("cohort.json").to_str().unwrap(),
        "--screeners",
        out.join("screeners.json").to_str().unwrap(),
        "--window",
        "30",
    ]);
    let flags = std::fs::read_to_string(out.join("flags.csv")).unwrap();
    assert!(flags.starts_with("patient_id,flag,prob,reason"));
    assert!(flags.lines().count() > 1);
}

#[test]
fn rerunning_a_subcommand_overwrites_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let (messages, patients, _) = write_fixture(dir.path());
    for _ in 0..2 {
        let output = bin()
            .args([
                "ingest",
                "--messages",
                messages.to_str().unwrap(),
                "--patients",
                patients.to_str().unwrap(),
                "--set",
                "cohort.strata_keys=[\"sex\"]",
            ])
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(output.status.success());
    }
    let first = std::fs::read(out.join("cohort.json")).unwrap();
    let output = bin()
        .args([
            "ingest",
            "--messages",
            messages.to_str().unwrap(),
            "--patients",
            patients.to_str().unwrap(),
            "--set",
            "cohort.strata_keys=[\"sex\"]",
        ])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let second = std::fs::read(out.join("cohort.json")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn simulate_from_config_file_produces_complete_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg_path = dir.path().join("cfg.json");
    // the bundled defaults, shrunk for test speed
    let config = prodrome_core::config::AppConfig::default()
        .with_override("synthetic.n_cases=40")
        .unwrap()
        .with_override("synthetic.n_controls=40")
        .unwrap()
        .with_override("gnn.epochs=40")
        .unwrap();
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

    let output = bin()
        .args(["simulate", "--config", cfg_path.to_str().unwrap(), "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "complete");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let cells = summary["n_cells"].as_u64().unwrap() as usize;
    let skips = summary["skipped"].as_array().unwrap().len();
    assert_eq!(cells + skips, 18);
}

#[test]
fn simulate_failure_marks_manifest_incomplete() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    // an infeasible synthetic span forces a data error after out_dir exists
    let output = bin()
        .args([
            "simulate",
            "--set",
            "synthetic.span_end=\"2024-08-01\"",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "incomplete");
}
