//! End-to-end runs of the binary on generated data.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

const CONFIG: &str = "\
[corpus]
synthetic_train = 600
synthetic_validation = 80
synthetic_test = 100
[train]
hidden_size = 16
epochs = 12
patience = 12
learning_rate = 0.005
dropout = 0.1
lagrange_lr = 0.1
[study]
n_train = 1
n_test = 3
n_items = 10
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rationale-audit"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

/// Corpus, a trained CR model, perturbations and an audit, built once.
fn pipeline() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        std::fs::write(dir.join("run.toml"), CONFIG).unwrap();
        let c = ["--config", "run.toml"];
        ok(&dir, &[&c[..], &["prepare-corpus", "--synthetic", "--out", "corpus"]].concat());
        ok(&dir, &[&c[..], &["train", "--corpus", "corpus", "--model", "cr", "--out", "cr"]].concat());
        ok(
            &dir,
            &[
                "perturb",
                "--corpus",
                "corpus",
                "--wordnet",
                "corpus/wordnet",
                "--proposer",
                "stub:corpus/proposals.tsv",
                "--out",
                "pert",
            ],
        );
        ok(
            &dir,
            &[&c[..], &["audit", "--checkpoint", "cr/model.ckpt", "--corpus", "corpus", "--perturbations", "pert", "--out", "audit"]].concat(),
        );
        dir
    })
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn every_output_dir_has_a_manifest() {
    let dir = pipeline();
    for sub in ["corpus", "cr", "pert", "audit"] {
        let m = json(&dir.join(sub).join("manifest.json"));
        assert!(!m["outputs"].as_object().unwrap().is_empty(), "{sub}");
    }
    let m = json(&dir.join("audit/manifest.json"));
    assert_eq!(m["command"], "audit");
    assert!(m["outputs"].get("report/report.json").is_some());
    let eval = json(&dir.join("cr/eval.json"));
    assert!(eval["test"]["accuracy"].as_f64().unwrap() > 0.6, "{eval}");
}

#[test]
fn matching_study_and_scoring() {
    let dir = pipeline();
    ok(dir, &["--config", "run.toml", "study", "matching", "--audit", "audit", "--out", "matching"]);
    let form = json(&dir.join("matching/form.json"));
    assert_eq!(form["examples"].as_array().unwrap().len(), 1);
    assert_eq!(form["questions"].as_array().unwrap().len(), 3);
    let html = std::fs::read_to_string(dir.join("matching/form.html")).unwrap();
    assert!(html.contains("<textarea"));
    assert!(!html.contains("\"answers\""));

    let key = json(&dir.join("matching/key.json"));
    let mut csv = String::from("participant_id,question_id,choice\n");
    for (q, c) in key["answers"].as_object().unwrap() {
        csv += &format!("p1,{q},{}\n", c.as_str().unwrap());
    }
    std::fs::write(dir.join("responses.csv"), csv).unwrap();
    ok(dir, &["score", "--responses", "responses.csv", "--key", "matching/key.json", "--out", "score"]);
    let score = json(&dir.join("score/score.json"));
    assert_eq!(score["accuracy"].as_f64(), Some(1.0));
    assert_eq!(score["n_total"].as_u64(), Some(3));
}

#[test]
fn quality_study_and_report() {
    let dir = pipeline();
    ok(dir, &["--config", "run.toml", "study", "quality", "--audit", "audit", "--out", "quality"]);
    let form = json(&dir.join("quality/form.json"));
    assert_eq!(form["items"].as_array().unwrap().len(), 10);
    ok(dir, &["report", "--audit", "audit", "--out", "report"]);
    let summary = std::fs::read_to_string(dir.join("report/summary.md")).unwrap();
    assert!(summary.contains("| cr |"), "{summary}");
}

#[test]
fn too_few_changes_for_a_matching_study_is_a_data_error() {
    let dir = pipeline();
    std::fs::write(dir.join("big.toml"), "[study]\nn_train = 100\nn_test = 100\n").unwrap();
    let out = run(dir, &["--config", "big.toml", "study", "matching", "--audit", "audit", "--out", "big"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn tampered_input_is_refused() {
    let dir = pipeline();
    let copy = dir.join("pert_copy");
    std::fs::create_dir_all(&copy).unwrap();
    for f in std::fs::read_dir(dir.join("pert")).unwrap() {
        let f = f.unwrap().path();
        std::fs::copy(&f, copy.join(f.file_name().unwrap())).unwrap();
    }
    let jsonl = copy.join("perturbations.jsonl");
    let text = std::fs::read_to_string(&jsonl).unwrap();
    std::fs::write(&jsonl, text.lines().skip(1).collect::<Vec<_>>().join("\n")).unwrap();
    let out = run(
        dir,
        &["audit", "--checkpoint", "cr/model.ckpt", "--corpus", "corpus", "--perturbations", "pert_copy", "--out", "tampered"],
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("perturbations.jsonl"));
}

#[test]
fn no_candidates_gives_an_empty_but_valid_report() {
    let dir = pipeline();
    std::fs::write(dir.join("none.tsv"), "*\t\n").unwrap();
    ok(
        dir,
        &["perturb", "--corpus", "corpus", "--wordnet", "corpus/wordnet", "--proposer", "stub:none.tsv", "--out", "pert_none"],
    );
    assert_eq!(std::fs::read_to_string(dir.join("pert_none/perturbations.jsonl")).unwrap().trim(), "");
    ok(
        dir,
        &["audit", "--checkpoint", "cr/model.ckpt", "--corpus", "corpus", "--perturbations", "pert_none", "--out", "audit_none"],
    );
    assert!(dir.join("audit_none/report/report.json").exists());
}

#[test]
fn training_is_reproducible() {
    let dir = pipeline();
    ok(dir, &["--config", "run.toml", "train", "--corpus", "corpus", "--model", "cr", "--out", "cr_again"]);
    let a = std::fs::read(dir.join("cr/metrics.jsonl")).unwrap();
    let b = std::fs::read(dir.join("cr_again/metrics.jsonl")).unwrap();
    assert_eq!(a, b);
    assert_eq!(std::fs::read(dir.join("cr/model.ckpt")).unwrap(), std::fs::read(dir.join("cr_again/model.ckpt")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), "[train]\nhiden_size = 3\n").unwrap();
    let out = run(d, &["--config", "bad.toml", "prepare-corpus", "--synthetic", "--out", "x"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("hiden_size"));

    assert_eq!(code(&run(d, &["prepare-corpus", "--synthetic"])), 1);
    assert_eq!(code(&run(d, &["no-such-command"])), 1);
    assert_eq!(code(&run(d, &["--help"])), 0);

    let out = run(d, &["train", "--corpus", "missing_corpus", "--model", "cr", "--out", "x"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing_corpus"));

    let dir = pipeline();
    for proposer in ["nonsense:x", "bert:no_such_model_dir"] {
        let out = run(
            dir,
            &["perturb", "--corpus", "corpus", "--wordnet", "corpus/wordnet", "--proposer", proposer, "--out", "bad_proposer"],
        );
        assert_eq!(code(&out), 1, "{proposer}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
