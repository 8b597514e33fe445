use std::path::{Path, PathBuf};

use rationale_audit::corpus::Sentence;
use rationale_audit::perturbation::{propose_replacements, BertMlm, Proposer};
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    text: String,
    ids: Vec<u32>,
    mask_at: usize,
    logits: Vec<f32>,
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny-bert")
}

fn cases() -> Vec<Case> {
    let text = std::fs::read_to_string(fixture().join("expected.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

#[test]
fn tokenizer_ids_match_reference() {
    let model = BertMlm::load(&fixture()).unwrap();
    for c in cases() {
        assert_eq!(model.tokenizer().encode(&c.text), c.ids, "{}", c.text);
    }
}

#[test]
fn masked_logits_match_reference() {
    let model = BertMlm::load(&fixture()).unwrap();
    for c in cases() {
        let mut ids = c.ids.clone();
        ids[c.mask_at] = model.tokenizer().mask_id();
        let got = model.logits_at(&ids, c.mask_at);
        let diff = max_abs_diff(&got, &c.logits);
        assert!(diff < 1e-4, "{}: max diff {diff}", c.text);
    }
}

#[test]
fn half_precision_and_legacy_names_load() {
    let model = BertMlm::load(&fixture().join("f16")).unwrap();
    for c in cases() {
        let mut ids = c.ids.clone();
        ids[c.mask_at] = model.tokenizer().mask_id();
        let diff = max_abs_diff(&model.logits_at(&ids, c.mask_at), &c.logits);
        assert!(diff < 0.05, "{}: max diff {diff}", c.text);
    }
}

#[test]
fn proposals_are_deterministic_and_filtered() {
    let model = BertMlm::load(&fixture()).unwrap();
    let tokens: Vec<String> = "A jacked-up piece of action moviemaking .".split(' ').map(String::from).collect();
    let s = Sentence::new(0, tokens.clone(), vec!["NN".into(); tokens.len()], 3).unwrap();
    let raw = model.propose(&tokens, 2, 10).unwrap();
    assert_eq!(raw.len(), 10);
    assert!(raw.windows(2).all(|w| w[0].score >= w[1].score));
    assert_eq!(raw, model.propose(&tokens, 2, 10).unwrap());
    let kept = propose_replacements(&model, &s, 2, 68).unwrap();
    assert!(!kept.is_empty());
    for c in &kept {
        assert!(c.word.chars().all(char::is_alphabetic) && c.word != "piece", "{}", c.word);
    }
    assert!(model.propose(&tokens, 2, 0).unwrap().is_empty());
    assert!(model.id().starts_with("bert-mlm:"));
}

#[test]
fn missing_weights_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    for f in ["config.json", "vocab.txt"] {
        std::fs::copy(fixture().join(f), dir.path().join(f)).unwrap();
    }
    let err = BertMlm::load(dir.path()).unwrap_err().to_string();
    assert!(err.contains("model.safetensors"), "{err}");
}
