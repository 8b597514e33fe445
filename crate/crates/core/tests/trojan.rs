//! Trojan pipeline on generated binary data.

use rationale_audit::corpus::{Corpus, Embeddings};
use rationale_audit::synthetic::{self, SyntheticSpec};
use rationale_audit::trojan::{self, decode_cue, CueScheme, PolarityLists, TrojanConfig};

fn setup() -> (Corpus, Embeddings) {
    let corpus = trojan::binarize(&synthetic::corpus(SyntheticSpec {
        train: 700,
        validation: 120,
        test: 150,
        seed: 11,
    }));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vectors.txt");
    std::fs::write(&path, synthetic::embeddings_text(&synthetic::vocabulary(), 16, 3)).unwrap();
    let tokens: Vec<&str> = corpus.iter().flat_map(|s| s.tokens.iter().map(String::as_str)).collect();
    let emb = Embeddings::load_for_tokens(&path, tokens).unwrap();
    (corpus, emb)
}

fn config() -> TrojanConfig {
    TrojanConfig {
        seed: 5,
        hidden_size: 16,
        epochs: 12,
        patience: 4,
        learning_rate: 5e-3,
        dropout: 0.1,
        ..TrojanConfig::default()
    }
}

#[test]
fn length_code_is_lossless_and_accuracy_optimal() {
    let (corpus, emb) = setup();
    let t = trojan::run(&corpus, &emb, CueScheme::Length, &PolarityLists::bundled(), &config()).unwrap();
    let r = &t.report;
    eprintln!("{}", trojan::render_text(std::slice::from_ref(r)));
    assert!(r.blackbox_accuracy > r.majority_baseline, "{r:?}");
    assert_eq!(r.decode_accuracy, Some(1.0));
    for s in &corpus.test {
        let y = t.blackbox.predict(&emb, &s.tokens);
        let sel = t.selector.select(&emb, &s.tokens, y);
        assert_eq!(decode_cue(&sel.rationale(&s.tokens)).unwrap(), y);
    }
    assert!(r.imitation_accuracy >= 0.99, "{r:?}");
    assert!((r.pipeline_accuracy - r.blackbox_accuracy).abs() <= 0.01, "{r:?}");
    assert!((r.shuffled_imitation_accuracy - 0.5).abs() < 0.25, "{r:?}");
    assert!(r.distillation_agreement >= 0.95, "{r:?}");
    assert!(r.student_first_token_rate > 0.95, "{r:?}");
    assert!(r.student_second_token_rate_negative > r.student_second_token_rate_positive, "{r:?}");
    assert!((r.distilled_pipeline_accuracy - r.pipeline_accuracy).abs() <= 0.02, "{r:?}");

    let again = trojan::run(&corpus, &emb, CueScheme::Length, &PolarityLists::bundled(), &config()).unwrap();
    assert_eq!(again.report, t.report);
}

#[test]
fn polarity_code_carries_the_prediction() {
    let (corpus, emb) = setup();
    let t = trojan::run(&corpus, &emb, CueScheme::Polarity, &PolarityLists::bundled(), &config()).unwrap();
    let r = &t.report;
    eprintln!("{}", trojan::render_text(std::slice::from_ref(r)));
    assert_eq!(r.decode_accuracy, None);
    assert!(r.imitation_accuracy >= 0.95, "{r:?}");
}

#[test]
fn rejects_five_way_labels() {
    let (_, emb) = setup();
    let raw = synthetic::corpus(SyntheticSpec::default());
    let err = trojan::run(&raw, &emb, CueScheme::Length, &PolarityLists::bundled(), &config()).unwrap_err();
    assert!(err.to_string().contains("binarized"), "{err}");
}
