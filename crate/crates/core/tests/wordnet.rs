//! Checks against the full English database when it is present under
//! `data/wordnet` (or `$RATIONALE_AUDIT_DATA/wordnet`).

use std::path::PathBuf;

use rationale_audit::perturbation::{synonymy_filter, WnPos, WordNet};

fn database() -> Option<WordNet> {
    let root = std::env::var_os("RATIONALE_AUDIT_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"));
    let dir = root.join("wordnet");
    if !dir.join("index.noun").exists() {
        eprintln!("skipping: no database at {}", dir.display());
        return None;
    }
    Some(WordNet::load(&dir).unwrap())
}

#[test]
fn accepted_replacements_share_a_synset_member() {
    let Some(wn) = database() else { return };
    assert!(synonymy_filter(&wn, "piece", "slice"));
    assert!(synonymy_filter(&wn, "use", "usage"));
    assert!(synonymy_filter(&wn, "watches", "watch"));
    assert!(synonymy_filter(&wn, "story", "narrative"));
    assert!(!synonymy_filter(&wn, "piece", "banana"));
    assert!(!synonymy_filter(&wn, "piece", "qwzx"));
}

#[test]
fn base_forms() {
    let Some(wn) = database() else { return };
    assert_eq!(wn.morphy("watches", WnPos::Verb), ["watch"]);
    assert_eq!(wn.morphy("geese", WnPos::Noun), ["goose"]);
    assert!(wn.morphy("bigger", WnPos::Adj).contains(&"big".to_string()));
    assert!(wn.morphy("quickly", WnPos::Noun).is_empty());
}
