//! Small generated corpora and vector files with the same on-disk formats as
//! the real data. Used by tests and for smoke-running the pipeline.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{Corpus, LexiconTagger, Sentence, Split};
use crate::perturbation::WnPos;
use crate::{Error, Result};

/// Adjectives by label, most negative first.
pub const ADJECTIVES: [&[&str]; 5] = [
    &["awful", "terrible", "horrible", "dreadful"],
    &["dull", "weak", "boring", "tedious"],
    &["ordinary", "average", "modest", "routine"],
    &["good", "pleasant", "nice", "solid"],
    &["brilliant", "superb", "wonderful", "excellent"],
];
pub const NOUNS: [&str; 10] = [
    "film", "movie", "story", "plot", "cast", "script", "picture", "piece", "drama", "comedy",
];
pub const VERBS: [&str; 4] = ["is", "seems", "feels", "looks"];
pub const ADVERBS: [&str; 4] = ["very", "really", "quite", "rather"];
pub const DETERMINERS: [&str; 3] = ["the", "this", "a"];
pub const EXTRA_VERBS: [&str; 4] = ["watch", "enjoy", "remember", "use"];

#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            train: 400,
            validation: 80,
            test: 80,
            seed: 0,
        }
    }
}

fn sentence(rng: &mut ChaCha8Rng) -> (Vec<String>, u8) {
    let label = rng.random_range(0..5u8);
    let adj = *ADJECTIVES[usize::from(label)].choose(rng).expect("nonempty");
    let mut words: Vec<&str> = vec![
        DETERMINERS.choose(rng).expect("nonempty"),
        NOUNS.choose(rng).expect("nonempty"),
    ];
    if rng.random_bool(0.4) {
        words.extend(["of", "the", NOUNS.choose(rng).expect("nonempty")]);
    }
    words.push(VERBS.choose(rng).expect("nonempty"));
    if rng.random_bool(0.5) {
        words.push(ADVERBS.choose(rng).expect("nonempty"));
    }
    words.push(adj);
    if rng.random_bool(0.3) {
        words.extend(["to", EXTRA_VERBS.choose(rng).expect("nonempty")]);
    }
    words.push(".");
    let mut tokens: Vec<String> = words.into_iter().map(str::to_string).collect();
    let first = tokens[0].clone();
    let mut chars = first.chars();
    if let Some(c) = chars.next() {
        tokens[0] = c.to_uppercase().chain(chars).collect();
    }
    (tokens, label)
}

/// Generates a tagged corpus; sentence ids follow train, validation, test.
pub fn corpus(spec: SyntheticSpec) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tagger = LexiconTagger::bundled();
    let mut next_id = 0;
    let mut split = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Sentence> {
        (0..n)
            .map(|_| {
                let (tokens, label) = sentence(rng);
                let pos = tagger.tag(&tokens);
                let s = Sentence {
                    id: next_id,
                    tokens,
                    pos,
                    label,
                };
                next_id += 1;
                s
            })
            .collect()
    };
    let train = split(spec.train, &mut rng);
    let validation = split(spec.validation, &mut rng);
    let test = split(spec.test, &mut rng);
    Corpus { train, validation, test }
}

/// Every word the generator can emit (lowercase), sorted.
pub fn vocabulary() -> Vec<String> {
    let mut words: Vec<String> = ADJECTIVES
        .iter()
        .flat_map(|g| g.iter())
        .chain(&NOUNS)
        .chain(&VERBS)
        .chain(&ADVERBS)
        .chain(&DETERMINERS)
        .chain(&EXTRA_VERBS)
        .chain(&["of", "to", "."])
        .map(|w| w.to_string())
        .collect();
    words.sort();
    words.dedup();
    words
}

/// Writes the corpus as bracketed trees (`train.txt`, `dev.txt`, `test.txt`).
/// Inner nodes carry the sentence label; only the root label is read back.
pub fn write_sst_trees(corpus: &Corpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for split in Split::ALL {
        let name = match split {
            Split::Train => "train.txt",
            Split::Validation => "dev.txt",
            Split::Test => "test.txt",
        };
        let mut out = String::new();
        for s in corpus.split(split) {
            let _ = write!(out, "({}", s.label);
            for t in &s.tokens {
                let _ = write!(out, " (2 {t})");
            }
            out.push_str(")\n");
        }
        let path = dir.join(name);
        std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Random Gaussian vectors for `words`, one `word v1 .. vd` line each.
/// Adjectives get an extra component along a shared sentiment direction so
/// that vector similarity carries polarity.
pub fn embeddings_text(words: &[String], dim: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let direction: Vec<f32> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut out = String::new();
    for w in words {
        let polarity = ADJECTIVES
            .iter()
            .position(|g| g.contains(&w.as_str()))
            .map_or(0.0, |label| label as f32 - 2.0);
        out.push_str(w);
        for d in &direction {
            let noise: f32 = StandardNormal.sample(&mut rng);
            let _ = write!(out, " {:.5}", 0.3 * noise + 0.5 * polarity * d);
        }
        out.push('\n');
    }
    out
}

/// Synonym groups over the generated vocabulary (lemma forms).
pub const SYNONYMS: [(WnPos, &[&str]); 10] = [
    (WnPos::Noun, &["film", "movie", "picture"]),
    (WnPos::Noun, &["story", "plot"]),
    (WnPos::Adj, &["awful", "terrible", "dreadful", "horrible"]),
    (WnPos::Adj, &["dull", "boring", "tedious"]),
    (WnPos::Adj, &["ordinary", "average", "routine"]),
    (WnPos::Adj, &["good", "nice", "pleasant"]),
    (WnPos::Adj, &["brilliant", "superb", "wonderful", "excellent"]),
    (WnPos::Verb, &["seem", "look", "appear"]),
    (WnPos::Verb, &["enjoy", "like"]),
    (WnPos::Verb, &["remember", "recall"]),
];

/// A small lexical database in WordNet file format covering [`SYNONYMS`].
pub fn write_wordnet(dir: &Path) -> Result<()> {
    crate::perturbation::write_database(dir, &SYNONYMS)
}

/// Stub proposer lists (`word<TAB>candidates`): every group member proposes
/// the other members, and every other member first proposes an unrelated
/// word that the synonymy check has to reject.
pub fn proposals_tsv() -> String {
    let mut out = String::from("*\tthing stuff\n");
    for (_, group) in SYNONYMS {
        for (i, w) in group.iter().enumerate() {
            let mut cands: Vec<&str> = Vec::new();
            if i % 2 == 1 {
                cands.push("banana");
            }
            cands.extend(group.iter().filter(|o| *o != w));
            let _ = writeln!(out, "{w}\t{}", cands.join(" "));
        }
    }
    out
}
