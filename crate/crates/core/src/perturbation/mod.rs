//! Single-word replacements: a masked-token proposer suggests words for an
//! eligible position and a lexical synonymy check keeps the first acceptable
//! one.

mod bert;
mod wordnet;

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bert::{BertMlm, WordPiece};
pub use wordnet::{write_database, WnPos, WordNet};

use crate::corpus::{LexiconTagger, Sentence, ELIGIBLE_TAGS};
use crate::{Error, Result};

pub const DEFAULT_CANDIDATES: usize = 30;

/// One scored word from a proposer, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub word: String,
    pub score: f64,
}

/// Suggests replacements for one masked position. Implementations must
/// return the same list for the same query.
pub trait Proposer: Send + Sync {
    /// Identifies the proposer and its weights in manifests.
    fn id(&self) -> String;
    fn propose(&self, tokens: &[String], position: usize, k: usize) -> Result<Vec<Proposal>>;
}

/// Fixed candidate lists, keyed by the lowercased masked word.
#[derive(Debug, Clone, Default)]
pub struct StubProposer {
    table: HashMap<String, Vec<String>>,
    fallback: Vec<String>,
    id: String,
}

impl StubProposer {
    /// Always proposes `words`, whatever is masked.
    pub fn constant<S: AsRef<str>>(words: &[S]) -> Self {
        let fallback: Vec<String> = words.iter().map(|w| w.as_ref().to_string()).collect();
        StubProposer {
            id: format!("stub:constant:{}", fallback.join(",")),
            fallback,
            table: HashMap::new(),
        }
    }

    /// Lines of `word<TAB>cand1 cand2 ...`; a `*` word sets the fallback list.
    pub fn from_tsv(text: &str) -> Self {
        let mut stub = StubProposer::default();
        for line in text.lines() {
            let Some((word, cands)) = line.split_once('\t') else { continue };
            let cands: Vec<String> = cands.split_whitespace().map(str::to_string).collect();
            if word == "*" {
                stub.fallback = cands;
            } else {
                stub.table.insert(word.to_lowercase(), cands);
            }
        }
        use sha2::Digest;
        stub.id = format!("stub:{}", hex::encode(&sha2::Sha256::digest(text.as_bytes())[..8]));
        stub
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_tsv(&text))
    }
}

impl Proposer for StubProposer {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn propose(&self, tokens: &[String], position: usize, k: usize) -> Result<Vec<Proposal>> {
        let word = tokens
            .get(position)
            .ok_or_else(|| Error::Validation(format!("position {position} outside sentence")))?;
        let list = self.table.get(&word.to_lowercase()).unwrap_or(&self.fallback);
        Ok(list
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, w)| Proposal {
                word: w.clone(),
                score: -(i as f64),
            })
            .collect())
    }
}

/// A candidate word and its 1-based rank after filtering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub word: String,
    pub rank: u32,
}

/// One accepted replacement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Perturbation {
    pub sentence_id: u32,
    pub position: usize,
    pub original: String,
    pub replacement: String,
    pub rank: u32,
    pub pos_tag: String,
}

impl Perturbation {
    pub fn validate(&self) -> Result<()> {
        if self.original.to_lowercase() == self.replacement.to_lowercase() {
            return Err(Error::Validation(format!(
                "sentence {}: replacement equals original '{}'",
                self.sentence_id, self.original
            )));
        }
        if !ELIGIBLE_TAGS.contains(&self.pos_tag.as_str()) {
            return Err(Error::Validation(format!(
                "sentence {}: tag {} is not eligible",
                self.sentence_id, self.pos_tag
            )));
        }
        if self.rank == 0 {
            return Err(Error::Validation(format!("sentence {}: rank must be at least 1", self.sentence_id)));
        }
        Ok(())
    }
}

/// Indices of tokens whose tag is eligible for replacement, ascending.
pub fn candidate_positions(sentence: &Sentence) -> Vec<usize> {
    sentence
        .pos
        .iter()
        .enumerate()
        .filter(|(_, t)| ELIGIBLE_TAGS.contains(&t.as_str()))
        .map(|(i, _)| i)
        .collect()
}

fn is_word(w: &str) -> bool {
    !w.is_empty() && w.chars().all(char::is_alphabetic)
}

/// Top `k` proposals for `position`, keeping whole alphabetic words that differ
/// from the original. May return fewer than `k`.
pub fn propose_replacements(proposer: &dyn Proposer, sentence: &Sentence, position: usize, k: usize) -> Result<Vec<Candidate>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let original = sentence
        .tokens
        .get(position)
        .ok_or_else(|| Error::Validation(format!("sentence {}: position {position} out of range", sentence.id)))?
        .to_lowercase();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for p in proposer.propose(&sentence.tokens, position, k)? {
        let lower = p.word.to_lowercase();
        if !is_word(&p.word) || lower == original || !seen.insert(lower.clone()) {
            continue;
        }
        out.push(Candidate {
            word: lower,
            rank: out.len() as u32 + 1,
        });
    }
    Ok(out)
}

/// True when the two words share a synset member. Unknown words never pass.
pub fn synonymy_filter(wordnet: &WordNet, original: &str, candidate: &str) -> bool {
    wordnet.synonymous(&original.to_lowercase(), &candidate.to_lowercase())
}

/// Gives `word` the capitalisation pattern of `model`.
pub fn match_case(model: &str, word: &str) -> String {
    let letters: Vec<char> = model.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.len() > 1 && letters.iter().all(|c| c.is_uppercase()) {
        word.to_uppercase()
    } else if model.chars().next().is_some_and(char::is_uppercase) {
        let mut chars = word.chars();
        chars.next().map_or_else(String::new, |c| c.to_uppercase().chain(chars).collect())
    } else {
        word.to_lowercase()
    }
}

/// Proposer and database used to build a perturbed set.
pub struct Perturber<'a> {
    pub proposer: &'a dyn Proposer,
    pub wordnet: &'a WordNet,
    pub candidates: usize,
}

impl Perturber<'_> {
    /// At most one replacement per eligible position: the best-ranked
    /// candidate that passes the synonymy check.
    pub fn perturb_sentence(&self, sentence: &Sentence) -> Result<Vec<Perturbation>> {
        let mut out = Vec::new();
        for position in candidate_positions(sentence) {
            let original = &sentence.tokens[position];
            let cands = propose_replacements(self.proposer, sentence, position, self.candidates)?;
            if let Some(c) = cands.into_iter().find(|c| synonymy_filter(self.wordnet, original, &c.word)) {
                out.push(Perturbation {
                    sentence_id: sentence.id,
                    position,
                    original: original.clone(),
                    replacement: match_case(original, &c.word),
                    rank: c.rank,
                    pos_tag: sentence.pos[position].clone(),
                });
            }
        }
        Ok(out)
    }

    /// Perturbations for every sentence, in sentence then position order.
    pub fn build_dataset(&self, sentences: &[Sentence]) -> Result<Vec<Perturbation>> {
        let per: Vec<Vec<Perturbation>> = sentences.par_iter().map(|s| self.perturb_sentence(s)).collect::<Result<_>>()?;
        Ok(per.into_iter().flatten().collect())
    }
}

/// The sentence with the replacement applied and re-tagged.
pub fn perturbed_sentence(original: &Sentence, p: &Perturbation, tagger: &LexiconTagger) -> Result<Sentence> {
    if p.sentence_id != original.id {
        return Err(Error::Integrity(format!(
            "perturbation for sentence {} applied to sentence {}",
            p.sentence_id, original.id
        )));
    }
    match original.tokens.get(p.position) {
        Some(t) if *t == p.original => {}
        other => {
            return Err(Error::Integrity(format!(
                "sentence {}: expected '{}' at {}, found {:?}",
                original.id, p.original, p.position, other
            )))
        }
    }
    let mut tokens = original.tokens.clone();
    tokens[p.position] = p.replacement.clone();
    let pos = tagger.tag(&tokens);
    Sentence::new(original.id, tokens, pos, original.label)
}

/// Records how a perturbed set was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationManifest {
    /// Corpus split the sentences came from.
    pub split: String,
    pub proposer: String,
    pub wordnet_version: String,
    pub tagger_version: String,
    pub candidates: usize,
    pub sentences: usize,
    pub perturbations: usize,
    pub created: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentence(tokens: &[&str], tags: &[&str]) -> Sentence {
        Sentence::new(
            7,
            tokens.iter().map(|t| t.to_string()).collect(),
            tags.iter().map(|t| t.to_string()).collect(),
            3,
        )
        .unwrap()
    }

    fn mini_wordnet() -> (tempfile::TempDir, WordNet) {
        let dir = tempfile::tempdir().unwrap();
        write_database(
            dir.path(),
            &[
                (WnPos::Noun, &["piece", "slice"]),
                (WnPos::Noun, &["film", "movie", "picture"]),
                (WnPos::Verb, &["watch", "observe"]),
            ],
        )
        .unwrap();
        let wn = WordNet::load(dir.path()).unwrap();
        (dir, wn)
    }

    #[test]
    fn eligible_positions_follow_tags() {
        let s = sentence(&["The", "good", "film", "is", "very", "."], &["DT", "JJ", "NN", "VBZ", "RB", "."]);
        assert_eq!(candidate_positions(&s), [1, 2, 3]);
        let p = sentence(&[".", "!"], &[".", "."]);
        assert!(candidate_positions(&p).is_empty());
    }

    #[test]
    fn stub_list_minus_original() {
        let s = sentence(&["A", "piece", "."], &["DT", "NN", "."]);
        let stub = StubProposer::constant(&["slice", "Piece", "part", "##s", "x-y", "slice", "bit"]);
        let got: Vec<String> = propose_replacements(&stub, &s, 1, 30).unwrap().into_iter().map(|c| c.word).collect();
        assert_eq!(got, ["slice", "part", "bit"]);
        assert!(propose_replacements(&stub, &s, 1, 0).unwrap().is_empty());
    }

    #[test]
    fn first_passing_candidate_wins() {
        let (_d, wn) = mini_wordnet();
        let s = sentence(&["A", "piece", "of", "Film", "."], &["DT", "NN", "IN", "NN", "."]);
        let stub = StubProposer::from_tsv("piece\tpart slice\nfilm\tbook movie picture\n");
        let p = Perturber {
            proposer: &stub,
            wordnet: &wn,
            candidates: 30,
        };
        let got = p.perturb_sentence(&s).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!((got[0].replacement.as_str(), got[0].rank), ("slice", 2));
        assert_eq!((got[1].replacement.as_str(), got[1].rank), ("Movie", 2));
        for g in &got {
            g.validate().unwrap();
        }
        let ps = perturbed_sentence(&s, &got[1], LexiconTagger::bundled()).unwrap();
        assert_eq!(ps.tokens, ["A", "piece", "of", "Movie", "."]);
        let diffs = s.tokens.iter().zip(&ps.tokens).filter(|(a, b)| a != b).count();
        assert_eq!(diffs, 1);
    }

    #[test]
    fn case_pattern_is_copied() {
        assert_eq!(match_case("Film", "movie"), "Movie");
        assert_eq!(match_case("SATs", "test"), "Test");
        assert_eq!(match_case("NASA", "agency"), "AGENCY");
        assert_eq!(match_case("film", "Movie"), "movie");
    }

    #[test]
    fn empty_input_gives_empty_dataset() {
        let (_d, wn) = mini_wordnet();
        let stub = StubProposer::constant(&["slice"]);
        let p = Perturber {
            proposer: &stub,
            wordnet: &wn,
            candidates: 30,
        };
        assert!(p.build_dataset(&[]).unwrap().is_empty());
    }
}
