//! Lexicon-driven Penn Treebank tagger with a handful of contextual repairs.
//!
//! The lexicon maps a word to its tags, most frequent first. Words missing
//! from it are guessed from shape and suffix, then a left-to-right pass fixes
//! the usual noun/verb confusions using the neighbouring tags.

use std::collections::HashMap;
use std::io::Read;
use std::sync::OnceLock;

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};

static LEXICON_GZ: &[u8] = include_bytes!("../../data/brill-lexicon.tsv.gz");

/// Tags whose tokens may be replaced by the perturbation step.
pub const ELIGIBLE_TAGS: [&str; 9] = ["NN", "NNS", "VB", "VBG", "VBD", "VBN", "VBP", "VBZ", "JJ"];

pub const TAGGER_VERSION: &str = "lexicon-rules-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoarsePos {
    Noun,
    Verb,
    Adjective,
    Adverb,
    ProperNoun,
    Pronoun,
    Other,
}

impl CoarsePos {
    /// Column order used by every POS table.
    pub const ALL: [CoarsePos; 7] = [
        CoarsePos::Noun,
        CoarsePos::Verb,
        CoarsePos::Adjective,
        CoarsePos::Adverb,
        CoarsePos::ProperNoun,
        CoarsePos::Pronoun,
        CoarsePos::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            CoarsePos::Noun => "noun",
            CoarsePos::Verb => "verb",
            CoarsePos::Adjective => "adjective",
            CoarsePos::Adverb => "adverb",
            CoarsePos::ProperNoun => "proper-noun",
            CoarsePos::Pronoun => "pronoun",
            CoarsePos::Other => "other",
        }
    }
}

pub fn coarse_pos(tag: &str) -> CoarsePos {
    match tag {
        "NN" | "NNS" => CoarsePos::Noun,
        "NNP" | "NNPS" => CoarsePos::ProperNoun,
        t if t.starts_with("VB") => CoarsePos::Verb,
        t if t.starts_with("JJ") => CoarsePos::Adjective,
        t if t.starts_with("RB") => CoarsePos::Adverb,
        t if t.starts_with("PRP") || t.starts_with("WP") => CoarsePos::Pronoun,
        _ => CoarsePos::Other,
    }
}

/// Tokens whose tag does not depend on the lexicon.
fn fixed_tag(token: &str) -> Option<&'static str> {
    Some(match token {
        "." | "!" | "?" => ".",
        "," => ",",
        ":" | ";" | "--" | "-" | "..." => ":",
        "``" | "`" => "``",
        "''" | "'" | "\"" => "''",
        "-LRB-" | "(" | "[" | "{" | "-LCB-" | "-LSB-" => "-LRB-",
        "-RRB-" | ")" | "]" | "}" | "-RCB-" | "-RSB-" => "-RRB-",
        "$" | "#" => "$",
        "n't" | "not" => "RB",
        "'re" | "'m" | "'ve" => "VBP",
        "'ll" | "'d" | "wo" | "ca" => "MD",
        "I" | "i" => "PRP",
        _ => return None,
    })
}

const SUFFIX_TAGS: [(&str, &str); 22] = [
    ("ness", "NN"),
    ("ment", "NN"),
    ("tion", "NN"),
    ("sion", "NN"),
    ("ship", "NN"),
    ("ism", "NN"),
    ("ist", "NN"),
    ("ity", "NN"),
    ("able", "JJ"),
    ("ible", "JJ"),
    ("ous", "JJ"),
    ("ful", "JJ"),
    ("less", "JJ"),
    ("ish", "JJ"),
    ("ive", "JJ"),
    ("ic", "JJ"),
    ("al", "JJ"),
    ("est", "JJS"),
    ("ing", "VBG"),
    ("ed", "VBD"),
    ("ly", "RB"),
    ("s", "NNS"),
];

fn is_number(token: &str) -> bool {
    let mut digits = 0;
    for c in token.chars() {
        if c.is_ascii_digit() {
            digits += 1;
        } else if !matches!(c, '.' | ',' | '-' | '/' | ':' | '%') {
            return false;
        }
    }
    digits > 0
}

fn guess_unknown(token: &str, sentence_initial: bool) -> &'static str {
    if is_number(token) {
        return "CD";
    }
    if !token.chars().any(char::is_alphanumeric) {
        return "SYM";
    }
    let first_upper = token.chars().next().is_some_and(char::is_uppercase);
    if first_upper && !sentence_initial {
        return if token.len() > 3 && token.ends_with('s') && !token.ends_with("ss") {
            "NNPS"
        } else {
            "NNP"
        };
    }
    if token.contains('-') {
        return "JJ";
    }
    let lower = token.to_lowercase();
    SUFFIX_TAGS
        .iter()
        .find(|(suffix, _)| lower.len() > suffix.len() + 2 && lower.ends_with(suffix))
        .map_or("NN", |(_, tag)| tag)
}

const BE_OR_HAVE: [&str; 14] = [
    "be", "is", "are", "was", "were", "been", "being", "am", "'s", "has", "have", "had", "having", "'ve",
];

#[derive(Debug, Clone)]
pub struct LexiconTagger {
    lexicon: HashMap<String, Vec<&'static str>>,
}

fn intern_tag(tag: &str) -> Option<&'static str> {
    const TAGS: [&str; 45] = [
        "CC", "CD", "DT", "EX", "FW", "IN", "JJ", "JJR", "JJS", "LS", "MD", "NN", "NNS", "NNP", "NNPS", "PDT", "POS",
        "PRP", "PRP$", "RB", "RBR", "RBS", "RP", "SYM", "TO", "UH", "VB", "VBD", "VBG", "VBN", "VBP", "VBZ", "WDT",
        "WP", "WP$", "WRB", ".", ",", ":", "``", "''", "$", "#", "-LRB-", "-RRB-",
    ];
    let tag = match tag {
        "NP" => "NNP",
        "NPS" => "NNPS",
        "!" | "?" => ".",
        "(" => "-LRB-",
        ")" => "-RRB-",
        t => t,
    };
    TAGS.iter().copied().find(|t| *t == tag)
}

impl LexiconTagger {
    /// Tagger over the bundled lexicon. Decompressed once per process.
    pub fn bundled() -> &'static LexiconTagger {
        static TAGGER: OnceLock<LexiconTagger> = OnceLock::new();
        TAGGER.get_or_init(|| {
            let mut text = String::new();
            GzDecoder::new(LEXICON_GZ)
                .read_to_string(&mut text)
                .expect("bundled lexicon is valid gzip");
            LexiconTagger::from_tsv(&text)
        })
    }

    /// Lexicon lines look like `word<TAB>TAG TAG ...`, most likely tag first.
    pub fn from_tsv(text: &str) -> Self {
        let mut lexicon = HashMap::new();
        for line in text.lines() {
            let Some((word, tags)) = line.split_once('\t') else { continue };
            let mut parsed: Vec<&'static str> = Vec::new();
            for t in tags.split_whitespace() {
                let head = t.split('|').next().unwrap_or(t);
                if let Some(t) = intern_tag(head) {
                    if !parsed.contains(&t) {
                        parsed.push(t);
                    }
                }
            }
            if !parsed.is_empty() {
                lexicon.entry(word.to_string()).or_insert(parsed);
            }
        }
        LexiconTagger { lexicon }
    }

    fn lookup(&self, token: &str, sentence_initial: bool) -> Option<&[&'static str]> {
        let lower = token.to_lowercase();
        let (first, second) = if sentence_initial { (&lower[..], token) } else { (token, &lower[..]) };
        self.lexicon
            .get(first)
            .or_else(|| self.lexicon.get(second))
            .map(Vec::as_slice)
    }

    fn allows(&self, token: &str, sentence_initial: bool, tag: &str) -> bool {
        self.lookup(token, sentence_initial)
            .is_some_and(|tags| tags.contains(&tag))
    }

    pub fn tag<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<String> {
        let toks: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
        let mut tags: Vec<&'static str> = toks
            .iter()
            .enumerate()
            .map(|(i, tok)| {
                fixed_tag(tok)
                    .or_else(|| self.lookup(tok, i == 0).map(|t| t[0]))
                    .unwrap_or_else(|| guess_unknown(tok, i == 0))
            })
            .collect();

        for i in 0..toks.len() {
            let initial = i == 0;
            let prev = if i > 0 { tags[i - 1] } else { "" };
            let prev_word = if i > 0 { toks[i - 1].to_lowercase() } else { String::new() };
            let next = tags.get(i + 1).copied().unwrap_or("");
            let allows = |tag: &str| self.allows(toks[i], initial, tag);
            let cur = tags[i];

            let repaired = match cur {
                _ if toks[i] == "'s" => {
                    let verbal_next = matches!(next, "DT" | "RB" | "JJ" | "VBG" | "VBN" | "IN" | "PRP$" | "CD" | "TO");
                    if matches!(prev, "PRP" | "EX" | "WP" | "WDT") || prev_word == "that" || verbal_next {
                        "VBZ"
                    } else {
                        "POS"
                    }
                }
                "VB" | "VBP" | "VBD" if matches!(prev, "DT" | "PRP$" | "POS" | "JJ" | "CD") && allows("NN") => "NN",
                "VBZ" if matches!(prev, "DT" | "PRP$" | "POS" | "JJ" | "CD") && allows("NNS") => "NNS",
                "NN" | "VBP" | "VBD" | "JJ" if matches!(prev, "TO" | "MD") && allows("VB") => "VB",
                "VBD" if BE_OR_HAVE.contains(&prev_word.as_str()) && allows("VBN") => "VBN",
                "VBN" if prev == "PRP" && allows("VBD") => "VBD",
                "NNS" if matches!(prev, "PRP" | "WDT" | "NNP") && allows("VBZ") => "VBZ",
                "NN" | "VB" if matches!(prev, "PRP" | "NNS" | "WDT") && allows("VBP") => "VBP",
                other => other,
            };
            tags[i] = repaired;
        }
        tags.into_iter().map(str::to_string).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tag(s: &str) -> Vec<String> {
        let toks: Vec<&str> = s.split(' ').collect();
        LexiconTagger::bundled().tag(&toks)
    }

    #[test]
    fn golden_short_sentence() {
        assert_eq!(tag("A loving little film ."), ["DT", "JJ", "JJ", "NN", "."]);
    }

    #[test]
    fn lone_punctuation_is_not_eligible() {
        let t = tag(".");
        assert_eq!(t.len(), 1);
        assert!(!ELIGIBLE_TAGS.contains(&t[0].as_str()));
    }

    #[test]
    fn perturbation_sites_from_examples() {
        let t = tag("A pleasurably jacked-up piece of action moviemaking .");
        assert_eq!(t[3], "NN");
        let t = tag("it 's the kind of movie that makes you want to use the bathroom .");
        assert_eq!(t[1], "VBZ");
        assert_eq!(t[11], "VB");
        let t = tag("The story loses its bite in a last-minute happy ending");
        assert_eq!(&t[1..5], ["NN", "VBZ", "PRP$", "NN"]);
    }

    #[test]
    fn unknown_words_by_shape() {
        assert_eq!(guess_unknown("1,200", false), "CD");
        assert_eq!(guess_unknown("Brendan", false), "NNP");
        assert_eq!(guess_unknown("pleasurably", false), "RB");
        assert_eq!(guess_unknown("moviemaking", false), "VBG");
        assert_eq!(guess_unknown("jacked-up", false), "JJ");
    }

    #[test]
    fn coarse_mapping_is_total() {
        assert_eq!(coarse_pos("NNS"), CoarsePos::Noun);
        assert_eq!(coarse_pos("VBG"), CoarsePos::Verb);
        assert_eq!(coarse_pos("NNPS"), CoarsePos::ProperNoun);
        assert_eq!(coarse_pos("JJR"), CoarsePos::Adjective);
        assert_eq!(coarse_pos("RBS"), CoarsePos::Adverb);
        assert_eq!(coarse_pos("PRP$"), CoarsePos::Pronoun);
        assert_eq!(coarse_pos("WP"), CoarsePos::Pronoun);
        assert_eq!(coarse_pos("DT"), CoarsePos::Other);
        assert_eq!(coarse_pos("whatever"), CoarsePos::Other);
    }
}
