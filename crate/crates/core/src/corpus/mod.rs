//! Sentence-level sentiment corpus, POS tags and word vectors.

mod embeddings;
mod sst;
mod tagger;

pub use embeddings::{Embeddings, Vocab, PAD_INDEX, UNK_INDEX};
pub use sst::{load_sst, parse_tree_line};
pub use tagger::{coarse_pos, CoarsePos, LexiconTagger, ELIGIBLE_TAGS, TAGGER_VERSION};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const NUM_LABELS: usize = 5;

/// One tokenized, tagged, labelled sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: u32,
    pub tokens: Vec<String>,
    pub pos: Vec<String>,
    pub label: u8,
}

impl Sentence {
    pub fn new(id: u32, tokens: Vec<String>, pos: Vec<String>, label: u8) -> Result<Self> {
        let s = Sentence { id, tokens, pos, label };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Validation(format!("sentence {} has no tokens", self.id)));
        }
        if self.pos.len() != self.tokens.len() {
            return Err(Error::Validation(format!(
                "sentence {}: {} tags for {} tokens",
                self.id,
                self.pos.len(),
                self.tokens.len()
            )));
        }
        if usize::from(self.label) >= NUM_LABELS {
            return Err(Error::Validation(format!("sentence {}: label {} outside 0..=4", self.id, self.label)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "dev" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// The three splits; immutable once loaded.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub train: Vec<Sentence>,
    pub validation: Vec<Sentence>,
    pub test: Vec<Sentence>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Sentence] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sentence> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }

    /// Gold-label counts over every split.
    pub fn label_histogram(&self) -> [usize; NUM_LABELS] {
        let mut hist = [0; NUM_LABELS];
        for s in self.iter() {
            hist[usize::from(s.label)] += 1;
        }
        hist
    }

    pub fn find(&self, id: u32) -> Option<&Sentence> {
        self.iter().find(|s| s.id == id)
    }

    /// Writes `<dir>/{train,validation,test}.jsonl`.
    pub fn write_cache(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for split in Split::ALL {
            let path = dir.join(format!("{}.jsonl", split.name()));
            write_jsonl(&path, self.split(split))?;
        }
        Ok(())
    }

    pub fn read_cache(dir: &Path) -> Result<Self> {
        let mut corpus = Corpus::default();
        for split in Split::ALL {
            let path = dir.join(format!("{}.jsonl", split.name()));
            let sentences: Vec<Sentence> = read_jsonl(&path)?;
            for (i, s) in sentences.iter().enumerate() {
                s.validate().map_err(|e| Error::load(&path, i + 1, e.to_string()))?;
            }
            match split {
                Split::Train => corpus.train = sentences,
                Split::Validation => corpus.validation = sentences,
                Split::Test => corpus.test = sentences,
            }
        }
        Ok(corpus)
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::load(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}
