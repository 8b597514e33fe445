use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};

use crate::{Error, Result};

pub const PAD_INDEX: u32 = 0;
pub const UNK_INDEX: u32 = 1;
const PAD: &str = "<pad>";
const UNK: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::from_words(Vec::new())
    }
}

impl Vocab {
    /// Builds a vocabulary with the two reserved entries followed by `words`.
    pub fn from_words(words: Vec<String>) -> Self {
        let mut v = Vocab {
            words: Vec::with_capacity(words.len() + 2),
            index: HashMap::with_capacity(words.len() + 2),
        };
        v.push(PAD.to_string());
        v.push(UNK.to_string());
        for w in words {
            v.push(w);
        }
        v
    }

    fn push(&mut self, word: String) -> u32 {
        if let Some(&i) = self.index.get(&word) {
            return i;
        }
        let i = self.words.len() as u32;
        self.index.insert(word.clone(), i);
        self.words.push(word);
        i
    }

    /// Exact match first, then lowercase, then the unknown index.
    pub fn lookup(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(UNK_INDEX)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index
            .get(token)
            .or_else(|| self.index.get(&token.to_lowercase()))
            .copied()
    }

    pub fn word(&self, index: u32) -> &str {
        &self.words[index as usize]
    }

    /// Words after the reserved entries, in index order.
    pub fn words(&self) -> &[String] {
        &self.words[2..]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 2
    }
}

/// Frozen word vectors aligned with a [`Vocab`]. Row 0 is padding (zeros),
/// row 1 the unknown vector (mean of all known rows).
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub vocab: Vocab,
    pub matrix: Array2<f32>,
}

struct TextVectors {
    dim: usize,
    words: Vec<String>,
    rows: Vec<f32>,
}

/// Reads `word v1 .. vd` lines, keeping only words accepted by `keep`.
/// A leading `count dim` header line is skipped. Words may contain spaces:
/// the vector is taken from the right.
fn read_text_vectors(path: &Path, mut keep: impl FnMut(&str) -> bool) -> Result<TextVectors> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dim = 0usize;
    let mut words = Vec::new();
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            continue;
        }
        if dim == 0 {
            dim = fields.iter().rev().take_while(|f| f.parse::<f32>().is_ok()).count();
            if dim == fields.len() {
                dim -= 1;
            }
            if dim == 0 {
                return Err(Error::load(path, i + 1, "no vector components"));
            }
        }
        if fields.len() < dim + 1 {
            return Err(Error::load(path, i + 1, format!("expected {dim} components")));
        }
        let word = fields[..fields.len() - dim].join(" ");
        if !keep(&word) || !seen.insert(word.clone()) {
            continue;
        }
        for f in &fields[fields.len() - dim..] {
            rows.push(
                f.parse::<f32>()
                    .map_err(|_| Error::load(path, i + 1, format!("bad vector component `{f}`")))?,
            );
        }
        words.push(word);
    }
    Ok(TextVectors { dim, words, rows })
}

impl Embeddings {
    pub fn from_parts(vocab: Vocab, matrix: Array2<f32>) -> Result<Self> {
        if matrix.nrows() != vocab.len() {
            return Err(Error::Integrity(format!(
                "embedding matrix has {} rows for {} vocabulary entries",
                matrix.nrows(),
                vocab.len()
            )));
        }
        Ok(Embeddings { vocab, matrix })
    }

    /// Builds from (word, vector) rows; pad and unknown rows are derived.
    pub fn from_rows(words: Vec<String>, dim: usize, rows: &[f32]) -> Self {
        let known = Array2::from_shape_vec((words.len(), dim), rows.to_vec()).expect("rows match words x dim");
        let mut matrix = Array2::zeros((words.len() + 2, dim));
        if !words.is_empty() {
            matrix.row_mut(UNK_INDEX as usize).assign(&known.mean_axis(Axis(0)).expect("nonempty"));
        }
        matrix.slice_mut(ndarray::s![2.., ..]).assign(&known);
        Embeddings {
            vocab: Vocab::from_words(words),
            matrix,
        }
    }

    /// Loads the vectors needed by `tokens` (exact forms and lowercase forms).
    pub fn load_for_tokens<'a>(path: &Path, tokens: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut wanted = HashSet::new();
        for t in tokens {
            wanted.insert(t.to_string());
            wanted.insert(t.to_lowercase());
        }
        let tv = read_text_vectors(path, |w| wanted.contains(w))?;
        if tv.words.is_empty() {
            return Err(Error::load(path, 0, "no vectors for any corpus token"));
        }
        log::info!("{} of {} wanted word forms have vectors", tv.words.len(), wanted.len());
        Ok(Self::from_rows(tv.words, tv.dim, &tv.rows))
    }

    /// Appends rows for any of `tokens` not yet covered. Existing indices do
    /// not move, so a trained model stays valid. Returns the number added.
    pub fn extend_from_file<'a>(&mut self, path: &Path, tokens: impl IntoIterator<Item = &'a str>) -> Result<usize> {
        let mut wanted = HashSet::new();
        for t in tokens {
            if self.vocab.get(t).is_none() {
                wanted.insert(t.to_string());
                wanted.insert(t.to_lowercase());
            }
        }
        if wanted.is_empty() {
            return Ok(0);
        }
        let tv = read_text_vectors(path, |w| wanted.contains(w))?;
        if tv.words.is_empty() {
            return Ok(0);
        }
        if tv.dim != self.dim() {
            return Err(Error::Integrity(format!(
                "vector file has dimension {}, model uses {}",
                tv.dim,
                self.dim()
            )));
        }
        let added = Array2::from_shape_vec((tv.words.len(), tv.dim), tv.rows).expect("rows match");
        let mut matrix = Array2::zeros((self.matrix.nrows() + added.nrows(), tv.dim));
        matrix.slice_mut(ndarray::s![..self.matrix.nrows(), ..]).assign(&self.matrix);
        matrix.slice_mut(ndarray::s![self.matrix.nrows().., ..]).assign(&added);
        let n = tv.words.len();
        for w in tv.words {
            self.vocab.push(w);
        }
        self.matrix = matrix;
        Ok(n)
    }

    /// Writes the non-reserved rows as `word v1 .. vd` lines. Floats use the
    /// shortest form that reads back to the same value.
    pub fn write_text(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for (i, word) in self.vocab.words().iter().enumerate() {
            let mut line = word.clone();
            for v in self.matrix.row(i + 2) {
                line.push(' ');
                line.push_str(&v.to_string());
            }
            line.push('\n');
            w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn index(&self, token: &str) -> u32 {
        self.vocab.lookup(token)
    }

    pub fn indices<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.index(t.as_ref())).collect()
    }

    pub fn vector(&self, index: u32) -> ArrayView1<'_, f32> {
        self.matrix.row(index as usize)
    }

    /// Cosine similarity between two rows; 0 when either is all-zero.
    pub fn cosine(&self, a: u32, b: u32) -> f32 {
        let (x, y) = (self.vector(a), self.vector(b));
        let denom = (x.dot(&x) * y.dot(&y)).sqrt();
        if denom == 0.0 {
            0.0
        } else {
            x.dot(&y) / denom
        }
    }
}
