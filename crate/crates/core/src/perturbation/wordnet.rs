//! Reader for WordNet's plain-text database files (`index.*`, `data.*`,
//! `*.exc`) with morphological base-form lookup.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WnPos {
    Noun,
    Verb,
    Adj,
    Adv,
}

impl WnPos {
    pub const ALL: [WnPos; 4] = [WnPos::Noun, WnPos::Verb, WnPos::Adj, WnPos::Adv];

    fn file_stem(self) -> &'static str {
        match self {
            WnPos::Noun => "noun",
            WnPos::Verb => "verb",
            WnPos::Adj => "adj",
            WnPos::Adv => "adv",
        }
    }

    fn symbol(self) -> char {
        match self {
            WnPos::Noun => 'n',
            WnPos::Verb => 'v',
            WnPos::Adj => 'a',
            WnPos::Adv => 'r',
        }
    }

    fn substitutions(self) -> &'static [(&'static str, &'static str)] {
        match self {
            WnPos::Noun => &[
                ("s", ""),
                ("ses", "s"),
                ("ves", "f"),
                ("xes", "x"),
                ("zes", "z"),
                ("ches", "ch"),
                ("shes", "sh"),
                ("men", "man"),
                ("ies", "y"),
            ],
            WnPos::Verb => &[
                ("s", ""),
                ("ies", "y"),
                ("es", "e"),
                ("es", ""),
                ("ed", "e"),
                ("ed", ""),
                ("ing", "e"),
                ("ing", ""),
            ],
            WnPos::Adj => &[("er", ""), ("est", ""), ("er", "e"), ("est", "e")],
            WnPos::Adv => &[],
        }
    }
}

#[derive(Debug, Default)]
struct PosTables {
    /// lemma -> synset offsets
    index: HashMap<String, Vec<usize>>,
    data: Vec<u8>,
    /// synset offset -> byte range of its line in `data`. Keyed by the
    /// offset field rather than trusted as a file position, so copies with
    /// converted line endings still work.
    lines: HashMap<usize, (usize, usize)>,
    exceptions: HashMap<String, Vec<String>>,
}

/// A loaded lexical database.
#[derive(Debug)]
pub struct WordNet {
    tables: [PosTables; 4],
    version: String,
}

fn table_index(pos: WnPos) -> usize {
    pos as usize
}

impl WordNet {
    /// Loads `index.{noun,verb,adj,adv}`, `data.*` and `*.exc` from `dir`.
    /// Exception files are optional.
    pub fn load(dir: &Path) -> Result<WordNet> {
        let mut hasher = Sha256::new();
        let mut tables: [PosTables; 4] = Default::default();
        for pos in WnPos::ALL {
            let t = &mut tables[table_index(pos)];
            let index_path = dir.join(format!("index.{}", pos.file_stem()));
            let index_text = std::fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
            hasher.update(index_text.as_bytes());
            t.index = parse_index(&index_text, &index_path)?;

            let data_path = dir.join(format!("data.{}", pos.file_stem()));
            t.data = std::fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
            hasher.update(&t.data);
            t.lines = index_lines(&t.data);

            let exc_path = dir.join(format!("{}.exc", pos.file_stem()));
            if exc_path.exists() {
                let text = std::fs::read_to_string(&exc_path).map_err(|e| Error::io(&exc_path, e))?;
                hasher.update(text.as_bytes());
                for line in text.lines() {
                    let mut parts = line.split_whitespace();
                    if let Some(form) = parts.next() {
                        t.exceptions
                            .entry(form.to_string())
                            .or_default()
                            .extend(parts.map(str::to_string));
                    }
                }
            }
        }
        let version = hex::encode(&hasher.finalize()[..8]);
        let wn = WordNet { tables, version };
        wn.check_offsets(dir)?;
        Ok(wn)
    }

    /// Content hash of the database files.
    pub fn version(&self) -> &str {
        &self.version
    }

    fn check_offsets(&self, dir: &Path) -> Result<()> {
        for pos in WnPos::ALL {
            let t = &self.tables[table_index(pos)];
            if let Some((lemma, &off)) = t
                .index
                .iter()
                .flat_map(|(l, offs)| offs.iter().map(move |o| (l, o)))
                .find(|(_, o)| !t.lines.contains_key(o))
            {
                return Err(Error::load(
                    dir.join(format!("data.{}", pos.file_stem())),
                    0,
                    format!("no synset {off:08} (listed for '{lemma}')"),
                ));
            }
        }
        Ok(())
    }

    fn has_lemma(&self, form: &str, pos: WnPos) -> bool {
        self.tables[table_index(pos)].index.contains_key(form)
    }

    /// Base forms of `form` present in the index for `pos`.
    pub fn morphy(&self, form: &str, pos: WnPos) -> Vec<String> {
        let t = &self.tables[table_index(pos)];
        let filter = |forms: &[String]| -> Vec<String> {
            let mut out: Vec<String> = Vec::new();
            for f in forms {
                if self.has_lemma(f, pos) && !out.contains(f) {
                    out.push(f.clone());
                }
            }
            out
        };
        if let Some(exc) = t.exceptions.get(form) {
            let mut forms = vec![form.to_string()];
            forms.extend(exc.iter().cloned());
            return filter(&forms);
        }
        let apply = |forms: &[String]| -> Vec<String> {
            let mut out = Vec::new();
            for f in forms {
                for (old, new) in pos.substitutions() {
                    if let Some(stem) = f.strip_suffix(old) {
                        let cand = format!("{stem}{new}");
                        if !out.contains(&cand) {
                            out.push(cand);
                        }
                    }
                }
            }
            out
        };
        let mut forms = apply(&[form.to_string()]);
        let mut first = vec![form.to_string()];
        first.extend(forms.iter().cloned());
        let found = filter(&first);
        if !found.is_empty() {
            return found;
        }
        while !forms.is_empty() {
            forms = apply(&forms);
            let found = filter(&forms);
            if !found.is_empty() {
                return found;
            }
        }
        Vec::new()
    }

    fn synset_words(&self, pos: WnPos, offset: usize) -> Vec<String> {
        let t = &self.tables[table_index(pos)];
        let Some(&(start, end)) = t.lines.get(&offset) else { return Vec::new() };
        let line = String::from_utf8_lossy(&t.data[start..end]);
        let fields: Vec<&str> = line.split_whitespace().collect();
        let count = fields.get(3).and_then(|c| usize::from_str_radix(c, 16).ok()).unwrap_or(0);
        (0..count)
            .filter_map(|i| fields.get(4 + 2 * i))
            .map(|w| strip_marker(w).to_lowercase())
            .collect()
    }

    /// Lowercased member words of every synset of every sense of `word`,
    /// across all parts of speech. Empty if the word is unknown.
    pub fn lemma_names(&self, word: &str) -> BTreeSet<String> {
        let form = word.trim().to_lowercase().replace(' ', "_");
        let mut names = BTreeSet::new();
        if form.is_empty() {
            return names;
        }
        for pos in WnPos::ALL {
            for base in self.morphy(&form, pos) {
                for &off in &self.tables[table_index(pos)].index[&base] {
                    names.extend(self.synset_words(pos, off));
                }
            }
        }
        names
    }

    /// True when the synset-member unions of the two words intersect.
    pub fn synonymous(&self, original: &str, candidate: &str) -> bool {
        let a = self.lemma_names(original);
        if a.is_empty() {
            return false;
        }
        let b = self.lemma_names(candidate);
        !a.is_disjoint(&b)
    }
}

fn strip_marker(word: &str) -> &str {
    for m in ["(a)", "(p)", "(ip)"] {
        if let Some(w) = word.strip_suffix(m) {
            return w;
        }
    }
    word
}

fn index_lines(data: &[u8]) -> HashMap<usize, (usize, usize)> {
    let mut lines = HashMap::new();
    let mut start = 0;
    while start < data.len() {
        let end = data[start..].iter().position(|&b| b == b'\n').map_or(data.len(), |e| start + e);
        let line = &data[start..end];
        let digits = line.iter().take_while(|b| b.is_ascii_digit()).count();
        if digits > 0 {
            if let Ok(off) = std::str::from_utf8(&line[..digits]).expect("ascii digits").parse() {
                lines.insert(off, (start, end));
            }
        }
        start = end + 1;
    }
    lines
}

fn parse_index(text: &str, path: &Path) -> Result<HashMap<String, Vec<usize>>> {
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with(' ') || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = |m: &str| Error::load(path, i + 1, m.to_string());
        let synsets: usize = f.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad synset count"))?;
        let pointers: usize = f.get(3).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad pointer count"))?;
        let start = 4 + pointers + 2;
        if f.len() < start + synsets {
            return Err(bad("truncated line"));
        }
        let offsets = f[start..start + synsets]
            .iter()
            .map(|o| o.parse::<usize>().map_err(|_| bad("bad synset offset")))
            .collect::<Result<Vec<_>>>()?;
        map.insert(f[0].to_string(), offsets);
    }
    Ok(map)
}

/// Writes a small database in the same file layout, one synset per entry.
/// Used to build fixtures.
pub fn write_database(dir: &Path, synsets: &[(WnPos, &[&str])]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for pos in WnPos::ALL {
        let mut data = String::from("  1 fixture database\n");
        let mut index: std::collections::BTreeMap<String, Vec<usize>> = Default::default();
        for (p, words) in synsets.iter().filter(|(p, _)| *p == pos) {
            let offset = data.len();
            let _ = write!(data, "{offset:08} 00 {} {:02x}", p.symbol(), words.len());
            for w in *words {
                let _ = write!(data, " {w} 0");
                index.entry(strip_marker(w).to_lowercase()).or_default().push(offset);
            }
            data.push_str(" 000 | fixture\n");
        }
        let mut index_text = String::from("  1 fixture database\n");
        for (lemma, offs) in &index {
            let _ = write!(index_text, "{lemma} {} {} 0 {} 0", pos.symbol(), offs.len(), offs.len());
            for o in offs {
                let _ = write!(index_text, " {o:08}");
            }
            index_text.push('\n');
        }
        for (name, body) in [
            (format!("data.{}", pos.file_stem()), data),
            (format!("index.{}", pos.file_stem()), index_text),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mini() -> (tempfile::TempDir, WordNet) {
        let dir = tempfile::tempdir().unwrap();
        write_database(
            dir.path(),
            &[
                (WnPos::Noun, &["a", "x", "y"]),
                (WnPos::Noun, &["b", "y", "z"]),
                (WnPos::Noun, &["c", "z"]),
                (WnPos::Verb, &["watch", "observe"]),
                (WnPos::Adj, &["big(a)", "large"]),
            ],
        )
        .unwrap();
        std::fs::write(dir.path().join("verb.exc"), "ran run\n").unwrap();
        let wn = WordNet::load(dir.path()).unwrap();
        (dir, wn)
    }

    #[test]
    fn shared_member_means_synonymous() {
        let (_d, wn) = mini();
        assert!(wn.synonymous("a", "b"));
        assert!(!wn.synonymous("a", "c"));
        assert!(!wn.synonymous("a", "unknown"));
        assert!(!wn.synonymous("unknown", "unknown"));
    }

    #[test]
    fn inflections_reach_base_forms() {
        let (_d, wn) = mini();
        assert_eq!(wn.morphy("watches", WnPos::Verb), ["watch"]);
        assert_eq!(wn.morphy("watching", WnPos::Verb), ["watch"]);
        assert!(wn.synonymous("watches", "observed"));
        assert!(wn.lemma_names("larger").contains("big"));
        assert!(wn.lemma_names("big").contains("big"), "marker stripped");
    }

    #[test]
    fn version_tracks_content() {
        let (d, wn) = mini();
        let v = wn.version().to_string();
        assert_eq!(WordNet::load(d.path()).unwrap().version(), v);
        std::fs::write(d.path().join("verb.exc"), "ran run\nwent go\n").unwrap();
        assert_ne!(WordNet::load(d.path()).unwrap().version(), v);
    }

    #[test]
    fn missing_files_are_io_errors() {
        let d = tempfile::tempdir().unwrap();
        assert!(matches!(WordNet::load(d.path()), Err(Error::Io { .. })));
    }
}
