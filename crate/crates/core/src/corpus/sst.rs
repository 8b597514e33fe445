use std::path::{Path, PathBuf};

use super::{Corpus, LexiconTagger, Sentence, Split, NUM_LABELS};
use crate::{Error, Result};

/// Parses one bracketed sentiment tree, returning the root label and leaves.
///
/// `(3 (2 It) (4 (2 's) (3 good)))` gives `(3, ["It", "'s", "good"])`.
pub fn parse_tree_line(line: &str) -> std::result::Result<(i64, Vec<String>), String> {
    let bytes = line.trim().as_bytes();
    let mut pos = 0;
    let mut leaves = Vec::new();
    let label = parse_node(bytes, &mut pos, &mut leaves)?;
    skip_ws(bytes, &mut pos);
    if pos != bytes.len() {
        return Err(format!("trailing input at column {}", pos + 1));
    }
    if leaves.is_empty() {
        return Err("tree has no leaves".into());
    }
    Ok((label, leaves))
}

fn skip_ws(b: &[u8], pos: &mut usize) {
    while *pos < b.len() && b[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
}

fn read_atom(b: &[u8], pos: &mut usize) -> std::result::Result<String, String> {
    let start = *pos;
    while *pos < b.len() && !b[*pos].is_ascii_whitespace() && b[*pos] != b'(' && b[*pos] != b')' {
        *pos += 1;
    }
    if start == *pos {
        return Err(format!("expected a token at column {}", start + 1));
    }
    String::from_utf8(b[start..*pos].to_vec()).map_err(|e| e.to_string())
}

fn parse_node(b: &[u8], pos: &mut usize, leaves: &mut Vec<String>) -> std::result::Result<i64, String> {
    skip_ws(b, pos);
    if b.get(*pos) != Some(&b'(') {
        return Err(format!("expected `(` at column {}", *pos + 1));
    }
    *pos += 1;
    skip_ws(b, pos);
    let label_text = read_atom(b, pos)?;
    let label: i64 = label_text
        .parse()
        .map_err(|_| format!("node label `{label_text}` is not an integer"))?;
    skip_ws(b, pos);
    match b.get(*pos) {
        Some(b'(') => {
            while b.get(*pos) == Some(&b'(') {
                parse_node(b, pos, leaves)?;
                skip_ws(b, pos);
            }
        }
        Some(_) => leaves.push(read_atom(b, pos)?),
        None => return Err("unexpected end of tree".into()),
    }
    skip_ws(b, pos);
    if b.get(*pos) != Some(&b')') {
        return Err(format!("expected `)` at column {}", *pos + 1));
    }
    *pos += 1;
    Ok(label)
}

fn parse_tsv_line(line: &str) -> std::result::Result<(i64, Vec<String>), String> {
    let (text, label) = line.rsplit_once('\t').ok_or("expected `sentence<TAB>label`")?;
    let label: i64 = label.trim().parse().map_err(|_| format!("label `{}` is not an integer", label.trim()))?;
    let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    if tokens.is_empty() {
        return Err("empty sentence".into());
    }
    Ok((label, tokens))
}

#[derive(Clone, Copy)]
enum Format {
    Trees,
    Tsv,
}

fn locate(root: &Path, split: Split) -> Result<(PathBuf, Format)> {
    let stems: &[&str] = match split {
        Split::Train => &["train"],
        Split::Validation => &["dev", "validation"],
        Split::Test => &["test"],
    };
    let mut tried = Vec::new();
    for dir in [root.to_path_buf(), root.join("trees")] {
        for stem in stems {
            for (ext, format) in [("txt", Format::Trees), ("tsv", Format::Tsv)] {
                let p = dir.join(format!("{stem}.{ext}"));
                if p.is_file() {
                    return Ok((p, format));
                }
                tried.push(p);
            }
        }
    }
    Err(Error::load(
        root,
        0,
        format!("no {} file found (looked for {})", split.name(), tried[0].display()),
    ))
}

fn read_split(path: &Path, format: Format) -> Result<Vec<(u8, Vec<String>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match format {
            Format::Trees => parse_tree_line(line),
            Format::Tsv => {
                // optional header row
                if i == 0 && line.rsplit_once('\t').is_some_and(|(_, l)| l.trim().parse::<i64>().is_err()) {
                    continue;
                }
                parse_tsv_line(line)
            }
        };
        let (label, tokens) = parsed.map_err(|msg| Error::load(path, i + 1, msg))?;
        if !(0..NUM_LABELS as i64).contains(&label) {
            return Err(Error::Validation(format!(
                "{}:{}: label {label} outside 0..=4",
                path.display(),
                i + 1
            )));
        }
        out.push((label as u8, tokens));
    }
    if out.is_empty() {
        return Err(Error::load(path, 0, "file contains no sentences"));
    }
    Ok(out)
}

/// Loads train/dev/test from `root` (or `root/trees`), either as bracketed
/// trees (`*.txt`) or as `sentence<TAB>label` rows (`*.tsv`). Sentence ids
/// are assigned consecutively across train, validation, test.
pub fn load_sst(root: &Path, tagger: &LexiconTagger) -> Result<Corpus> {
    if !root.is_dir() {
        return Err(Error::load(root, 0, "corpus directory does not exist"));
    }
    let mut corpus = Corpus::default();
    let mut next_id = 0u32;
    for split in Split::ALL {
        let (path, format) = locate(root, split)?;
        let rows = read_split(&path, format)?;
        let sentences: Vec<Sentence> = rows
            .into_iter()
            .map(|(label, tokens)| {
                let pos = tagger.tag(&tokens);
                let s = Sentence { id: next_id, tokens, pos, label };
                next_id += 1;
                s
            })
            .collect();
        log::info!("{}: {} sentences from {}", split.name(), sentences.len(), path.display());
        match split {
            Split::Train => corpus.train = sentences,
            Split::Validation => corpus.validation = sentences,
            Split::Test => corpus.test = sentences,
        }
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_leaves_and_root_label() {
        let (label, leaves) = parse_tree_line("(3 (2 It) (4 (4 (2 's) (3 (2 a) (3 good))) (2 .)))").unwrap();
        assert_eq!(label, 3);
        assert_eq!(leaves, ["It", "'s", "a", "good", "."]);
    }

    #[test]
    fn malformed_trees_are_rejected() {
        assert!(parse_tree_line("(3 (2 It)").is_err());
        assert!(parse_tree_line("(x (2 It))").is_err());
        assert!(parse_tree_line("(3 (2 It)) extra").is_err());
        assert!(parse_tree_line("").is_err());
    }

    fn write(dir: &Path, name: &str, body: &str) {
        std::fs::write(dir.join(name), body).unwrap();
    }

    #[test]
    fn loads_trees_with_global_ids() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "train.txt", "(4 (4 Great) (2 film))\n(0 (0 Awful) (2 .))\n");
        write(dir.path(), "dev.txt", "(2 (2 Fine))\n");
        write(dir.path(), "test.txt", "(1 (1 Dull) (2 movie))\n");
        let c = load_sst(dir.path(), LexiconTagger::bundled()).unwrap();
        assert_eq!((c.train.len(), c.validation.len(), c.test.len()), (2, 1, 1));
        assert_eq!(c.test[0].id, 3);
        assert_eq!(c.test[0].tokens, ["Dull", "movie"]);
        assert_eq!(c.label_histogram(), [1, 1, 1, 0, 1]);
        let again = load_sst(dir.path(), LexiconTagger::bundled()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn tsv_with_header() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "train.tsv", "sentence\tlabel\nA good one\t3\n");
        write(dir.path(), "dev.tsv", "Bad\t1\n");
        write(dir.path(), "test.tsv", "So so\t2\n");
        let c = load_sst(dir.path(), LexiconTagger::bundled()).unwrap();
        assert_eq!(c.train[0].tokens, ["A", "good", "one"]);
        assert_eq!(c.train[0].label, 3);
    }

    #[test]
    fn errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "train.txt", "(4 (4 Great))\n(4 (4 Great)\n");
        write(dir.path(), "dev.txt", "(2 (2 Fine))\n");
        write(dir.path(), "test.txt", "(1 (1 Dull))\n");
        let err = load_sst(dir.path(), LexiconTagger::bundled()).unwrap_err();
        assert!(matches!(err, Error::Load { line: 2, .. }), "{err}");

        write(dir.path(), "train.txt", "(7 (4 Great))\n");
        let err = load_sst(dir.path(), LexiconTagger::bundled()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");

        write(dir.path(), "train.txt", "");
        let err = load_sst(dir.path(), LexiconTagger::bundled()).unwrap_err();
        assert!(matches!(err, Error::Load { .. }), "{err}");
    }
}
