//! Static materials for two human studies (perturbation quality and
//! rationale matching) plus scoring of the matching responses.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::stability::TracePair;
use crate::{Error, Result};

pub const LABEL_NAMES: [&str; 5] = ["very negative", "negative", "neutral", "positive", "very positive"];

/// An (original, perturbed) sentence pair with both true rationales.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyPair {
    pub sentence_id: u32,
    pub perturbation: u32,
    pub position: usize,
    pub original: Vec<String>,
    pub perturbed: Vec<String>,
    pub original_mask: Vec<bool>,
    pub perturbed_mask: Vec<bool>,
    pub prediction: u8,
}

impl StudyPair {
    pub fn from_trace_pair(p: &TracePair<'_>) -> Self {
        StudyPair {
            sentence_id: p.original.sentence_id,
            perturbation: p.index,
            position: p.perturbation.position,
            original: p.original.tokens.clone(),
            perturbed: p.perturbed.tokens.clone(),
            original_mask: p.original.mask.clone(),
            perturbed_mask: p.perturbed.mask.clone(),
            prediction: p.original.pred,
        }
    }

    fn usable_for_matching(&self) -> bool {
        self.original_mask != self.perturbed_mask
            && self.original_mask.iter().any(|&m| m)
            && self.perturbed_mask.iter().any(|&m| m)
    }
}

/// Tokens with bold (selected) and one underlined (perturbed) position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Highlighted {
    pub tokens: Vec<String>,
    pub bold: Vec<bool>,
    pub underline: usize,
}

impl Highlighted {
    fn html(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let mut w = escape(t);
            if i == self.underline {
                w = format!("<u>{w}</u>");
            }
            if self.bold.get(i).copied().unwrap_or(false) {
                w = format!("<b>{w}</b>");
            }
            out.push_str(&w);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Presentation {
    pub original: Highlighted,
    pub perturbed: Highlighted,
}

impl Presentation {
    fn new(p: &StudyPair, original_mask: &[bool], perturbed_mask: &[bool]) -> Self {
        Presentation {
            original: Highlighted {
                tokens: p.original.clone(),
                bold: original_mask.to_vec(),
                underline: p.position,
            },
            perturbed: Highlighted {
                tokens: p.perturbed.clone(),
                bold: perturbed_mask.to_vec(),
                underline: p.position,
            },
        }
    }

    fn truth(p: &StudyPair) -> Self {
        Self::new(p, &p.original_mask, &p.perturbed_mask)
    }

    /// The two true rationales exchanged between the sentences.
    fn swapped(p: &StudyPair) -> Self {
        Self::new(p, &p.perturbed_mask, &p.original_mask)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    A,
    B,
}

impl std::str::FromStr for Choice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(Choice::A),
            "b" => Ok(Choice::B),
            other => Err(Error::Validation(format!("choice must be a or b, got '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchingQuestion {
    pub question_id: String,
    pub a: Presentation,
    pub b: Presentation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchingForm {
    pub seed: u64,
    pub examples: Vec<Presentation>,
    pub questions: Vec<MatchingQuestion>,
}

/// Where each item came from; kept out of the participant form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Source {
    pub sentence_id: u32,
    pub perturbation: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchingKey {
    pub seed: u64,
    pub answers: BTreeMap<String, Choice>,
    pub sources: BTreeMap<String, Source>,
}

fn source(p: &StudyPair) -> Source {
    Source {
        sentence_id: p.sentence_id,
        perturbation: p.perturbation,
    }
}

/// Draws `n_train` worked examples and `n_test` questions from pairs whose
/// two rationales differ and are both nonempty. Sampling is uniform and
/// seeded; the side holding the true assignment is a coin flip.
pub fn gen_matching_study(pairs: &[StudyPair], n_train: usize, n_test: usize, seed: u64) -> Result<(MatchingForm, MatchingKey)> {
    let mut pool: Vec<&StudyPair> = pairs.iter().filter(|p| p.usable_for_matching()).collect();
    pool.sort_by_key(|p| (p.sentence_id, p.perturbation));
    pool.dedup_by_key(|p| (p.sentence_id, p.perturbation));
    let need = n_train + n_test;
    if pool.len() < need {
        return Err(Error::Validation(format!(
            "matching study needs {need} pairs with differing nonempty rationales, only {} available",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (chosen, _) = pool.partial_shuffle(&mut rng, need);
    let (train, test) = chosen.split_at(n_train);
    let examples = train.iter().map(|p| Presentation::truth(p)).collect();
    let mut questions = Vec::with_capacity(n_test);
    let mut key = MatchingKey {
        seed,
        answers: BTreeMap::new(),
        sources: BTreeMap::new(),
    };
    for (i, p) in test.iter().enumerate() {
        let id = format!("q{:02}", i + 1);
        let (truth, swapped) = (Presentation::truth(p), Presentation::swapped(p));
        let (a, b, answer) = if rng.random_bool(0.5) {
            (truth, swapped, Choice::A)
        } else {
            (swapped, truth, Choice::B)
        };
        questions.push(MatchingQuestion {
            question_id: id.clone(),
            a,
            b,
        });
        key.answers.insert(id.clone(), answer);
        key.sources.insert(id, source(p));
    }
    Ok((
        MatchingForm {
            seed,
            examples,
            questions,
        },
        key,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityItem {
    pub item_id: String,
    /// Original sentence with its rationale in bold.
    pub original: Highlighted,
    pub perturbed: Highlighted,
    pub prediction: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityForm {
    pub seed: u64,
    pub questions: Vec<String>,
    pub items: Vec<QualityItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityKey {
    pub seed: u64,
    pub sources: BTreeMap<String, Source>,
}

const QUALITY_QUESTIONS: [&str; 3] = [
    "After the word change, would you expect a different sentiment label? If so, which one?",
    "If the label should change: should the replaced word enter or leave the highlighted words?",
    "If the label should change: mark the words that would justify the new label in sentence (b).",
];

/// Samples `n_items` perturbations uniformly (seeded).
pub fn gen_quality_study(pairs: &[StudyPair], n_items: usize, seed: u64) -> Result<(QualityForm, QualityKey)> {
    let mut pool: Vec<&StudyPair> = pairs.iter().collect();
    pool.sort_by_key(|p| (p.sentence_id, p.perturbation));
    pool.dedup_by_key(|p| (p.sentence_id, p.perturbation));
    if pool.len() < n_items {
        return Err(Error::Validation(format!(
            "quality study needs {n_items} perturbations, only {} available",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (chosen, _) = pool.partial_shuffle(&mut rng, n_items);
    let mut items = Vec::with_capacity(n_items);
    let mut sources = BTreeMap::new();
    for (i, p) in chosen.iter().enumerate() {
        let id = format!("item{:02}", i + 1);
        items.push(QualityItem {
            item_id: id.clone(),
            original: Highlighted {
                tokens: p.original.clone(),
                bold: p.original_mask.clone(),
                underline: p.position,
            },
            perturbed: Highlighted {
                tokens: p.perturbed.clone(),
                bold: vec![false; p.perturbed.len()],
                underline: p.position,
            },
            prediction: LABEL_NAMES
                .get(usize::from(p.prediction))
                .copied()
                .unwrap_or("unknown")
                .to_string(),
        });
        sources.insert(id, source(p));
    }
    Ok((
        QualityForm {
            seed,
            questions: QUALITY_QUESTIONS.iter().map(|q| q.to_string()).collect(),
            items,
        },
        QualityKey { seed, sources },
    ))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const STYLE: &str = "body{font-family:sans-serif;max-width:48em;margin:2em auto;line-height:1.5}\
.box{border:1px solid #888;padding:0.8em 1em;margin:1em 0}\
b{background:#ffe9a8}";

fn page(title: &str, body: &str) -> String {
    format!(
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>{}</title>\n<style>{STYLE}</style>\n</head>\n<body>\n<h1>{}</h1>\n{body}</body>\n</html>\n",
        escape(title),
        escape(title)
    )
}

pub fn render_matching_html(form: &MatchingForm) -> String {
    let mut b = String::new();
    b.push_str(
        "<p>Bold words are the words a model selected to justify its sentiment prediction. \
         The underlined word was replaced to produce the second sentence.</p>\n<h2>Examples</h2>\n",
    );
    for (i, e) in form.examples.iter().enumerate() {
        let _ = writeln!(
            b,
            "<div class=\"box\"><p>Example {}</p><p>orig: {}</p><p>pert: {}</p></div>",
            i + 1,
            e.original.html(),
            e.perturbed.html()
        );
    }
    b.push_str("<h2>Questions</h2>\n<p>Each question shows two highlightings of the same sentence pair. Pick the one the model actually produced.</p>\n");
    for q in &form.questions {
        let _ = writeln!(b, "<div class=\"box\" id=\"{}\"><p>{}</p>", q.question_id, q.question_id);
        for (label, p) in [("a", &q.a), ("b", &q.b)] {
            let _ = writeln!(
                b,
                "<p>({label}) orig: {}<br>pert: {}</p>",
                p.original.html(),
                p.perturbed.html()
            );
        }
        let _ = writeln!(
            b,
            "<p><label><input type=\"radio\" name=\"{0}\" value=\"a\"> a</label> <label><input type=\"radio\" name=\"{0}\" value=\"b\"> b</label></p></div>",
            q.question_id
        );
    }
    b.push_str("<h2>Feedback</h2>\n<p>How did you decide, and what did you notice about the model?</p>\n<textarea name=\"feedback\" rows=\"5\" cols=\"70\"></textarea>\n");
    page("Rationale matching", &b)
}

pub fn render_quality_html(form: &QualityForm) -> String {
    let mut b = String::new();
    b.push_str("<p>Sentence (a) is original, with the model's selected words in bold. Sentence (b) replaces the underlined word.</p>\n");
    for item in &form.items {
        let _ = writeln!(
            b,
            "<div class=\"box\" id=\"{}\"><p>{}</p><p>(a) {}</p><p>(b) {}</p><p>Original prediction: {}</p><ol>",
            item.item_id,
            item.item_id,
            item.original.html(),
            item.perturbed.html(),
            escape(&item.prediction)
        );
        for q in &form.questions {
            let _ = writeln!(b, "<li>{}</li>", escape(q));
        }
        b.push_str("</ol></div>\n");
    }
    page("Perturbation quality", &b)
}

/// One row of `responses.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub participant_id: String,
    pub question_id: String,
    pub choice: Choice,
}

pub fn read_responses(path: &Path) -> Result<Vec<Response>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let field = |name: &str, idx: usize| {
            row.get(idx)
                .map(str::to_string)
                .ok_or_else(|| Error::load(path, i + 2, format!("missing {name}")))
        };
        out.push(Response {
            participant_id: field("participant_id", 0)?,
            question_id: field("question_id", 1)?,
            choice: field("choice", 2)?
                .parse()
                .map_err(|e: Error| Error::load(path, i + 2, e.to_string()))?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingScore {
    pub n_correct: usize,
    pub n_total: usize,
    pub accuracy: f64,
    pub p_value: f64,
}

/// Exact two-sided binomial test of `k` successes in `n` trials at rate
/// `p`: total probability of outcomes no more likely than `k`.
pub fn binomial_test(k: usize, n: usize, p: f64) -> f64 {
    assert!(k <= n && (0.0..=1.0).contains(&p));
    let ln_pmf = |i: usize| {
        let (i64_, n64) = (i as u64, n as u64);
        ln_binomial(n64, i64_) + i as f64 * p.ln() + (n - i) as f64 * (1.0 - p).ln()
    };
    let observed = ln_pmf(k);
    let tol = 1e-7;
    let (mut inside, mut outside) = (0.0, 0.0);
    for l in (0..=n).map(ln_pmf) {
        if l <= observed + tol {
            inside += l.exp();
        } else {
            outside += l.exp();
        }
    }
    // sum whichever side is small, so neither tail loses precision
    if inside < outside {
        inside
    } else {
        (1.0 - outside).clamp(0.0, 1.0)
    }
}

/// Scores responses against the key. Unknown question ids are an error.
pub fn score_matching(responses: &[Response], key: &MatchingKey) -> Result<MatchingScore> {
    let unknown: BTreeSet<&str> = responses
        .iter()
        .filter(|r| !key.answers.contains_key(&r.question_id))
        .map(|r| r.question_id.as_str())
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Validation(format!(
            "responses reference unknown questions: {}",
            unknown.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let n_total = responses.len();
    let n_correct = responses.iter().filter(|r| key.answers[&r.question_id] == r.choice).count();
    let accuracy = if n_total == 0 { 0.0 } else { n_correct as f64 / n_total as f64 };
    Ok(MatchingScore {
        n_correct,
        n_total,
        accuracy,
        p_value: if n_total == 0 { 1.0 } else { binomial_test(n_correct, n_total, 0.5) },
    })
}

/// The key written as one participant's responses.
pub fn key_as_responses(key: &MatchingKey, participant: &str) -> Vec<Response> {
    key.answers
        .iter()
        .map(|(q, &c)| Response {
            participant_id: participant.to_string(),
            question_id: q.clone(),
            choice: c,
        })
        .collect()
}

/// Form JSON, HTML and the separate key, written into `dir`.
pub fn write_matching(form: &MatchingForm, key: &MatchingKey, dir: &Path) -> Result<()> {
    write_files(dir, &serde_json::to_string_pretty(form)?, &render_matching_html(form), &serde_json::to_string_pretty(key)?)
}

pub fn write_quality(form: &QualityForm, key: &QualityKey, dir: &Path) -> Result<()> {
    write_files(dir, &serde_json::to_string_pretty(form)?, &render_quality_html(form), &serde_json::to_string_pretty(key)?)
}

fn write_files(dir: &Path, json: &str, html: &str, key: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, body) in [("form.json", json), ("form.html", html), ("key.json", key)] {
        let path = dir.join(name);
        std::fs::write(&path, format!("{}\n", body.trim_end())).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
