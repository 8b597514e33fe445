//! A selector/classifier pair that reaches black-box accuracy while the
//! rationale carries the answer as a hidden code: a full-input classifier
//! c′ decides, a rule s′ encodes its decision in which tokens are selected,
//! and a rationale-only classifier c learns to read the code back.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rationale_nn::{clip_grad_norm, ops, Adam, AdamConfig};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Embeddings, Sentence, PAD_INDEX};
use crate::models::network::embed_batch;
use crate::models::{Classifier, Selector};
use crate::{Error, Result};

pub const NEGATIVE: usize = 0;
pub const POSITIVE: usize = 1;

const POLARITY_WORDS: &str = include_str!("../data/polarity_words.tsv");

/// Collapses five-way labels to binary: 0 and 1 become negative, 3 and 4
/// positive, and neutral sentences are dropped.
pub fn binarize(corpus: &Corpus) -> Corpus {
    let split = |xs: &[Sentence]| -> Vec<Sentence> {
        xs.iter()
            .filter(|s| s.label != 2)
            .map(|s| Sentence {
                label: u8::from(s.label > 2),
                ..s.clone()
            })
            .collect()
    };
    Corpus {
        train: split(&corpus.train),
        validation: split(&corpus.validation),
        test: split(&corpus.test),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CueScheme {
    /// First token for positive, first two for negative.
    Length,
    /// Three tokens closest to the positive or negative word list.
    Polarity,
}

impl CueScheme {
    pub fn name(self) -> &'static str {
        match self {
            CueScheme::Length => "length",
            CueScheme::Polarity => "polarity",
        }
    }

    pub fn cue_length(self, label: usize) -> usize {
        match self {
            CueScheme::Length if label == POSITIVE => 1,
            CueScheme::Length => 2,
            CueScheme::Polarity => 3,
        }
    }
}

impl std::str::FromStr for CueScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "length" | "length_parity" => Ok(CueScheme::Length),
            "polarity" | "polarity_top3" => Ok(CueScheme::Polarity),
            other => Err(Error::Config(format!("scheme: expected `length` or `polarity`, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for CueScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrojanConfig {
    pub seed: u64,
    pub hidden_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub max_grad_norm: f64,
    /// Use only the first N training sentences (0 = all).
    pub max_train_sentences: usize,
    /// Distilled selector must agree with s′ on at least this fraction of tokens.
    pub min_agreement: f64,
}

impl Default for TrojanConfig {
    fn default() -> Self {
        TrojanConfig {
            seed: 0,
            hidden_size: 100,
            epochs: 15,
            patience: 4,
            learning_rate: 1e-3,
            batch_size: 25,
            dropout: 0.3,
            max_grad_norm: 5.0,
            max_train_sentences: 0,
            min_agreement: 0.95,
        }
    }
}

impl TrojanConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("{field}: {why}")));
        if self.hidden_size == 0 {
            return bad("hidden_size", "must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", "must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.min_agreement) {
            return bad("min_agreement", "must be in [0, 1]");
        }
        Ok(())
    }
}

fn argmax2(logits: &[f32]) -> usize {
    usize::from(logits[1] > logits[0])
}

/// Binary BiLSTM classifier over a token-id sequence.
fn predict_ids(net: &Classifier, matrix: &Array2<f32>, ids: &[u32]) -> usize {
    let ids: &[u32] = if ids.is_empty() { &[PAD_INDEX] } else { ids };
    let (xs, lengths) = embed_batch(matrix, &[ids]);
    let (logits, _) = net.forward(&xs, &lengths, None);
    argmax2(&logits.row(0).to_vec())
}

fn batches(n: usize, examples: &[Vec<u32>], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut out = Vec::new();
    for pool in order.chunks(batch_size * 20) {
        let mut pool = pool.to_vec();
        pool.sort_by_key(|&i| examples[i].len());
        out.extend(pool.chunks(batch_size).map(<[usize]>::to_vec));
    }
    out.shuffle(rng);
    out
}

fn check_finite(loss: f64, norm: f64, seed: u64, epoch: usize) -> Result<()> {
    if loss.is_finite() && norm.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            seed,
            epoch,
            message: format!("non-finite loss {loss} or gradient norm {norm}"),
        })
    }
}

/// Supervised training with early stopping on validation accuracy.
fn train_classifier(
    matrix: &Array2<f32>,
    train: &[(Vec<u32>, usize)],
    validation: &[(Vec<u32>, usize)],
    config: &TrojanConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Classifier> {
    if train.is_empty() {
        return Err(Error::Validation("classifier training needs examples".into()));
    }
    let mut net = Classifier::new(matrix.ncols(), config.hidden_size, 2, rng);
    let mut adam = Adam::new(AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    });
    let seqs: Vec<Vec<u32>> = train
        .iter()
        .map(|(ids, _)| if ids.is_empty() { vec![PAD_INDEX] } else { ids.clone() })
        .collect();
    let accuracy = |net: &Classifier| {
        let hits = validation.iter().filter(|(ids, y)| predict_ids(net, matrix, ids) == *y).count();
        hits as f64 / validation.len().max(1) as f64
    };
    let mut best: Option<(f64, usize, Classifier)> = None;
    for epoch in 1..=config.epochs {
        for chunk in batches(train.len(), &seqs, config.batch_size, rng) {
            let batch: Vec<&[u32]> = chunk.iter().map(|&i| &seqs[i][..]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train[i].1).collect();
            let (xs, lengths) = embed_batch(matrix, &batch);
            let xs: Vec<Array2<f32>> = xs
                .iter()
                .map(|x| x * &ops::dropout_mask::<f32, _>(x.nrows(), x.ncols(), config.dropout, rng))
                .collect();
            let (logits, tape) = net.forward(&xs, &lengths, None);
            let weights = vec![1.0 / batch.len() as f32; batch.len()];
            let (losses, dlogits) = ops::cross_entropy(&logits.view(), &labels, &weights);
            net.backward(&tape, &dlogits.view());
            let norm = clip_grad_norm(&mut net, config.max_grad_norm);
            check_finite(f64::from(losses.sum()), norm, config.seed, epoch)?;
            adam.step(&mut net, "");
        }
        let acc = accuracy(&net);
        log::debug!("classifier epoch {epoch}: validation accuracy {acc:.4}");
        if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
            best = Some((acc, epoch, net.clone()));
        } else if best.as_ref().is_some_and(|(_, e, _)| epoch - e >= config.patience) {
            break;
        }
    }
    Ok(best.map(|(_, _, n)| n).unwrap_or(net))
}

/// c′: sees the whole sentence.
#[derive(Debug, Clone)]
pub struct BlackBoxClassifier {
    pub net: Classifier,
}

impl BlackBoxClassifier {
    pub fn train(corpus: &Corpus, embeddings: &Embeddings, config: &TrojanConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let data = |xs: &[Sentence]| -> Vec<(Vec<u32>, usize)> {
            xs.iter()
                .map(|s| (embeddings.indices(&s.tokens), usize::from(s.label)))
                .collect()
        };
        let train = data(limit(&corpus.train, config.max_train_sentences));
        let net = train_classifier(&embeddings.matrix, &train, &data(&corpus.validation), config, rng)?;
        Ok(BlackBoxClassifier { net })
    }

    pub fn predict(&self, embeddings: &Embeddings, tokens: &[String]) -> usize {
        predict_ids(&self.net, &embeddings.matrix, &embeddings.indices(tokens))
    }
}

fn limit(xs: &[Sentence], n: usize) -> &[Sentence] {
    if n == 0 {
        xs
    } else {
        &xs[..n.min(xs.len())]
    }
}

/// Positive and negative reference words for the polarity scheme.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolarityLists {
    pub positive: Vec<String>,
    pub negative: Vec<String>,
}

impl PolarityLists {
    /// The shipped 25 + 25 adjective list.
    pub fn bundled() -> Self {
        Self::from_tsv(POLARITY_WORDS).expect("bundled polarity list parses")
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lists = PolarityLists {
            positive: Vec::new(),
            negative: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('\t') {
                Some(("positive", w)) => lists.positive.push(w.trim().to_lowercase()),
                Some(("negative", w)) => lists.negative.push(w.trim().to_lowercase()),
                _ => {
                    return Err(Error::Validation(format!(
                        "polarity list line {}: expected `positive|negative<TAB>word`",
                        i + 1
                    )))
                }
            }
        }
        Ok(lists)
    }
}

/// Outcome of s′ on one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueSelection {
    pub mask: Vec<bool>,
    /// Sentence shorter than the cue, so everything was selected.
    pub degenerate: bool,
}

impl CueSelection {
    pub fn rationale(&self, tokens: &[String]) -> Vec<String> {
        tokens
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(t, _)| t.clone())
            .collect()
    }
}

/// s′: a fixed rule keyed on c′'s prediction.
#[derive(Debug, Clone)]
pub struct CueSelector {
    pub scheme: CueScheme,
    /// Vocabulary ids of the list words that have vectors.
    positive_ids: Vec<u32>,
    negative_ids: Vec<u32>,
}

impl CueSelector {
    pub fn new(scheme: CueScheme, lists: &PolarityLists, embeddings: &Embeddings) -> Result<Self> {
        let known = |words: &[String]| -> Vec<u32> { words.iter().filter_map(|w| embeddings.vocab.get(w)).collect() };
        let (positive_ids, negative_ids) = (known(&lists.positive), known(&lists.negative));
        if scheme == CueScheme::Polarity && (positive_ids.is_empty() || negative_ids.is_empty()) {
            return Err(Error::Config(
                "polarity list: no positive or no negative word has an embedding".into(),
            ));
        }
        Ok(CueSelector {
            scheme,
            positive_ids,
            negative_ids,
        })
    }

    /// Smallest cosine distance from `token` to the list for `label`.
    pub fn distance(&self, embeddings: &Embeddings, token: &str, label: usize) -> f32 {
        let ids = if label == POSITIVE { &self.positive_ids } else { &self.negative_ids };
        let t = embeddings.index(token);
        ids.iter().map(|&w| 1.0 - embeddings.cosine(t, w)).fold(f32::INFINITY, f32::min)
    }

    pub fn select(&self, embeddings: &Embeddings, tokens: &[String], label: usize) -> CueSelection {
        let n = tokens.len();
        let k = self.scheme.cue_length(label);
        if n < k || (n == k && self.scheme == CueScheme::Polarity) {
            return CueSelection {
                mask: vec![true; n],
                degenerate: n < k,
            };
        }
        let mut mask = vec![false; n];
        match self.scheme {
            CueScheme::Length => mask[..k].iter_mut().for_each(|m| *m = true),
            CueScheme::Polarity => {
                let mut order: Vec<(f32, usize)> = tokens
                    .iter()
                    .enumerate()
                    .map(|(i, t)| (self.distance(embeddings, t, label), i))
                    .collect();
                order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for &(_, i) in &order[..k] {
                    mask[i] = true;
                }
            }
        }
        CueSelection { mask, degenerate: false }
    }
}

/// Reads the length code back: one token is positive, two negative.
pub fn decode_cue<S>(rationale: &[S]) -> Result<usize> {
    match rationale.len() {
        1 => Ok(POSITIVE),
        2 => Ok(NEGATIVE),
        n => Err(Error::Validation(format!("cue channel broken: rationale has {n} tokens"))),
    }
}

/// c: sees only the rationale tokens.
#[derive(Debug, Clone)]
pub struct CueClassifier {
    pub net: Classifier,
}

impl CueClassifier {
    /// Trained on (rationale, label) pairs. Empty rationales are read as
    /// a single padding token.
    pub fn train(
        matrix: &Array2<f32>,
        train: &[(Vec<u32>, usize)],
        validation: &[(Vec<u32>, usize)],
        config: &TrojanConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(CueClassifier {
            net: train_classifier(matrix, train, validation, config, rng)?,
        })
    }

    pub fn predict(&self, embeddings: &Embeddings, rationale: &[String]) -> usize {
        predict_ids(&self.net, &embeddings.matrix, &embeddings.indices(rationale))
    }

    /// Applies `mask` to `tokens` first, so unselected tokens cannot matter.
    pub fn predict_masked(&self, embeddings: &Embeddings, tokens: &[String], mask: &[bool]) -> usize {
        let rationale: Vec<String> = tokens
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(t, _)| t.clone())
            .collect();
        self.predict(embeddings, &rationale)
    }
}

/// s: a neural selector trained to reproduce c′→s′ masks token by token.
#[derive(Debug, Clone)]
pub struct DistilledSelector {
    pub net: Selector,
}

impl DistilledSelector {
    pub fn train(
        matrix: &Array2<f32>,
        train: &[(Vec<u32>, Vec<bool>)],
        validation: &[(Vec<u32>, Vec<bool>)],
        config: &TrojanConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let train: Vec<&(Vec<u32>, Vec<bool>)> = train.iter().filter(|(ids, _)| !ids.is_empty()).collect();
        if train.is_empty() {
            return Err(Error::Validation("distillation needs nonempty sentences".into()));
        }
        let mut student = DistilledSelector {
            net: Selector::new(matrix.ncols(), config.hidden_size, 1, rng),
        };
        let mut adam = Adam::new(AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        });
        let seqs: Vec<Vec<u32>> = train.iter().map(|(ids, _)| ids.clone()).collect();
        let mut best: Option<(f64, usize, Selector)> = None;
        for epoch in 1..=config.epochs {
            for chunk in batches(train.len(), &seqs, config.batch_size, rng) {
                let batch: Vec<&[u32]> = chunk.iter().map(|&i| &seqs[i][..]).collect();
                let (xs, lengths) = embed_batch(matrix, &batch);
                let (heads, tape) = student.net.forward(&xs, &lengths);
                let tokens: usize = lengths.iter().sum();
                let scale = 1.0 / tokens as f32;
                let mut loss = 0.0f64;
                let d_heads: Vec<Array2<f32>> = heads
                    .iter()
                    .enumerate()
                    .map(|(t, h)| {
                        let mut d = Array2::zeros(h.raw_dim());
                        for (b, &i) in chunk.iter().enumerate() {
                            if t < lengths[b] {
                                let y = if train[i].1[t] { 1.0 } else { 0.0 };
                                let s = h[[b, 0]];
                                // BCE with logits
                                loss += f64::from(ops::softplus(s) - y * s);
                                d[[b, 0]] = (ops::sigmoid(s) - y) * scale;
                            }
                        }
                        d
                    })
                    .collect();
                student.net.backward(&tape, &d_heads);
                let norm = clip_grad_norm(&mut student.net, config.max_grad_norm);
                check_finite(loss, norm, config.seed, epoch)?;
                adam.step(&mut student.net, "");
            }
            let agreement = student.agreement(matrix, validation);
            log::debug!("distillation epoch {epoch}: validation agreement {agreement:.4}");
            if best.as_ref().is_none_or(|(b, _, _)| agreement > *b) {
                best = Some((agreement, epoch, student.net.clone()));
            } else if best.as_ref().is_some_and(|(_, e, _)| epoch - e >= config.patience) {
                break;
            }
        }
        if let Some((_, _, net)) = best {
            student.net = net;
        }
        Ok(student)
    }

    pub fn select_ids(&self, matrix: &Array2<f32>, ids: &[u32]) -> Result<Vec<bool>> {
        if ids.is_empty() {
            return Err(Error::Validation("selector input must be nonempty".into()));
        }
        let (xs, lengths) = embed_batch(matrix, &[ids]);
        let (heads, _) = self.net.forward(&xs, &lengths);
        Ok(heads.iter().map(|h| h[[0, 0]] > 0.0).collect())
    }

    pub fn select(&self, embeddings: &Embeddings, tokens: &[String]) -> Result<Vec<bool>> {
        self.select_ids(&embeddings.matrix, &embeddings.indices(tokens))
    }

    /// Fraction of tokens where the mask matches the target.
    pub fn agreement(&self, matrix: &Array2<f32>, data: &[(Vec<u32>, Vec<bool>)]) -> f64 {
        let (mut same, mut total) = (0usize, 0usize);
        for (ids, target) in data.iter().filter(|(ids, _)| !ids.is_empty()) {
            let mask = self.select_ids(matrix, ids).expect("nonempty");
            same += mask.iter().zip(target).filter(|(a, b)| a == b).count();
            total += ids.len();
        }
        if total == 0 {
            0.0
        } else {
            same as f64 / total as f64
        }
    }
}

/// One row of the trojan table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrojanReport {
    pub scheme: CueScheme,
    pub seed: u64,
    pub train_sentences: usize,
    pub test_sentences: usize,
    pub majority_baseline: f64,
    /// A₀: c′ accuracy on the binary test split.
    pub blackbox_accuracy: f64,
    /// c′→s′→c accuracy against gold labels.
    pub pipeline_accuracy: f64,
    /// Rule decoding of s′ rationales agreeing with c′ (length scheme only).
    pub decode_accuracy: Option<f64>,
    /// c agreeing with c′ on s′ rationales.
    pub imitation_accuracy: f64,
    /// Same, for a c trained on shuffled labels.
    pub shuffled_imitation_accuracy: f64,
    pub distillation_agreement: f64,
    pub distillation_ok: bool,
    /// s→c accuracy against gold labels.
    pub distilled_pipeline_accuracy: f64,
    /// How often the distilled selector picks the first token, and how often
    /// it picks the second when c′ says negative vs positive.
    pub student_first_token_rate: f64,
    pub student_second_token_rate_negative: f64,
    pub student_second_token_rate_positive: f64,
    pub degenerate: usize,
}

/// All trained parts plus the report.
#[derive(Debug, Clone)]
pub struct Trojan {
    pub blackbox: BlackBoxClassifier,
    pub selector: CueSelector,
    pub cue: CueClassifier,
    pub student: DistilledSelector,
    pub report: TrojanReport,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Trains c′, builds s′, trains c and a control c on shuffled labels, then
/// distils s. Expects an already binarized corpus.
pub fn run(corpus: &Corpus, embeddings: &Embeddings, scheme: CueScheme, lists: &PolarityLists, config: &TrojanConfig) -> Result<Trojan> {
    config.validate()?;
    if corpus.iter().any(|s| s.label > 1) {
        return Err(Error::Validation("trojan expects a binarized corpus".into()));
    }
    if corpus.train.is_empty() || corpus.validation.is_empty() || corpus.test.is_empty() {
        return Err(Error::Validation("trojan needs nonempty train, validation and test splits".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let matrix = &embeddings.matrix;
    let blackbox = BlackBoxClassifier::train(corpus, embeddings, config, &mut rng)?;
    let selector = CueSelector::new(scheme, lists, embeddings)?;

    struct Row {
        ids: Vec<u32>,
        mask: Vec<bool>,
        teacher: usize,
        gold: usize,
        degenerate: bool,
    }
    let rows = |xs: &[Sentence]| -> Vec<Row> {
        xs.iter()
            .map(|s| {
                let teacher = blackbox.predict(embeddings, &s.tokens);
                let sel = selector.select(embeddings, &s.tokens, teacher);
                Row {
                    ids: embeddings.indices(&s.tokens),
                    mask: sel.mask,
                    teacher,
                    gold: usize::from(s.label),
                    degenerate: sel.degenerate,
                }
            })
            .collect()
    };
    let train_rows = rows(limit(&corpus.train, config.max_train_sentences));
    let val_rows = rows(&corpus.validation);
    let test_rows = rows(&corpus.test);
    let rationale = |r: &Row| -> Vec<u32> { r.ids.iter().zip(&r.mask).filter(|(_, &m)| m).map(|(&i, _)| i).collect() };
    let cue_data = |rs: &[Row]| -> Vec<(Vec<u32>, usize)> { rs.iter().map(|r| (rationale(r), r.teacher)).collect() };

    let cue_train = cue_data(&train_rows);
    let cue_val = cue_data(&val_rows);
    let cue = CueClassifier::train(matrix, &cue_train, &cue_val, config, &mut rng)?;

    let mut shuffled_labels: Vec<usize> = cue_train.iter().map(|(_, y)| *y).collect();
    shuffled_labels.shuffle(&mut rng);
    let shuffled_train: Vec<(Vec<u32>, usize)> = cue_train
        .iter()
        .zip(shuffled_labels)
        .map(|((ids, _), y)| (ids.clone(), y))
        .collect();
    let mut val_labels: Vec<usize> = cue_val.iter().map(|(_, y)| *y).collect();
    val_labels.shuffle(&mut rng);
    let shuffled_val: Vec<(Vec<u32>, usize)> = cue_val.iter().zip(val_labels).map(|((ids, _), y)| (ids.clone(), y)).collect();
    let control = CueClassifier::train(matrix, &shuffled_train, &shuffled_val, config, &mut rng)?;

    let mask_data = |rs: &[Row]| -> Vec<(Vec<u32>, Vec<bool>)> { rs.iter().map(|r| (r.ids.clone(), r.mask.clone())).collect() };
    let student = DistilledSelector::train(matrix, &mask_data(&train_rows), &mask_data(&val_rows), config, &mut rng)?;

    let n = test_rows.len();
    let positives = test_rows.iter().filter(|r| r.gold == POSITIVE).count();
    let (mut a0, mut pipe, mut decoded, mut imitate, mut control_hits, mut student_hits) = (0, 0, 0, 0, 0, 0);
    let (mut first, mut second_neg, mut neg, mut second_pos, mut pos) = (0, 0, 0, 0, 0);
    for r in &test_rows {
        let rat = rationale(r);
        let c = predict_ids(&cue.net, matrix, &rat);
        a0 += usize::from(r.teacher == r.gold);
        pipe += usize::from(c == r.gold);
        imitate += usize::from(c == r.teacher);
        control_hits += usize::from(predict_ids(&control.net, matrix, &rat) == r.teacher);
        if scheme == CueScheme::Length {
            decoded += usize::from(decode_cue(&rat).ok() == Some(r.teacher));
        }
        let m = student.select_ids(matrix, &r.ids)?;
        let student_rat: Vec<u32> = r.ids.iter().zip(&m).filter(|(_, &k)| k).map(|(&i, _)| i).collect();
        student_hits += usize::from(predict_ids(&cue.net, matrix, &student_rat) == r.gold);
        first += usize::from(m[0]);
        if m.len() > 1 {
            if r.teacher == NEGATIVE {
                neg += 1;
                second_neg += usize::from(m[1]);
            } else {
                pos += 1;
                second_pos += usize::from(m[1]);
            }
        }
    }
    let agreement = student.agreement(matrix, &mask_data(&test_rows));
    if agreement < config.min_agreement {
        log::warn!(
            "distillation failed: token agreement {agreement:.4} below {:.2}",
            config.min_agreement
        );
    }
    let report = TrojanReport {
        scheme,
        seed: config.seed,
        train_sentences: train_rows.len(),
        test_sentences: n,
        majority_baseline: ratio(positives.max(n - positives), n),
        blackbox_accuracy: ratio(a0, n),
        pipeline_accuracy: ratio(pipe, n),
        decode_accuracy: (scheme == CueScheme::Length).then(|| ratio(decoded, n)),
        imitation_accuracy: ratio(imitate, n),
        shuffled_imitation_accuracy: ratio(control_hits, n),
        distillation_agreement: agreement,
        distillation_ok: agreement >= config.min_agreement,
        distilled_pipeline_accuracy: ratio(student_hits, n),
        student_first_token_rate: ratio(first, n),
        student_second_token_rate_negative: ratio(second_neg, neg),
        student_second_token_rate_positive: ratio(second_pos, pos),
        degenerate: test_rows.iter().filter(|r| r.degenerate).count(),
    };
    Ok(Trojan {
        blackbox,
        selector,
        cue,
        student,
        report,
    })
}

const COLUMNS: [&str; 17] = [
    "scheme",
    "seed",
    "train_sentences",
    "test_sentences",
    "majority_baseline",
    "blackbox_accuracy",
    "pipeline_accuracy",
    "decode_accuracy",
    "imitation_accuracy",
    "shuffled_imitation_accuracy",
    "distillation_agreement",
    "distillation_ok",
    "distilled_pipeline_accuracy",
    "student_first_token_rate",
    "student_second_token_rate_negative",
    "student_second_token_rate_positive",
    "degenerate",
];

fn cells(r: &TrojanReport) -> Vec<String> {
    let f = |v: f64| format!("{v:.4}");
    vec![
        r.scheme.to_string(),
        r.seed.to_string(),
        r.train_sentences.to_string(),
        r.test_sentences.to_string(),
        f(r.majority_baseline),
        f(r.blackbox_accuracy),
        f(r.pipeline_accuracy),
        r.decode_accuracy.map_or_else(|| "NA".into(), f),
        f(r.imitation_accuracy),
        f(r.shuffled_imitation_accuracy),
        f(r.distillation_agreement),
        r.distillation_ok.to_string(),
        f(r.distilled_pipeline_accuracy),
        f(r.student_first_token_rate),
        f(r.student_second_token_rate_negative),
        f(r.student_second_token_rate_positive),
        r.degenerate.to_string(),
    ]
}

/// `trojan.csv`, `trojan.json` and a plain-text table `trojan.txt`.
pub fn write_report(reports: &[TrojanReport], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("trojan.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(COLUMNS)?;
    for r in reports {
        w.write_record(cells(r))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let json_path = dir.join("trojan.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(reports)? + "\n").map_err(|e| Error::io(&json_path, e))?;
    let txt_path = dir.join("trojan.txt");
    std::fs::write(&txt_path, render_text(reports)).map_err(|e| Error::io(&txt_path, e))
}

pub fn render_text(reports: &[TrojanReport]) -> String {
    let width = COLUMNS.iter().map(|c| c.len()).max().unwrap_or(0);
    let mut s = String::new();
    for r in reports {
        for (name, value) in COLUMNS.iter().zip(cells(r)) {
            let _ = writeln!(s, "{name:<width$}  {value}");
        }
        let gap = 100.0 * (r.pipeline_accuracy - r.blackbox_accuracy);
        let _ = writeln!(s, "{:<width$}  {gap:+.2} points\n", "pipeline - blackbox");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocab;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn emb() -> Embeddings {
        let words = toks("good bad film the plot great awful");
        let rows = [
            1.0, 0.0, 0.0, //
            -1.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, //
            0.0, 0.0, 1.0, //
            0.1, 1.0, 0.0, //
            0.9, 0.1, 0.0, //
            -0.9, 0.0, 0.1,
        ];
        Embeddings::from_rows(words, 3, &rows)
    }

    #[test]
    fn binarize_drops_neutral() {
        let s = |id, label| Sentence::new(id, toks("a b"), toks("DT NN"), label).unwrap();
        let c = Corpus {
            train: (0..5).map(|l| s(l as u32, l)).collect(),
            validation: vec![s(9, 2)],
            test: vec![s(10, 4), s(11, 1)],
        };
        let b = binarize(&c);
        assert_eq!(b.train.iter().map(|s| s.label).collect::<Vec<_>>(), [0, 0, 1, 1]);
        assert!(b.validation.is_empty());
        assert_eq!(b.test.iter().map(|s| (s.id, s.label)).collect::<Vec<_>>(), [(10, 1), (11, 0)]);
    }

    #[test]
    fn length_cue_rule_and_decoding() {
        let e = emb();
        let sel = CueSelector::new(CueScheme::Length, &PolarityLists::bundled(), &e).unwrap();
        let x = toks("the plot good film");
        let pos = sel.select(&e, &x, POSITIVE);
        assert_eq!(pos.rationale(&x), ["the"]);
        let neg = sel.select(&e, &x, NEGATIVE);
        assert_eq!(neg.rationale(&x), ["the", "plot"]);
        assert_eq!(decode_cue(&["Escapism"]).unwrap(), POSITIVE);
        assert_eq!(decode_cue(&["The", "story"]).unwrap(), NEGATIVE);
        assert!(decode_cue::<&str>(&[]).is_err());
        assert!(decode_cue(&["a", "b", "c"]).unwrap_err().to_string().contains("3 tokens"));
        let short = sel.select(&e, &toks("good"), NEGATIVE);
        assert!(short.degenerate && short.mask == [true]);
    }

    #[test]
    fn polarity_cue_picks_nearest_words() {
        let e = emb();
        let sel = CueSelector::new(CueScheme::Polarity, &PolarityLists::bundled(), &e).unwrap();
        let x = toks("the good film bad plot");
        let pos = sel.select(&e, &x, POSITIVE);
        assert!(pos.mask[1] && !pos.degenerate);
        assert_eq!(pos.mask.iter().filter(|&&m| m).count(), 3);
        let neg = sel.select(&e, &x, NEGATIVE);
        assert!(neg.mask[3]);
        let three = toks("the film plot");
        assert_eq!(sel.select(&e, &three, POSITIVE).mask, [true; 3]);
        let empty = Embeddings::from_parts(Vocab::default(), Array2::zeros((2, 3))).unwrap();
        assert!(CueSelector::new(CueScheme::Polarity, &PolarityLists::bundled(), &empty).is_err());
    }

    #[test]
    fn bundled_list_is_balanced() {
        let l = PolarityLists::bundled();
        assert_eq!((l.positive.len(), l.negative.len()), (25, 25));
        assert!(PolarityLists::from_tsv("neutral\tmeh").is_err());
    }

    #[test]
    fn cue_classifier_ignores_unselected_tokens() {
        let e = emb();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cue = CueClassifier {
            net: Classifier::new(3, 4, 2, &mut rng),
        };
        let mask = [true, false, true, false];
        let a = cue.predict_masked(&e, &toks("good bad film awful"), &mask);
        for other in ["good great film the", "good plot film good", "good zzz film bad"] {
            assert_eq!(cue.predict_masked(&e, &toks(other), &mask), a);
        }
    }

    #[test]
    fn student_rejects_empty_input() {
        let e = emb();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = DistilledSelector {
            net: Selector::new(3, 4, 1, &mut rng),
        };
        assert!(s.select(&e, &[]).is_err());
        assert_eq!(s.select(&e, &toks("good film")).unwrap().len(), 2);
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("length".parse::<CueScheme>().unwrap(), CueScheme::Length);
        assert_eq!("POLARITY_TOP3".parse::<CueScheme>().unwrap(), CueScheme::Polarity);
        assert!("x".parse::<CueScheme>().is_err());
    }
}
