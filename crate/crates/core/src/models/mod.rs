//! Selector-classifier rationale models: a Kumaraswamy-gate model (CR) and a
//! Bernoulli policy-gradient model (PG).

mod checkpoint;
pub mod gates;
pub mod network;
pub mod reinforce;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use network::{Classifier, RationaleNet, Selector};
pub use train::{train, train_cr, train_pg, EpochMetrics};

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Embeddings, Sentence, NUM_LABELS};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cr,
    Pg,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Cr => "cr",
            ModelKind::Pg => "pg",
        }
    }

    fn head_outputs(self) -> usize {
        match self {
            ModelKind::Cr => 2,
            ModelKind::Pg => 1,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cr" => Ok(ModelKind::Cr),
            "pg" => Ok(ModelKind::Pg),
            other => Err(Error::Config(format!("model: expected `cr` or `pg`, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub seed: u64,
    /// CR: expected fraction of tokens with a non-zero gate.
    pub target_selection_rate: f64,
    /// PG: weight of the selection-count penalty.
    pub l0_penalty_weight: f64,
    /// PG: transitions are penalised at `l0_penalty_weight * coherence_factor`.
    pub coherence_factor: f64,
    pub epochs: usize,
    /// Stop after this many epochs without a better validation accuracy.
    pub patience: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub hidden_size: usize,
    pub dropout: f64,
    pub max_grad_norm: f64,
    pub lagrange_alpha: f64,
    pub lagrange_lr: f64,
    pub lambda_init: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub baseline_decay: f64,
    /// Use only the first N training sentences (0 = all).
    pub max_train_sentences: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: ModelKind::Cr,
            seed: 0,
            target_selection_rate: 0.3,
            l0_penalty_weight: 0.01505,
            coherence_factor: 1.0,
            epochs: 25,
            patience: 5,
            learning_rate: 1e-4,
            weight_decay: 0.0,
            batch_size: 25,
            hidden_size: 150,
            dropout: 0.5,
            max_grad_norm: 5.0,
            lagrange_alpha: 0.5,
            lagrange_lr: 0.05,
            lambda_init: 0.0015,
            lambda_min: 1e-12,
            lambda_max: 5.0,
            baseline_decay: 0.9,
            max_train_sentences: 0,
        }
    }
}

impl TrainConfig {
    pub fn new(kind: ModelKind) -> Self {
        TrainConfig {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("{field}: {why}")));
        if !(self.target_selection_rate > 0.0 && self.target_selection_rate <= 1.0) {
            return bad("target_selection_rate", "must be in (0, 1]");
        }
        if !(self.l0_penalty_weight >= 0.0) {
            return bad("l0_penalty_weight", "must be non-negative");
        }
        if !(self.coherence_factor >= 0.0) {
            return bad("coherence_factor", "must be non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.hidden_size == 0 {
            return bad("hidden_size", "must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", "must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.lagrange_alpha) || !(0.0..1.0).contains(&self.baseline_decay) {
            return bad("lagrange_alpha/baseline_decay", "must be in [0, 1)");
        }
        if !(self.lambda_min > 0.0 && self.lambda_min <= self.lambda_init && self.lambda_init <= self.lambda_max) {
            return bad("lambda_init", "must satisfy lambda_min <= lambda_init <= lambda_max");
        }
        Ok(())
    }
}

/// One sentence's selection and prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationaleTrace {
    pub sentence_id: u32,
    /// Index into the perturbed dataset when this trace is of a perturbed
    /// sentence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<u32>,
    pub model: ModelKind,
    pub seed: u64,
    pub tokens: Vec<String>,
    pub mask: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gates: Option<Vec<f32>>,
    pub pred: u8,
    pub gold: u8,
}

impl RationaleTrace {
    pub fn selected(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mask.len() != self.tokens.len() {
            return Err(Error::Integrity(format!(
                "trace for sentence {}: {} mask entries for {} tokens",
                self.sentence_id,
                self.mask.len(),
                self.tokens.len()
            )));
        }
        if usize::from(self.pred) >= NUM_LABELS {
            return Err(Error::Integrity(format!("trace for sentence {}: bad prediction", self.sentence_id)));
        }
        if let Some(g) = &self.gates {
            let consistent = g.len() == self.mask.len()
                && g.iter().zip(&self.mask).all(|(&z, &m)| m == (f64::from(z) > gates::ZERO_EPS));
            if !consistent {
                return Err(Error::Integrity(format!(
                    "trace for sentence {}: gates disagree with mask",
                    self.sentence_id
                )));
            }
        }
        Ok(())
    }
}

/// Per-token selection at evaluation time.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorOutput {
    /// Effective gate: exactly 0 wherever `mask` is false.
    pub gates: Vec<f32>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub sentences: usize,
    pub accuracy: f64,
    pub selection_rate: f64,
    pub label_histogram: [f64; NUM_LABELS],
}

impl EvalMetrics {
    pub fn from_traces(traces: &[RationaleTrace]) -> Self {
        let n = traces.len();
        let correct = traces.iter().filter(|t| t.pred == t.gold).count();
        let tokens: usize = traces.iter().map(|t| t.mask.len()).sum();
        let selected: usize = traces.iter().map(RationaleTrace::selected).sum();
        let mut counts = [0usize; NUM_LABELS];
        for t in traces {
            counts[usize::from(t.pred)] += 1;
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        EvalMetrics {
            sentences: n,
            accuracy: ratio(correct, n),
            selection_rate: ratio(selected, tokens),
            label_histogram: counts.map(|c| ratio(c, n)),
        }
    }
}

/// Eval-mode selection for one sentence.
fn select(net: &RationaleNet, kind: ModelKind, matrix: &Array2<f32>, ids: &[u32]) -> SelectorOutput {
    let (xs, lengths) = network::embed_batch(matrix, &[ids]);
    let (heads, _) = net.selector.forward(&xs, &lengths);
    let mut gates = Vec::with_capacity(ids.len());
    let mut mask = Vec::with_capacity(ids.len());
    for h in &heads {
        let (z, m) = match kind {
            ModelKind::Cr => {
                let (a, _) = gates::shape(f64::from(h[[0, 0]]));
                let (b, _) = gates::shape(f64::from(h[[0, 1]]));
                let z = gates::eval_gate(a, b) as f32;
                let m = f64::from(z) > gates::ZERO_EPS;
                (if m { z } else { 0.0 }, m)
            }
            ModelKind::Pg => {
                // sigmoid(s) > 0.5 exactly when s > 0
                let m = h[[0, 0]] > 0.0;
                (if m { 1.0 } else { 0.0 }, m)
            }
        };
        gates.push(z);
        mask.push(m);
    }
    SelectorOutput { gates, mask }
}

/// Classifier logits given explicit token vectors and gates. Tokens with a
/// zero gate contribute an all-zero input whatever their vector is.
pub fn classifier_logits(classifier: &Classifier, vectors: &[ArrayView1<f32>], gates: &[f32]) -> Vec<f32> {
    let dim = vectors.first().map_or(0, |v| v.len());
    let xs: Vec<Array2<f32>> = vectors
        .iter()
        .zip(gates)
        .map(|(v, &z)| {
            let mut x = Array2::zeros((1, dim));
            if z != 0.0 {
                x.row_mut(0).assign(&v.mapv(|e| e * z));
            }
            x
        })
        .collect();
    let (logits, _) = classifier.forward(&xs, &[vectors.len()], None);
    logits.row(0).to_vec()
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn trace_with(
    net: &RationaleNet,
    kind: ModelKind,
    seed: u64,
    embeddings: &Embeddings,
    sentence: &Sentence,
) -> RationaleTrace {
    let ids = embeddings.indices(&sentence.tokens);
    let sel = select(net, kind, &embeddings.matrix, &ids);
    let vectors: Vec<ArrayView1<f32>> = ids.iter().map(|&i| embeddings.vector(i)).collect();
    let logits = classifier_logits(&net.classifier, &vectors, &sel.gates);
    RationaleTrace {
        sentence_id: sentence.id,
        perturbation: None,
        model: kind,
        seed,
        tokens: sentence.tokens.clone(),
        mask: sel.mask,
        gates: (kind == ModelKind::Cr).then_some(sel.gates),
        pred: argmax(&logits) as u8,
        gold: sentence.label,
    }
}

/// A trained model together with the frozen embeddings it reads.
#[derive(Debug, Clone)]
pub struct RationaleModel {
    pub config: TrainConfig,
    pub embeddings: Embeddings,
    pub net: RationaleNet,
}

impl RationaleModel {
    /// Freshly initialised (untrained) model.
    pub fn new<R: Rng + ?Sized>(config: TrainConfig, embeddings: Embeddings, rng: &mut R) -> Self {
        let dim = embeddings.dim();
        let net = RationaleNet {
            selector: Selector::new(dim, config.hidden_size, config.kind.head_outputs(), rng),
            classifier: Classifier::new(dim, config.hidden_size, NUM_LABELS, rng),
        };
        RationaleModel { config, embeddings, net }
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn select(&self, tokens: &[String]) -> SelectorOutput {
        let ids = self.embeddings.indices(tokens);
        select(&self.net, self.kind(), &self.embeddings.matrix, &ids)
    }

    /// Deterministic rationale and prediction for one sentence.
    pub fn extract_rationale(&self, sentence: &Sentence) -> RationaleTrace {
        trace_with(&self.net, self.kind(), self.seed(), &self.embeddings, sentence)
    }

    /// Traces every sentence (in parallel, order preserved).
    pub fn trace_all(&self, sentences: &[Sentence]) -> Vec<RationaleTrace> {
        use rayon::prelude::*;
        sentences.par_iter().map(|s| self.extract_rationale(s)).collect()
    }

    pub fn evaluate(&self, sentences: &[Sentence]) -> EvalMetrics {
        EvalMetrics::from_traces(&self.trace_all(sentences))
    }

    pub fn num_parameters(&self) -> usize {
        use rationale_nn::Parameterized;
        self.net.num_parameters()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(kind: ModelKind) -> (RationaleModel, Sentence) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let words: Vec<String> = ["good", "bad", "film", "the"].iter().map(|s| s.to_string()).collect();
        let rows: Vec<f32> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let emb = Embeddings::from_rows(words, 4, &rows);
        let mut config = TrainConfig::new(kind);
        config.hidden_size = 3;
        let model = RationaleModel::new(config, emb, &mut rng);
        let tokens: Vec<String> = ["the", "good", "film", "zzz"].iter().map(|s| s.to_string()).collect();
        let s = Sentence::new(9, tokens, vec!["DT".into(), "JJ".into(), "NN".into(), "NN".into()], 3).unwrap();
        (model, s)
    }

    #[test]
    fn traces_are_deterministic_and_consistent() {
        for kind in [ModelKind::Cr, ModelKind::Pg] {
            let (model, s) = toy(kind);
            let a = model.extract_rationale(&s);
            let b = model.extract_rationale(&s);
            assert_eq!(a, b);
            a.validate().unwrap();
            assert_eq!(a.gates.is_some(), kind == ModelKind::Cr);
        }
    }

    #[test]
    fn all_zero_gates_still_predict() {
        let (model, s) = toy(ModelKind::Cr);
        let ids = model.embeddings.indices(&s.tokens);
        let vectors: Vec<_> = ids.iter().map(|&i| model.embeddings.vector(i)).collect();
        let logits = classifier_logits(&model.net.classifier, &vectors, &[0.0; 4]);
        assert_eq!(logits.len(), NUM_LABELS);
        assert!(logits.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn evaluate_agrees_with_emitted_traces() {
        for kind in [ModelKind::Cr, ModelKind::Pg] {
            let (model, s) = toy(kind);
            let mut other = s.clone();
            other.id = 10;
            other.tokens = vec!["bad".into(), "film".into()];
            other.pos = vec!["JJ".into(), "NN".into()];
            let sentences = [s, other];
            assert_eq!(model.evaluate(&sentences), EvalMetrics::from_traces(&model.trace_all(&sentences)));
        }
    }

    proptest::proptest! {
        #[test]
        fn unselected_content_never_reaches_the_classifier(
            seed in 0u64..1000,
            gates in proptest::collection::vec(proptest::prop_oneof![
                proptest::strategy::Just(0.0f32),
                proptest::strategy::Just(1.0f32),
                0.001f32..1.0,
            ], 1..12),
        ) {
            let (model, _) = toy(ModelKind::Cr);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dim = model.embeddings.dim();
            let a: Vec<Array1<f32>> = gates.iter().map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let b: Vec<Array1<f32>> = a
                .iter()
                .zip(&gates)
                .map(|(v, &z)| if z == 0.0 { v.mapv(|_| rng.random_range(-9.0..9.0)) } else { v.clone() })
                .collect();
            let va: Vec<_> = a.iter().map(|x| x.view()).collect();
            let vb: Vec<_> = b.iter().map(|x| x.view()).collect();
            let la = classifier_logits(&model.net.classifier, &va, &gates);
            let lb = classifier_logits(&model.net.classifier, &vb, &gates);
            proptest::prop_assert_eq!(la, lb);
        }
    }

    #[test]
    fn metrics_from_traces() {
        let t = |pred, gold, mask: Vec<bool>| RationaleTrace {
            sentence_id: 0,
            perturbation: None,
            model: ModelKind::Pg,
            seed: 0,
            tokens: vec!["x".into(); mask.len()],
            mask,
            gates: None,
            pred,
            gold,
        };
        let m = EvalMetrics::from_traces(&[t(1, 1, vec![true, false]), t(3, 1, vec![true, true, false, false])]);
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.selection_rate, 0.5);
        assert_eq!(m.label_histogram, [0.0, 0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn config_validation_names_field() {
        let mut c = TrainConfig::default();
        c.target_selection_rate = 0.0;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("target_selection_rate"), "{err}");
        let mut c = TrainConfig::new(ModelKind::Pg);
        c.l0_penalty_weight = -1.0;
        assert!(c.validate().unwrap_err().to_string().contains("l0_penalty_weight"));
    }
}
