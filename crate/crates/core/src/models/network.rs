//! Selector and classifier networks (f32) built on the layer crate.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rationale_nn::{BiLstm, BiLstmTape, Linear, Param, ParamVisitor, Parameterized};

/// Time-major embedded batch: `inputs[t]` is `[batch, dim]`, zero past each
/// row's length.
pub fn embed_batch(matrix: &Array2<f32>, seqs: &[&[u32]]) -> (Vec<Array2<f32>>, Vec<usize>) {
    let lengths: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
    let steps = lengths.iter().copied().max().unwrap_or(0);
    let dim = matrix.ncols();
    let inputs = (0..steps)
        .map(|t| {
            let mut x = Array2::zeros((seqs.len(), dim));
            for (b, seq) in seqs.iter().enumerate() {
                if let Some(&id) = seq.get(t) {
                    x.row_mut(b).assign(&matrix.row(id as usize));
                }
            }
            x
        })
        .collect();
    (inputs, lengths)
}

/// BiLSTM encoder with a per-token linear head.
#[derive(Debug, Clone)]
pub struct Selector {
    pub encoder: BiLstm<f32>,
    pub head: Linear<f32>,
}

pub struct SelectorTape {
    encoder: BiLstmTape<f32>,
    outputs: Vec<Array2<f32>>,
}

impl Selector {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, outputs: usize, rng: &mut R) -> Self {
        let encoder = BiLstm::new(input, hidden, rng);
        let head = Linear::new(encoder.output_size(), outputs, rng);
        Selector { encoder, head }
    }

    /// Head output per time step, `[batch, outputs]`.
    pub fn forward(&self, xs: &[Array2<f32>], lengths: &[usize]) -> (Vec<Array2<f32>>, SelectorTape) {
        let (outputs, encoder) = self.encoder.forward(xs, lengths);
        let heads = outputs.iter().map(|o| self.head.forward(&o.view())).collect();
        (heads, SelectorTape { encoder, outputs })
    }

    /// Accumulates parameter gradients. Inputs are frozen embeddings, so no
    /// input gradient is returned.
    pub fn backward(&mut self, tape: &SelectorTape, d_heads: &[Array2<f32>]) {
        let d_outputs: Vec<Array2<f32>> = tape
            .outputs
            .iter()
            .zip(d_heads)
            .map(|(o, d)| self.head.backward(&o.view(), &d.view()))
            .collect();
        self.encoder.backward(&tape.encoder, &d_outputs, None);
    }
}

impl Parameterized<f32> for Selector {
    fn visit(&self, prefix: &str, f: &mut ParamVisitor<'_, f32>) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f32>)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// BiLSTM over the (masked) input, final states into a linear layer.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub encoder: BiLstm<f32>,
    pub output: Linear<f32>,
}

pub struct ClassifierTape {
    encoder: BiLstmTape<f32>,
    steps: usize,
    features: Array2<f32>,
    dropout: Option<Array2<f32>>,
}

impl Classifier {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        let encoder = BiLstm::new(input, hidden, rng);
        let output = Linear::new(encoder.output_size(), classes, rng);
        Classifier { encoder, output }
    }

    pub fn classes(&self) -> usize {
        self.output.outputs()
    }

    /// Logits `[batch, classes]`. `dropout` is an inverted-dropout mask
    /// applied to the final state.
    pub fn forward(
        &self,
        xs: &[Array2<f32>],
        lengths: &[usize],
        dropout: Option<Array2<f32>>,
    ) -> (Array2<f32>, ClassifierTape) {
        let (_, encoder) = self.encoder.forward(xs, lengths);
        let mut features = encoder.final_state();
        if let Some(mask) = &dropout {
            features *= mask;
        }
        let logits = self.output.forward(&features.view());
        (
            logits,
            ClassifierTape {
                encoder,
                steps: xs.len(),
                features,
                dropout,
            },
        )
    }

    /// Returns the gradient on every input step.
    pub fn backward(&mut self, tape: &ClassifierTape, d_logits: &ArrayView2<f32>) -> Vec<Array2<f32>> {
        let mut d_features = self.output.backward(&tape.features.view(), d_logits);
        if let Some(mask) = &tape.dropout {
            d_features *= mask;
        }
        let zeros = vec![Array2::zeros((d_features.nrows(), self.encoder.output_size())); tape.steps];
        self.encoder.backward(&tape.encoder, &zeros, Some(&d_features.view()))
    }
}

impl Parameterized<f32> for Classifier {
    fn visit(&self, prefix: &str, f: &mut ParamVisitor<'_, f32>) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f32>)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

/// Selector and classifier trained jointly.
#[derive(Debug, Clone)]
pub struct RationaleNet {
    pub selector: Selector,
    pub classifier: Classifier,
}

impl Parameterized<f32> for RationaleNet {
    fn visit(&self, prefix: &str, f: &mut ParamVisitor<'_, f32>) {
        self.selector.visit(&join(prefix, "selector"), f);
        self.classifier.visit(&join(prefix, "classifier"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f32>)) {
        self.selector.visit_mut(&join(prefix, "selector"), f);
        self.classifier.visit_mut(&join(prefix, "classifier"), f);
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
