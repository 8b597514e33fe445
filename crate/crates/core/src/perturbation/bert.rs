//! Masked-token proposer backed by a BERT masked language model, read from a
//! Hugging Face style directory (`config.json`, `vocab.txt`,
//! `model.safetensors`). Inference only, f32 on the CPU.

use std::collections::HashMap;
use std::path::Path;

use icu_normalizer::DecomposingNormalizerBorrowed;
use icu_properties::props::{GeneralCategory, GeneralCategoryGroup};
use icu_properties::CodePointMapData;
use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{Proposal, Proposer};
use crate::{Error, Result};

const MAX_WORD_CHARS: usize = 100;

/// Uncased/cased BERT tokenizer: basic splitting then greedy WordPiece.
#[derive(Debug, Clone)]
pub struct WordPiece {
    vocab: HashMap<String, u32>,
    tokens: Vec<String>,
    lowercase: bool,
    unk: u32,
    cls: u32,
    sep: u32,
    mask: u32,
}

fn gc(c: char) -> GeneralCategory {
    CodePointMapData::<GeneralCategory>::new().get(c)
}

fn is_punctuation(c: char) -> bool {
    let n = c as u32;
    (33..=47).contains(&n)
        || (58..=64).contains(&n)
        || (91..=96).contains(&n)
        || (123..=126).contains(&n)
        || GeneralCategoryGroup::Punctuation.contains(gc(c))
}

fn is_control(c: char) -> bool {
    if matches!(c, '\t' | '\n' | '\r') {
        return false;
    }
    matches!(gc(c), GeneralCategory::Control | GeneralCategory::Format)
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0x20000..=0x2A6DF | 0x2A700..=0x2B73F
        | 0x2B740..=0x2B81F | 0x2B820..=0x2CEAF | 0xF900..=0xFAFF | 0x2F800..=0x2FA1F)
}

impl WordPiece {
    pub fn new(tokens: Vec<String>, lowercase: bool) -> Result<Self> {
        let vocab: HashMap<String, u32> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let special = |name: &str| {
            vocab
                .get(name)
                .copied()
                .ok_or_else(|| Error::Config(format!("tokenizer vocabulary has no {name}")))
        };
        Ok(WordPiece {
            unk: special("[UNK]")?,
            cls: special("[CLS]")?,
            sep: special("[SEP]")?,
            mask: special("[MASK]")?,
            vocab,
            tokens,
            lowercase,
        })
    }

    pub fn from_file(path: &Path, lowercase: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect(), lowercase)
    }

    pub fn mask_id(&self) -> u32 {
        self.mask
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Whitespace/punctuation split with optional lowercasing and accent
    /// stripping.
    pub fn basic_tokens(&self, text: &str) -> Vec<String> {
        let mut cleaned = String::with_capacity(text.len());
        for c in text.chars() {
            if c == '\0' || c == '\u{fffd}' || is_control(c) {
                continue;
            }
            if c.is_whitespace() {
                cleaned.push(' ');
            } else if is_cjk(c) {
                cleaned.push(' ');
                cleaned.push(c);
                cleaned.push(' ');
            } else {
                cleaned.push(c);
            }
        }
        let nfd = DecomposingNormalizerBorrowed::new_nfd();
        let mut out = Vec::new();
        for word in cleaned.split_whitespace() {
            let word = if self.lowercase {
                nfd.normalize(&word.to_lowercase())
                    .chars()
                    .filter(|&c| gc(c) != GeneralCategory::NonspacingMark)
                    .collect()
            } else {
                word.to_string()
            };
            let mut current = String::new();
            for c in word.chars() {
                if is_punctuation(c) {
                    if !current.is_empty() {
                        out.push(std::mem::take(&mut current));
                    }
                    out.push(c.to_string());
                } else {
                    current.push(c);
                }
            }
            if !current.is_empty() {
                out.push(current);
            }
        }
        out
    }

    fn word_pieces(&self, word: &str, out: &mut Vec<u32>) {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_WORD_CHARS {
            out.push(self.unk);
            return;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let mut piece: String = chars[start..end].iter().collect();
                if start > 0 {
                    piece.insert_str(0, "##");
                }
                if let Some(&id) = self.vocab.get(&piece) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => pieces.push(id),
                None => {
                    out.push(self.unk);
                    return;
                }
            }
            start = end;
        }
        out.extend(pieces);
    }

    /// Ids for `text` without the surrounding `[CLS]`/`[SEP]`.
    pub fn encode_plain(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for w in self.basic_tokens(text) {
            self.word_pieces(&w, &mut ids);
        }
        ids
    }

    /// Ids for one sentence, with `[CLS]` and `[SEP]`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = vec![self.cls];
        ids.extend(self.encode_plain(text));
        ids.push(self.sep);
        ids
    }
}

#[derive(Debug, Deserialize)]
struct BertConfig {
    vocab_size: usize,
    hidden_size: usize,
    num_hidden_layers: usize,
    num_attention_heads: usize,
    intermediate_size: usize,
    max_position_embeddings: usize,
    #[serde(default = "default_type_vocab")]
    type_vocab_size: usize,
    #[serde(default = "default_eps")]
    layer_norm_eps: f64,
    #[serde(default = "default_act")]
    hidden_act: String,
}

fn default_type_vocab() -> usize {
    2
}
fn default_eps() -> f64 {
    1e-12
}
fn default_act() -> String {
    "gelu".into()
}

#[derive(Debug, Clone, Copy)]
enum Activation {
    Erf,
    Tanh,
}

impl Activation {
    fn apply(self, x: f32) -> f32 {
        let x = f64::from(x);
        let y = match self {
            Activation::Erf => 0.5 * x * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2)),
            Activation::Tanh => {
                0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
            }
        };
        y as f32
    }
}

#[derive(Debug)]
struct Dense {
    /// `[in, out]`
    w: Array2<f32>,
    b: Array1<f32>,
}

impl Dense {
    fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        x.dot(&self.w) + &self.b
    }
}

#[derive(Debug)]
struct LayerNorm {
    gamma: Array1<f32>,
    beta: Array1<f32>,
    eps: f32,
}

impl LayerNorm {
    fn forward(&self, x: &mut Array2<f32>) {
        for mut row in x.rows_mut() {
            let n = row.len() as f32;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
            let inv = 1.0 / (var + self.eps).sqrt();
            for (i, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * self.gamma[i] + self.beta[i];
            }
        }
    }
}

#[derive(Debug)]
struct Layer {
    query: Dense,
    key: Dense,
    value: Dense,
    attn_out: Dense,
    attn_norm: LayerNorm,
    intermediate: Dense,
    output: Dense,
    out_norm: LayerNorm,
}

/// BERT encoder with the masked-LM head.
#[derive(Debug)]
pub struct BertMlm {
    tokenizer: WordPiece,
    word: Array2<f32>,
    position: Array2<f32>,
    token_type: Array2<f32>,
    emb_norm: LayerNorm,
    layers: Vec<Layer>,
    heads: usize,
    act: Activation,
    head_dense: Dense,
    head_norm: LayerNorm,
    decoder_bias: Array1<f32>,
    id: String,
}

struct Tensors {
    map: HashMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Tensors {
    fn take(&mut self, names: &[String]) -> Result<(Vec<usize>, Vec<f32>)> {
        for n in names {
            if let Some(t) = self.map.remove(n) {
                return Ok(t);
            }
        }
        Err(Error::Config(format!("model file has no tensor {}", names.join(" / "))))
    }

    fn matrix(&mut self, name: &str, shape: (usize, usize)) -> Result<Array2<f32>> {
        let (dims, data) = self.take(&[name.to_string()])?;
        if dims != [shape.0, shape.1] {
            return Err(Error::Config(format!("{name}: shape {dims:?}, expected {shape:?}")));
        }
        Ok(Array2::from_shape_vec(shape, data).expect("checked shape"))
    }

    fn vector(&mut self, names: &[String], len: usize) -> Result<Array1<f32>> {
        let (dims, data) = self.take(names)?;
        if dims != [len] {
            return Err(Error::Config(format!("{}: shape {dims:?}, expected [{len}]", names[0])));
        }
        Ok(Array1::from(data))
    }

    /// PyTorch linear weights are `[out, in]`; stored transposed.
    fn dense(&mut self, prefix: &str, inputs: usize, outputs: usize) -> Result<Dense> {
        let w = self.matrix(&format!("{prefix}.weight"), (outputs, inputs))?;
        let b = self.vector(&[format!("{prefix}.bias")], outputs)?;
        Ok(Dense {
            w: w.t().as_standard_layout().to_owned(),
            b,
        })
    }

    fn norm(&mut self, prefix: &str, len: usize, eps: f64) -> Result<LayerNorm> {
        Ok(LayerNorm {
            gamma: self.vector(&[format!("{prefix}.weight"), format!("{prefix}.gamma")], len)?,
            beta: self.vector(&[format!("{prefix}.bias"), format!("{prefix}.beta")], len)?,
            eps: eps as f32,
        })
    }
}

/// Reads every floating point tensor of a safetensors file as f32.
fn read_safetensors(bytes: &[u8], path: &Path) -> Result<Tensors> {
    let bad = |m: String| Error::load(path, 0, m);
    if bytes.len() < 8 {
        return Err(bad("file too short".into()));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body_start = 8 + header_len;
    if bytes.len() < body_start {
        return Err(bad("header length past end of file".into()));
    }
    let header: serde_json::Map<String, serde_json::Value> =
        serde_json::from_slice(&bytes[8..body_start]).map_err(|e| bad(format!("header: {e}")))?;
    let body = &bytes[body_start..];
    let mut map = HashMap::new();
    for (name, info) in header {
        if name == "__metadata__" {
            continue;
        }
        let dtype = info["dtype"].as_str().unwrap_or_default();
        let shape: Vec<usize> = info["shape"]
            .as_array()
            .map(|a| a.iter().filter_map(|d| d.as_u64().map(|d| d as usize)).collect())
            .unwrap_or_default();
        let offsets = info["data_offsets"].as_array().map(|a| a.iter().filter_map(|o| o.as_u64()).collect::<Vec<_>>());
        let (start, end) = match offsets.as_deref() {
            Some(&[s, e]) if s <= e && (e as usize) <= body.len() => (s as usize, e as usize),
            _ => return Err(bad(format!("{name}: bad data offsets"))),
        };
        let raw = &body[start..end];
        let data: Vec<f32> = match dtype {
            "F32" => raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect(),
            "F16" => raw
                .chunks_exact(2)
                .map(|c| half::f16::from_le_bytes([c[0], c[1]]).to_f32())
                .collect(),
            "BF16" => raw
                .chunks_exact(2)
                .map(|c| half::bf16::from_le_bytes([c[0], c[1]]).to_f32())
                .collect(),
            _ => continue,
        };
        if data.len() != shape.iter().product::<usize>() {
            return Err(bad(format!("{name}: {} values for shape {shape:?}", data.len())));
        }
        map.insert(name, (shape, data));
    }
    Ok(Tensors { map })
}

impl BertMlm {
    /// Loads a model directory. Lowercasing follows `tokenizer_config.json`
    /// when present and defaults to on.
    pub fn load(dir: &Path) -> Result<Self> {
        let config_path = dir.join("config.json");
        let config_text = std::fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
        let config: BertConfig =
            serde_json::from_str(&config_text).map_err(|e| Error::load(&config_path, 0, e.to_string()))?;
        let act = match config.hidden_act.as_str() {
            "gelu" => Activation::Erf,
            "gelu_new" | "gelu_pytorch_tanh" => Activation::Tanh,
            other => return Err(Error::Config(format!("unsupported activation {other}"))),
        };
        if config.num_attention_heads == 0 || !config.hidden_size.is_multiple_of(config.num_attention_heads) {
            return Err(Error::Config("hidden size not divisible by head count".into()));
        }

        let tok_config = dir.join("tokenizer_config.json");
        let lowercase = match std::fs::read_to_string(&tok_config) {
            Ok(text) => serde_json::from_str::<serde_json::Value>(&text)
                .ok()
                .and_then(|v| v["do_lower_case"].as_bool())
                .unwrap_or(true),
            Err(_) => true,
        };
        let vocab_path = dir.join("vocab.txt");
        let tokenizer = WordPiece::from_file(&vocab_path, lowercase)?;
        if tokenizer.len() != config.vocab_size {
            return Err(Error::Config(format!(
                "vocab.txt has {} entries, config says {}",
                tokenizer.len(),
                config.vocab_size
            )));
        }

        let weights_path = dir.join("model.safetensors");
        let bytes = std::fs::read(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        hasher.update(std::fs::read(&vocab_path).map_err(|e| Error::io(&vocab_path, e))?);
        let id = format!("bert-mlm:{}", hex::encode(&hasher.finalize()[..8]));
        let mut t = read_safetensors(&bytes, &weights_path)?;

        let h = config.hidden_size;
        let eps = config.layer_norm_eps;
        let word = t.matrix("bert.embeddings.word_embeddings.weight", (config.vocab_size, h))?;
        let position = t.matrix("bert.embeddings.position_embeddings.weight", (config.max_position_embeddings, h))?;
        let token_type = t.matrix("bert.embeddings.token_type_embeddings.weight", (config.type_vocab_size, h))?;
        let emb_norm = t.norm("bert.embeddings.LayerNorm", h, eps)?;
        let mut layers = Vec::with_capacity(config.num_hidden_layers);
        for i in 0..config.num_hidden_layers {
            let p = format!("bert.encoder.layer.{i}");
            layers.push(Layer {
                query: t.dense(&format!("{p}.attention.self.query"), h, h)?,
                key: t.dense(&format!("{p}.attention.self.key"), h, h)?,
                value: t.dense(&format!("{p}.attention.self.value"), h, h)?,
                attn_out: t.dense(&format!("{p}.attention.output.dense"), h, h)?,
                attn_norm: t.norm(&format!("{p}.attention.output.LayerNorm"), h, eps)?,
                intermediate: t.dense(&format!("{p}.intermediate.dense"), h, config.intermediate_size)?,
                output: t.dense(&format!("{p}.output.dense"), config.intermediate_size, h)?,
                out_norm: t.norm(&format!("{p}.output.LayerNorm"), h, eps)?,
            });
        }
        let head_dense = t.dense("cls.predictions.transform.dense", h, h)?;
        let head_norm = t.norm("cls.predictions.transform.LayerNorm", h, eps)?;
        let decoder_bias = t.vector(
            &["cls.predictions.bias".to_string(), "cls.predictions.decoder.bias".to_string()],
            config.vocab_size,
        )?;
        // An untied decoder overrides the input embeddings in the output layer.
        let decoder = t.map.remove("cls.predictions.decoder.weight");
        let word_out = match decoder {
            Some((dims, data)) if dims == [config.vocab_size, h] => Some(Array2::from_shape_vec((dims[0], h), data).expect("checked")),
            Some((dims, _)) => return Err(Error::Config(format!("decoder weight shape {dims:?}"))),
            None => None,
        };
        if let Some(w) = &word_out {
            if *w != word {
                return Err(Error::Config("untied decoder weights are not supported".into()));
            }
        }
        Ok(BertMlm {
            tokenizer,
            word,
            position,
            token_type,
            emb_norm,
            layers,
            heads: config.num_attention_heads,
            act,
            head_dense,
            head_norm,
            decoder_bias,
            id,
        })
    }

    pub fn tokenizer(&self) -> &WordPiece {
        &self.tokenizer
    }

    fn max_positions(&self) -> usize {
        self.position.nrows()
    }

    /// Final hidden states `[len, hidden]` for one segment.
    pub fn encode(&self, ids: &[u32]) -> Array2<f32> {
        let h = self.word.ncols();
        let n = ids.len();
        let mut x = Array2::zeros((n, h));
        for (i, &id) in ids.iter().enumerate() {
            let mut row = x.row_mut(i);
            row.assign(&self.word.row(id as usize));
            row += &self.position.row(i);
            row += &self.token_type.row(0);
        }
        self.emb_norm.forward(&mut x);
        let dh = h / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        for layer in &self.layers {
            let q = layer.query.forward(&x);
            let k = layer.key.forward(&x);
            let v = layer.value.forward(&x);
            let mut ctx = Array2::zeros((n, h));
            for head in 0..self.heads {
                let cols = s![.., head * dh..(head + 1) * dh];
                let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                for mut row in scores.rows_mut() {
                    let max = row.fold(f32::NEG_INFINITY, |m, &v| m.max(v));
                    row.mapv_inplace(|v| (v - max).exp());
                    let sum = row.sum();
                    row /= sum;
                }
                ctx.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            }
            let mut attn = layer.attn_out.forward(&ctx) + &x;
            layer.attn_norm.forward(&mut attn);
            let inter = layer.intermediate.forward(&attn).mapv(|v| self.act.apply(v));
            let mut out = layer.output.forward(&inter) + &attn;
            layer.out_norm.forward(&mut out);
            x = out;
        }
        x
    }

    /// Vocabulary logits at `position` of `ids`.
    pub fn logits_at(&self, ids: &[u32], position: usize) -> Vec<f32> {
        let hidden = self.encode(ids);
        self.head(hidden.row(position))
    }

    fn head(&self, h: ArrayView1<f32>) -> Vec<f32> {
        let mut t = self.head_dense.forward(&h.insert_axis(Axis(0)).to_owned()).mapv(|v| self.act.apply(v));
        self.head_norm.forward(&mut t);
        let logits = self.word.dot(&t.row(0)) + &self.decoder_bias;
        logits.to_vec()
    }

    /// Model ids for a pre-tokenized sentence with the token at `position`
    /// replaced by one `[MASK]`; returns the ids and the mask index.
    fn masked_ids(&self, tokens: &[String], position: usize) -> (Vec<u32>, usize) {
        let tk = &self.tokenizer;
        let mut before = Vec::new();
        for t in &tokens[..position] {
            before.extend(tk.encode_plain(t));
        }
        let mut after = Vec::new();
        for t in &tokens[position + 1..] {
            after.extend(tk.encode_plain(t));
        }
        // Trim context evenly if the sentence does not fit.
        let budget = self.max_positions().saturating_sub(3);
        while before.len() + after.len() > budget {
            if before.len() >= after.len() {
                before.remove(0);
            } else {
                after.pop();
            }
        }
        let mut ids = vec![tk.cls];
        ids.extend(before);
        let at = ids.len();
        ids.push(tk.mask);
        ids.extend(after);
        ids.push(tk.sep);
        (ids, at)
    }
}

impl Proposer for BertMlm {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn propose(&self, tokens: &[String], position: usize, k: usize) -> Result<Vec<Proposal>> {
        if position >= tokens.len() {
            return Err(Error::Validation(format!("position {position} outside sentence of {}", tokens.len())));
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let (ids, at) = self.masked_ids(tokens, position);
        let logits = self.logits_at(&ids, at);
        let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let log_z = max + logits.iter().map(|l| (l - max).exp()).sum::<f32>().ln();
        let mut order: Vec<usize> = (0..logits.len()).collect();
        order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
        Ok(order
            .into_iter()
            .take(k)
            .map(|i| Proposal {
                word: self.tokenizer.token(i as u32).to_string(),
                score: f64::from(logits[i] - log_z),
            })
            .collect())
    }
}
