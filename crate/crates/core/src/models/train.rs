use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rationale_nn::{clip_grad_norm, ops, Adam, AdamConfig};
use serde::{Deserialize, Serialize};

use super::network::{embed_batch, RationaleNet};
use super::reinforce::{logit_score, selection_penalty, MovingBaseline};
use super::{gates, trace_with, EvalMetrics, ModelKind, RationaleModel, TrainConfig};
use crate::corpus::{Corpus, Embeddings, Sentence};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_cross_entropy: f64,
    /// Fraction of tokens selected in training samples.
    pub train_selection_rate: f64,
    pub validation_accuracy: f64,
    pub validation_selection_rate: f64,
    /// CR: Lagrange multiplier at the end of the epoch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// PG: moving-average cost baseline at the end of the epoch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<f64>,
}

/// Multiplier state for the selection-rate constraint.
struct Lagrange {
    lambda: f64,
    c0_ma: f64,
}

struct StepStats {
    loss: f64,
    cross_entropy: f64,
    selected: usize,
    tokens: usize,
}

fn dropout_steps(xs: &[Array2<f32>], p: f64, rng: &mut ChaCha8Rng) -> Vec<Array2<f32>> {
    xs.iter()
        .map(|x| x * &ops::dropout_mask::<f32, _>(x.nrows(), x.ncols(), p, rng))
        .collect()
}

fn scale_rows(xs: &[Array2<f32>], z: &[Vec<f32>]) -> Vec<Array2<f32>> {
    xs.iter()
        .zip(z)
        .map(|(x, zt)| {
            let mut out = x.clone();
            for (mut row, &g) in out.axis_iter_mut(Axis(0)).zip(zt) {
                row.mapv_inplace(|v| v * g);
            }
            out
        })
        .collect()
}

/// `dL/dz[t][b] = <dL/dx[t][b], x_unscaled[t][b]>`.
fn gate_grads(dxs: &[Array2<f32>], unscaled: &[Array2<f32>]) -> Vec<Vec<f64>> {
    dxs.iter()
        .zip(unscaled)
        .map(|(dx, x)| {
            dx.axis_iter(Axis(0))
                .zip(x.axis_iter(Axis(0)))
                .map(|(d, v)| f64::from(d.dot(&v)))
                .collect()
        })
        .collect()
}

fn classify_step(
    net: &mut RationaleNet,
    cls_in: &[Array2<f32>],
    z: &[Vec<f32>],
    lengths: &[usize],
    labels: &[usize],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> (ndarray::Array1<f32>, Vec<Vec<f64>>) {
    let batch = lengths.len();
    let xs = scale_rows(cls_in, z);
    let feat_drop = ops::dropout_mask::<f32, _>(batch, net.classifier.encoder.output_size(), config.dropout, rng);
    let (logits, tape) = net.classifier.forward(&xs, lengths, Some(feat_drop));
    let weights = vec![1.0 / batch as f32; batch];
    let (losses, dlogits) = ops::cross_entropy(&logits.view(), labels, &weights);
    let dxs = net.classifier.backward(&tape, &dlogits.view());
    (losses, gate_grads(&dxs, cls_in))
}

fn cr_step(
    net: &mut RationaleNet,
    matrix: &Array2<f32>,
    batch: &[(&[u32], usize)],
    config: &TrainConfig,
    lagrange: &mut Lagrange,
    rng: &mut ChaCha8Rng,
) -> StepStats {
    let seqs: Vec<&[u32]> = batch.iter().map(|(s, _)| *s).collect();
    let labels: Vec<usize> = batch.iter().map(|(_, y)| *y).collect();
    let (emb, lengths) = embed_batch(matrix, &seqs);
    let n = batch.len();

    let sel_in = dropout_steps(&emb, config.dropout, rng);
    let (heads, sel_tape) = net.selector.forward(&sel_in, &lengths);

    // per (t, b): gate value, dz/dpre_a, dz/dpre_b, P(nonzero), dP/dpre_a, dP/dpre_b
    let steps = heads.len();
    let mut z = vec![vec![0f32; n]; steps];
    let mut dz = vec![vec![(0f64, 0f64); n]; steps];
    let mut dp = vec![vec![(0f64, 0f64); n]; steps];
    let mut l0 = 0.0;
    let mut selected = 0;
    for (t, h) in heads.iter().enumerate() {
        for b in 0..n {
            if t >= lengths[b] {
                continue;
            }
            let (a, da) = gates::shape(f64::from(h[[b, 0]]));
            let (bb, db) = gates::shape(f64::from(h[[b, 1]]));
            let s = gates::sample(a, bb, rng.random());
            let (p, dp_da, dp_db) = gates::prob_nonzero(a, bb);
            z[t][b] = s.z as f32;
            selected += usize::from(s.z > gates::ZERO_EPS);
            dz[t][b] = (s.dz_da * da, s.dz_db * db);
            dp[t][b] = (dp_da * da, dp_db * db);
            l0 += p / (lengths[b] as f64 * n as f64);
        }
    }

    let cls_in = dropout_steps(&emb, config.dropout, rng);
    let (losses, dz_loss) = classify_step(net, &cls_in, &z, &lengths, &labels, config, rng);
    let ce = f64::from(losses.sum()) / n as f64;

    let c0_hat = l0 - config.target_selection_rate;
    lagrange.c0_ma = config.lagrange_alpha * lagrange.c0_ma + (1.0 - config.lagrange_alpha) * c0_hat;
    lagrange.lambda = (lagrange.lambda * (config.lagrange_lr * lagrange.c0_ma).exp())
        .clamp(config.lambda_min, config.lambda_max);
    let lambda = lagrange.lambda;

    let d_heads: Vec<Array2<f32>> = (0..steps)
        .map(|t| {
            Array2::from_shape_fn((n, 2), |(b, k)| {
                if t >= lengths[b] {
                    return 0.0;
                }
                let penalty = lambda / (lengths[b] as f64 * n as f64);
                let g = match k {
                    0 => dz_loss[t][b] * dz[t][b].0 + penalty * dp[t][b].0,
                    _ => dz_loss[t][b] * dz[t][b].1 + penalty * dp[t][b].1,
                };
                g as f32
            })
        })
        .collect();
    net.selector.backward(&sel_tape, &d_heads);

    StepStats {
        loss: ce + lambda * lagrange.c0_ma,
        cross_entropy: ce,
        selected,
        tokens: lengths.iter().sum(),
    }
}

fn pg_step(
    net: &mut RationaleNet,
    matrix: &Array2<f32>,
    batch: &[(&[u32], usize)],
    config: &TrainConfig,
    baseline: &mut MovingBaseline,
    rng: &mut ChaCha8Rng,
) -> StepStats {
    let seqs: Vec<&[u32]> = batch.iter().map(|(s, _)| *s).collect();
    let labels: Vec<usize> = batch.iter().map(|(_, y)| *y).collect();
    let (emb, lengths) = embed_batch(matrix, &seqs);
    let n = batch.len();

    let sel_in = dropout_steps(&emb, config.dropout, rng);
    let (heads, sel_tape) = net.selector.forward(&sel_in, &lengths);
    let steps = heads.len();
    let mut probs = vec![vec![0f64; n]; steps];
    let mut z = vec![vec![0f32; n]; steps];
    let mut masks = vec![Vec::new(); n];
    for (t, h) in heads.iter().enumerate() {
        for b in 0..lengths.len() {
            if t < lengths[b] {
                let p = ops::sigmoid(f64::from(h[[b, 0]]));
                let pick = rng.random::<f64>() < p;
                probs[t][b] = p;
                z[t][b] = if pick { 1.0 } else { 0.0 };
                masks[b].push(pick);
            }
        }
    }

    let cls_in = dropout_steps(&emb, config.dropout, rng);
    let (losses, _) = classify_step(net, &cls_in, &z, &lengths, &labels, config, rng);

    let costs: Vec<f64> = (0..n)
        .map(|b| {
            f64::from(losses[b])
                + selection_penalty(&masks[b], config.l0_penalty_weight, config.coherence_factor)
        })
        .collect();
    let mean_cost = costs.iter().sum::<f64>() / n as f64;
    let base = baseline.get(mean_cost);

    let d_heads: Vec<Array2<f32>> = (0..steps)
        .map(|t| {
            Array2::from_shape_fn((n, 1), |(b, _)| {
                if t >= lengths[b] {
                    return 0.0;
                }
                ((costs[b] - base) * logit_score(masks[b][t], probs[t][b]) / n as f64) as f32
            })
        })
        .collect();
    net.selector.backward(&sel_tape, &d_heads);
    baseline.update(mean_cost);

    StepStats {
        loss: mean_cost,
        cross_entropy: f64::from(losses.sum()) / n as f64,
        selected: masks.iter().flatten().filter(|&&m| m).count(),
        tokens: lengths.iter().sum(),
    }
}

fn validation_metrics(net: &RationaleNet, config: &TrainConfig, embeddings: &Embeddings, split: &[Sentence]) -> EvalMetrics {
    use rayon::prelude::*;
    let traces: Vec<_> = split
        .par_iter()
        .map(|s| trace_with(net, config.kind, config.seed, embeddings, s))
        .collect();
    EvalMetrics::from_traces(&traces)
}

/// Shuffled batches drawn from length-sorted pools of 20 batches each, so a
/// batch holds sentences of similar length.
pub(crate) fn length_bucketed_batches(examples: &[(Vec<u32>, usize)], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    for pool in order.chunks(batch_size * 20) {
        let mut pool = pool.to_vec();
        pool.sort_by_key(|&i| examples[i].0.len());
        batches.extend(pool.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

/// Trains a CR or PG model (per `config.kind`) with early stopping on
/// validation accuracy. Returns the best model and per-epoch metrics.
pub fn train(corpus: &Corpus, embeddings: Embeddings, config: TrainConfig) -> Result<(RationaleModel, Vec<EpochMetrics>)> {
    config.validate()?;
    if corpus.train.is_empty() || corpus.validation.is_empty() {
        return Err(Error::Validation("training needs nonempty train and validation splits".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = RationaleModel::new(config.clone(), embeddings, &mut rng);
    let limit = match config.max_train_sentences {
        0 => corpus.train.len(),
        k => k.min(corpus.train.len()),
    };
    let examples: Vec<(Vec<u32>, usize)> = corpus.train[..limit]
        .iter()
        .map(|s| (model.embeddings.indices(&s.tokens), usize::from(s.label)))
        .collect();

    let mut adam = Adam::new(AdamConfig {
        lr: config.learning_rate,
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    });
    let mut lagrange = Lagrange {
        lambda: config.lambda_init,
        c0_ma: 0.0,
    };
    let mut baseline = MovingBaseline::new(config.baseline_decay);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, RationaleNet)> = None;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let batches_of_indices = length_bucketed_batches(&examples, config.batch_size, &mut rng);
        let (mut loss_sum, mut ce_sum, mut selected, mut tokens, mut batches) = (0.0, 0.0, 0, 0, 0);
        for chunk in &batches_of_indices {
            let batch: Vec<(&[u32], usize)> = chunk.iter().map(|&i| (&examples[i].0[..], examples[i].1)).collect();
            let stats = match config.kind {
                ModelKind::Cr => cr_step(&mut model.net, &model.embeddings.matrix, &batch, &config, &mut lagrange, &mut rng),
                ModelKind::Pg => pg_step(&mut model.net, &model.embeddings.matrix, &batch, &config, &mut baseline, &mut rng),
            };
            let norm = clip_grad_norm(&mut model.net, config.max_grad_norm);
            if !stats.loss.is_finite() || !norm.is_finite() {
                return Err(Error::Divergence {
                    seed: config.seed,
                    epoch,
                    message: format!("non-finite loss {} or gradient norm {norm}", stats.loss),
                });
            }
            adam.step(&mut model.net, "");
            loss_sum += stats.loss;
            ce_sum += stats.cross_entropy;
            selected += stats.selected;
            tokens += stats.tokens;
            batches += 1;
        }

        let val = validation_metrics(&model.net, &config, &model.embeddings, &corpus.validation);
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / batches as f64,
            train_cross_entropy: ce_sum / batches as f64,
            train_selection_rate: selected as f64 / tokens.max(1) as f64,
            validation_accuracy: val.accuracy,
            validation_selection_rate: val.selection_rate,
            lambda: (config.kind == ModelKind::Cr).then_some(lagrange.lambda),
            baseline: (config.kind == ModelKind::Pg).then_some(baseline.value),
        };
        log::info!(
            "{} seed {} epoch {epoch}: loss {:.4} val acc {:.4} val sel {:.4} ({:.1}s)",
            config.kind,
            config.seed,
            metrics.train_loss,
            val.accuracy,
            val.selection_rate,
            started.elapsed().as_secs_f64()
        );
        history.push(metrics);

        let improved = best.as_ref().is_none_or(|(acc, _, _)| val.accuracy > *acc);
        if improved {
            best = Some((val.accuracy, epoch, model.net.clone()));
        } else if best.as_ref().is_some_and(|(_, e, _)| epoch - e >= config.patience) {
            log::info!("early stop at epoch {epoch}");
            break;
        }
    }
    if let Some((_, _, net)) = best {
        model.net = net;
    }
    Ok((model, history))
}

fn require_kind(config: &TrainConfig, kind: ModelKind) -> Result<()> {
    if config.kind != kind {
        return Err(Error::Config(format!("kind: expected `{kind}`, config says `{}`", config.kind)));
    }
    Ok(())
}

pub fn train_cr(corpus: &Corpus, embeddings: Embeddings, config: TrainConfig) -> Result<(RationaleModel, Vec<EpochMetrics>)> {
    require_kind(&config, ModelKind::Cr)?;
    train(corpus, embeddings, config)
}

pub fn train_pg(corpus: &Corpus, embeddings: Embeddings, config: TrainConfig) -> Result<(RationaleModel, Vec<EpochMetrics>)> {
    require_kind(&config, ModelKind::Pg)?;
    train(corpus, embeddings, config)
}
