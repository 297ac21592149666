//! Bidirectional in-batch softmax training with appended hard negatives.
//!
//! For a batch of `B` questions, each with `N` sampled hard negatives, the
//! forward (question → passage) direction scores every question against all
//! `(N+1)·B` passages in the batch: the `B` golds followed by the `B·N` hard
//! negatives. The backward (passage → question) direction ranks each gold
//! passage against the `B` questions only. With `φ` the dot product and `s`
//! the loss scale:
//!
//! ```text
//! L_f = −(1/B) Σ_i log softmax_c(s·φ(q_i, p_c))[i]      c over (N+1)·B passages
//! L_b = −(1/B) Σ_i log softmax_j(s·φ(p_i, q_j))[i]      j over B questions
//! L   = 0.5 · (L_f + L_b)
//! ```

use std::io::Write;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStore, TrainingPair};
use crate::dense_index::DenseIndex;
use crate::encoder::{EncoderGrads, EncoderParams, ForwardCache};
use crate::error::{Error, Result};
use crate::text::{tokenize, TokenStream};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// B: questions per batch.
    pub batch_size: usize,
    /// N: hard negatives sampled per question per iteration.
    pub hard_neg_count: usize,
    /// M: hard negatives mined per question.
    pub pool_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Only `"recall@1"` (on the dev set) is supported.
    pub early_stop_metric: String,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Multiplier on φ inside the softmax.
    pub loss_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            hard_neg_count: 2,
            pool_size: 100,
            learning_rate: 1e-3,
            epochs: 20,
            early_stop_metric: "recall@1".into(),
            patience: 3,
            seed: 0,
            loss_scale: 20.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.hard_neg_count > self.pool_size {
            return bad("hard_neg_count must not exceed pool_size");
        }
        if !(self.loss_scale > 0.0) {
            return bad("loss_scale must be > 0");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if self.early_stop_metric != "recall@1" {
            return bad("early_stop_metric must be \"recall@1\"");
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: TrainConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassageInput {
    pub passage_id: String,
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub questions: Vec<TokenStream>,
    pub gold_passages: Vec<PassageInput>,
    /// `B × N`; row `i` belongs to question `i`.
    pub hard_negatives: Vec<Vec<PassageInput>>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    /// Candidate passages in forward-scoring order: golds, then each question's negatives.
    pub fn candidates(&self) -> impl Iterator<Item = &PassageInput> {
        self.gold_passages.iter().chain(self.hard_negatives.iter().flatten())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub forward: f64,
    pub backward: f64,
    pub total: f64,
    pub per_example_forward: Vec<f64>,
    /// Number of passages each question was scored against.
    pub forward_candidates: Vec<usize>,
    /// Number of questions each gold passage was scored against.
    pub backward_candidates: Vec<usize>,
}

fn passage_input(corpus: &CorpusStore, id: &str) -> Result<PassageInput> {
    let p = corpus
        .get(id)
        .ok_or_else(|| Error::UnresolvedReference(id.to_string()))?;
    Ok(PassageInput {
        passage_id: p.passage_id.clone(),
        title: p.title.clone(),
        text: p.text.clone(),
    })
}

/// Assembles a batch, sampling `N` negatives uniformly without replacement
/// from each question's pool. `pools[i]` belongs to `pairs[i]`.
pub fn build_batch(
    pairs: &[&TrainingPair],
    pools: &[&[String]],
    corpus: &CorpusStore,
    hard_neg_count: usize,
    rng: &mut impl Rng,
) -> Result<TrainingBatch> {
    if hard_neg_count > 0 && pools.len() != pairs.len() {
        return Err(Error::InvalidArgument("one pool per pair required".into()));
    }
    let mut batch = TrainingBatch {
        questions: Vec::with_capacity(pairs.len()),
        gold_passages: Vec::with_capacity(pairs.len()),
        hard_negatives: Vec::with_capacity(pairs.len()),
    };
    for (i, pair) in pairs.iter().enumerate() {
        batch.questions.push(tokenize(&pair.question));
        batch.gold_passages.push(passage_input(corpus, &pair.gold_passage_id)?);
        let mut negatives = Vec::with_capacity(hard_neg_count);
        if hard_neg_count > 0 {
            let pool = pools[i];
            if pool.len() < hard_neg_count {
                return Err(Error::PoolTooSmall {
                    pair: pair.question.clone(),
                    available: pool.len(),
                    needed: hard_neg_count,
                });
            }
            for j in rand::seq::index::sample(rng, pool.len(), hard_neg_count) {
                if pool[j] == pair.gold_passage_id {
                    return Err(Error::InvalidArgument(format!(
                        "pool for {:?} contains its gold passage",
                        pair.question
                    )));
                }
                negatives.push(passage_input(corpus, &pool[j])?);
            }
        }
        batch.hard_negatives.push(negatives);
    }
    Ok(batch)
}

/// Loss and its gradient w.r.t. the raw scores φ.
#[derive(Debug, Clone)]
pub struct ScoreLoss {
    pub report: LossReport,
    /// `dL/dφ`, same shape as the forward score matrix.
    pub grad: Vec<Vec<f64>>,
}

fn log_softmax_term(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let lse = max + sum.ln();
    let probs = logits.iter().map(|l| (l - lse).exp()).collect();
    (lse - logits[target], probs)
}

/// Evaluates the bidirectional loss on a forward score matrix.
///
/// `scores[i]` holds φ between question `i` and every candidate; columns
/// `0..B` are the golds (column `i` is question `i`'s positive). The backward
/// direction uses the transposed `B × B` gold block.
pub fn bidirectional_loss(scores: &[Vec<f64>], loss_scale: f64) -> Result<ScoreLoss> {
    let b = scores.len();
    if b == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let bad: Vec<(usize, usize)> = scores
        .iter()
        .enumerate()
        .flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, v)| !v.is_finite())
                .map(move |(c, _)| (i, c))
        })
        .collect();
    if !bad.is_empty() {
        return Err(Error::NonFiniteLoss { indices: bad });
    }
    let width = scores[0].len();
    if width < b || scores.iter().any(|r| r.len() != width) {
        return Err(Error::InvalidArgument("ragged or narrow score matrix".into()));
    }
    let inv_b = 1.0 / b as f64;
    let mut grad = vec![vec![0.0; width]; b];

    let mut per_example_forward = Vec::with_capacity(b);
    for (i, row) in scores.iter().enumerate() {
        let logits: Vec<f64> = row.iter().map(|v| v * loss_scale).collect();
        let (loss, probs) = log_softmax_term(&logits, i);
        per_example_forward.push(loss);
        for (c, p) in probs.iter().enumerate() {
            let indicator = if c == i { 1.0 } else { 0.0 };
            grad[i][c] += 0.5 * inv_b * loss_scale * (p - indicator);
        }
    }
    let mut backward_sum = 0.0;
    for i in 0..b {
        // passage i against questions j: φ(p_i, q_j) = scores[j][i]
        let logits: Vec<f64> = (0..b).map(|j| scores[j][i] * loss_scale).collect();
        let (loss, probs) = log_softmax_term(&logits, i);
        backward_sum += loss;
        for (j, p) in probs.iter().enumerate() {
            let indicator = if j == i { 1.0 } else { 0.0 };
            grad[j][i] += 0.5 * inv_b * loss_scale * (p - indicator);
        }
    }
    let forward = per_example_forward.iter().sum::<f64>() * inv_b;
    let backward = backward_sum * inv_b;
    Ok(ScoreLoss {
        report: LossReport {
            forward,
            backward,
            total: 0.5 * (forward + backward),
            per_example_forward,
            forward_candidates: vec![width; b],
            backward_candidates: vec![b; b],
        },
        grad,
    })
}

struct BatchForward {
    questions: Vec<ForwardCache>,
    candidates: Vec<ForwardCache>,
    scores: Vec<Vec<f64>>,
}

fn forward_batch(params: &EncoderParams, batch: &TrainingBatch) -> Result<BatchForward> {
    let n = batch.hard_negatives.first().map_or(0, Vec::len);
    if batch.hard_negatives.len() != batch.len() || batch.hard_negatives.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidArgument("hard negatives must form a B × N grid".into()));
    }
    let questions = batch
        .questions
        .par_iter()
        .map(|q| params.forward(&params.question_ids(q)))
        .collect::<Result<Vec<_>>>()?;
    let inputs: Vec<&PassageInput> = batch.candidates().collect();
    let candidates = inputs
        .par_iter()
        .map(|p| params.forward(&params.passage_ids(&p.title, &p.text)?))
        .collect::<Result<Vec<_>>>()?;
    let scores = questions
        .iter()
        .map(|q| {
            candidates
                .iter()
                .map(|p| q.output().iter().zip(p.output()).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    Ok(BatchForward {
        questions,
        candidates,
        scores,
    })
}

pub fn forward_loss(params: &EncoderParams, batch: &TrainingBatch, config: &TrainConfig) -> Result<LossReport> {
    let fwd = forward_batch(params, batch)?;
    Ok(bidirectional_loss(&fwd.scores, config.loss_scale)?.report)
}

/// Loss plus exact parameter gradients for one batch.
pub fn loss_and_gradients(
    params: &EncoderParams,
    batch: &TrainingBatch,
    loss_scale: f64,
) -> Result<(LossReport, EncoderGrads)> {
    let fwd = forward_batch(params, batch)?;
    let loss = bidirectional_loss(&fwd.scores, loss_scale)?;
    let dim = params.dim();
    let mut grads = params.zero_grads();
    for (i, q) in fwd.questions.iter().enumerate() {
        let mut upstream = vec![0.0; dim];
        for (c, p) in fwd.candidates.iter().enumerate() {
            let g = loss.grad[i][c];
            if g != 0.0 {
                upstream.iter_mut().zip(p.output()).for_each(|(u, v)| *u += g * v);
            }
        }
        params.backward(q, &upstream, &mut grads)?;
    }
    for (c, p) in fwd.candidates.iter().enumerate() {
        let mut upstream = vec![0.0; dim];
        for (i, q) in fwd.questions.iter().enumerate() {
            let g = loss.grad[i][c];
            if g != 0.0 {
                upstream.iter_mut().zip(q.output()).for_each(|(u, v)| *u += g * v);
            }
        }
        params.backward(p, &upstream, &mut grads)?;
    }
    Ok((loss.report, grads))
}

/// Adam with bias correction, one moment pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &EncoderParams, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            learning_rate,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step(&mut self, params: &mut EncoderParams, grads: &EncoderGrads) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        let lr = self.learning_rate;
        for (((tensor, grad), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for i in 0..tensor.len() {
                let g = grad[i];
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                tensor[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPSILON);
            }
        }
    }
}

/// Fraction of dev questions whose top-1 dense result is the gold passage.
pub fn dev_recall_at_1(params: &EncoderParams, dev: &[TrainingPair], corpus: &CorpusStore) -> Result<f64> {
    if dev.is_empty() {
        return Err(Error::InvalidArgument("empty dev set".into()));
    }
    let index = DenseIndex::build(corpus, params)?;
    let questions: Vec<&str> = dev.iter().map(|p| p.question.as_str()).collect();
    let embeddings = params.encode_questions(&questions)?;
    let rankings = index.search_batch(&embeddings, 1)?;
    let hits = rankings
        .iter()
        .zip(dev)
        .filter(|(r, p)| r.hits.first().is_some_and(|h| h.passage_id == p.gold_passage_id))
        .count();
    Ok(hits as f64 / dev.len() as f64)
}

/// One training stage: pairs, optional per-pair negative pools, and its config.
#[derive(Debug, Clone, Copy)]
pub struct Stage<'a> {
    pub pairs: &'a [TrainingPair],
    /// Aligned with `pairs`; required when `config.hard_neg_count > 0`.
    pub pools: Option<&'a [Vec<String>]>,
    pub config: &'a TrainConfig,
}

/// Dev pairs and the corpus to retrieve them from, for early stopping.
#[derive(Debug, Clone, Copy)]
pub struct DevSet<'a> {
    pub pairs: &'a [TrainingPair],
    pub corpus: &'a CorpusStore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: u8,
    pub epoch: usize,
    pub forward: f64,
    pub backward: f64,
    pub total: f64,
    pub dev_recall_at_1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: EncoderParams,
    pub history: Vec<EpochRecord>,
}

fn run_stage(
    mut params: EncoderParams,
    stage_no: u8,
    stage: &Stage<'_>,
    dev: Option<DevSet<'_>>,
    passages: &CorpusStore,
    history: &mut Vec<EpochRecord>,
) -> Result<EncoderParams> {
    let config = stage.config;
    config.validate()?;
    let n = config.hard_neg_count;
    let pools: Vec<&[String]> = match (n, stage.pools) {
        (0, _) => Vec::new(),
        (_, Some(pools)) if pools.len() == stage.pairs.len() => pools.iter().map(Vec::as_slice).collect(),
        _ => return Err(Error::InvalidArgument("hard negatives requested without aligned pools".into())),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(stage_no as u64 + 1)));
    let mut adam = Adam::new(&params, config.learning_rate);
    let mut order: Vec<usize> = (0..stage.pairs.len()).collect();
    let mut best: Option<(f64, EncoderParams)> = None;
    let mut since_best = 0;
    let epoch_offset = history.len();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut sum_f, mut sum_b, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let pairs: Vec<&TrainingPair> = chunk.iter().map(|&i| &stage.pairs[i]).collect();
            let chunk_pools: Vec<&[String]> = if n == 0 {
                Vec::new()
            } else {
                chunk.iter().map(|&i| pools[i]).collect()
            };
            let batch = build_batch(&pairs, &chunk_pools, passages, n, &mut rng)?;
            let (report, grads) = loss_and_gradients(&params, &batch, config.loss_scale)?;
            adam.step(&mut params, &grads);
            sum_f += report.forward;
            sum_b += report.backward;
            batches += 1;
        }
        let denom = batches.max(1) as f64;
        let (lf, lb) = (sum_f / denom, sum_b / denom);
        let dev_metric = match dev {
            Some(d) if !d.pairs.is_empty() => Some(dev_recall_at_1(&params, d.pairs, d.corpus)?),
            _ => None,
        };
        debug!("stage {stage_no} epoch {epoch}: L_f={lf:.5} L_b={lb:.5} dev_r@1={dev_metric:?}");
        history.push(EpochRecord {
            stage: stage_no,
            epoch: epoch_offset + epoch + 1,
            forward: lf,
            backward: lb,
            total: 0.5 * (lf + lb),
            dev_recall_at_1: dev_metric,
        });
        if let Some(metric) = dev_metric {
            if best.as_ref().map_or(true, |(b, _)| metric > *b) {
                best = Some((metric, params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    info!("stage {stage_no}: early stop after epoch {}", epoch + 1);
                    break;
                }
            }
        }
    }
    Ok(best.map_or(params, |(_, p)| p))
}

/// Runs Stage 1 then Stage 2 (either may be absent). Each stage gets a fresh
/// optimizer; with a dev set, each stage returns its best-dev-recall@1 epoch.
pub fn train(
    params: EncoderParams,
    stage1: Option<Stage<'_>>,
    stage2: Option<Stage<'_>>,
    dev: Option<DevSet<'_>>,
    passages: &CorpusStore,
) -> Result<Trained> {
    let mut history = Vec::new();
    let mut params = params;
    for (no, stage) in [(1u8, stage1), (2u8, stage2)] {
        if let Some(stage) = stage {
            params = run_stage(params, no, &stage, dev, passages, &mut history)?;
        }
    }
    Ok(Trained { params, history })
}

/// History as CSV: `epoch,L_f,L_b,L,dev_recall@1`.
pub fn write_history_csv(history: &[EpochRecord], out: &mut impl Write) -> Result<()> {
    writeln!(out, "epoch,L_f,L_b,L,dev_recall@1")?;
    for r in history {
        let dev = r.dev_recall_at_1.map(|v| format!("{v:.6}")).unwrap_or_default();
        writeln!(out, "{},{:.6},{:.6},{:.6},{}", r.epoch, r.forward, r.backward, r.total, dev)?;
    }
    Ok(())
}

pub fn save_history_csv(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_history_csv(history, &mut f)?;
    f.flush()?;
    Ok(())
}
