//! Shared dual encoder.
//!
//! Questions and passages go through the same parameters:
//!
//! ```text
//! tokens ─► mean of token embeddings ─► tanh(W_h·e + b_h) ─► W_p·h + b_p ─► l2 normalize
//! ```
//!
//! Passage input is `tokenize(title) ++ [SEP] ++ tokenize(text)`; the separator
//! is emitted even for an empty title. Unknown tokens share one OOV row.
//! Every forward pass can keep its activations so [`EncoderParams::backward`]
//! returns exact gradients, including through the normalization.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{CorpusStore, TrainingPair};
use crate::error::{Error, Result};
use crate::text::{tokenize, TokenStream};

pub const OOV_TOKEN: &str = "[OOV]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const OOV_ID: u32 = 0;
pub const SEP_ID: u32 = 1;

const CHECKPOINT_MAGIC: &[u8; 4] = b"HNEC";
const CHECKPOINT_VERSION: u32 = 1;

/// Term → row mapping. Rows 0 and 1 are reserved for OOV and the separator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    terms: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from token streams; terms are sorted so the result
    /// does not depend on input order.
    pub fn from_streams<'a>(streams: impl IntoIterator<Item = &'a TokenStream>) -> Self {
        let set: BTreeSet<&str> = streams.into_iter().flat_map(|s| s.iter()).collect();
        let mut terms = vec![OOV_TOKEN.to_string(), SEP_TOKEN.to_string()];
        terms.extend(set.into_iter().map(str::to_string));
        Self::from_terms(terms)
    }

    /// Vocabulary covering every passage and question the pipeline will see.
    pub fn from_corpus(corpus: &CorpusStore, pair_sets: &[&[TrainingPair]]) -> Self {
        let mut streams = Vec::new();
        for p in corpus.passages() {
            streams.push(tokenize(&p.title));
            streams.push(tokenize(&p.text));
        }
        for pairs in pair_sets {
            streams.extend(pairs.iter().map(|p| tokenize(&p.question)));
        }
        Self::from_streams(&streams)
    }

    fn from_terms(terms: Vec<String>) -> Self {
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { terms, index }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> u32 {
        self.index.get(term).copied().unwrap_or(OOV_ID)
    }

    /// Hex SHA-256 over the ordered term list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.terms {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Output embedding dimension D.
    pub dim: usize,
    /// Hidden width H (also the token embedding width).
    pub hidden_dim: usize,
    pub max_question_len: usize,
    pub max_passage_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 128,
            hidden_dim: 64,
            max_question_len: 64,
            max_passage_len: 384,
        }
    }
}

/// Miner dimensions: coarse (25) and fine (512) semantic similarity.
pub const COARSE_MINER_DIM: usize = 25;
pub const FINE_MINER_DIM: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Question,
    Passage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub kind: EmbeddingKind,
}

/// Activations of one forward pass, needed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    ids: Vec<u32>,
    mean: Vec<f64>,
    hidden: Vec<f64>,
    norm: f64,
    output: Vec<f64>,
    generation: u64,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Norm of the projection output before normalization.
    pub fn norm(&self) -> f64 {
        self.norm
    }
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub vocab: Vocab,
    /// `|V| × H`, row-major.
    pub embeddings: Vec<f64>,
    /// `H × H`, indexed `[input][output]`.
    pub hidden_w: Vec<f64>,
    pub hidden_b: Vec<f64>,
    /// `H × D`, indexed `[hidden][output]`.
    pub proj_w: Vec<f64>,
    pub proj_b: Vec<f64>,
    generation: u64,
}

/// Gradients with the same shapes as [`EncoderParams`] tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub embeddings: Vec<f64>,
    pub hidden_w: Vec<f64>,
    pub hidden_b: Vec<f64>,
    pub proj_w: Vec<f64>,
    pub proj_b: Vec<f64>,
}

impl EncoderGrads {
    pub fn tensors(&self) -> [&[f64]; 5] {
        [
            &self.embeddings,
            &self.hidden_w,
            &self.hidden_b,
            &self.proj_w,
            &self.proj_b,
        ]
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Backward pass of `v / ‖v‖`: maps the gradient w.r.t. the normalized output
/// to the gradient w.r.t. `v`. The result is orthogonal to `v`.
pub fn normalize_backward(output: &[f64], norm: f64, upstream: &[f64]) -> Vec<f64> {
    let dot: f64 = output.iter().zip(upstream).map(|(o, g)| o * g).sum();
    output
        .iter()
        .zip(upstream)
        .map(|(o, g)| (g - o * dot) / norm)
        .collect()
}

impl EncoderParams {
    /// Random initialization; uniform weights scaled so each layer roughly
    /// preserves variance.
    pub fn new(config: EncoderConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        if config.dim == 0 || config.hidden_dim == 0 {
            return Err(Error::InvalidArgument("encoder dims must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden_dim;
        let d = config.dim;
        let mut uniform = |n: usize, std: f64| -> Vec<f64> {
            let a = std * 3f64.sqrt();
            (0..n).map(|_| rng.gen_range(-a..a)).collect()
        };
        let layer_std = 1.0 / (h as f64).sqrt();
        Ok(EncoderParams {
            embeddings: uniform(vocab.len() * h, 1.0),
            hidden_w: uniform(h * h, layer_std),
            hidden_b: vec![0.0; h],
            proj_w: uniform(h * d, layer_std),
            proj_b: vec![0.0; d],
            config,
            vocab,
            generation: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn tensors(&self) -> [&[f64]; 5] {
        [
            &self.embeddings,
            &self.hidden_w,
            &self.hidden_b,
            &self.proj_w,
            &self.proj_b,
        ]
    }

    /// Mutable access to all tensors. Invalidates outstanding forward caches.
    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 5] {
        self.generation += 1;
        [
            &mut self.embeddings,
            &mut self.hidden_w,
            &mut self.hidden_b,
            &mut self.proj_w,
            &mut self.proj_b,
        ]
    }

    pub fn zero_grads(&self) -> EncoderGrads {
        EncoderGrads {
            embeddings: vec![0.0; self.embeddings.len()],
            hidden_w: vec![0.0; self.hidden_w.len()],
            hidden_b: vec![0.0; self.hidden_b.len()],
            proj_w: vec![0.0; self.proj_w.len()],
            proj_b: vec![0.0; self.proj_b.len()],
        }
    }

    pub fn question_ids(&self, question: &TokenStream) -> Vec<u32> {
        question
            .iter()
            .take(self.config.max_question_len)
            .map(|t| self.vocab.id(t))
            .collect()
    }

    /// `title [SEP] text`, truncated to the passage length limit.
    pub fn passage_ids(&self, title: &str, text: &str) -> Result<Vec<u32>> {
        let text = tokenize(text);
        if text.is_empty() {
            return Err(Error::EmptyInput);
        }
        let title = tokenize(title);
        Ok(title
            .iter()
            .map(|t| self.vocab.id(t))
            .chain(std::iter::once(SEP_ID))
            .chain(text.iter().map(|t| self.vocab.id(t)))
            .take(self.config.max_passage_len)
            .collect())
    }

    /// Runs the shared tower on token ids and keeps the activations.
    pub fn forward(&self, ids: &[u32]) -> Result<ForwardCache> {
        if ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        let h = self.config.hidden_dim;
        let d = self.config.dim;
        let mut mean = vec![0.0; h];
        for &id in ids {
            let row = &self.embeddings[id as usize * h..(id as usize + 1) * h];
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let inv_len = 1.0 / ids.len() as f64;
        mean.iter_mut().for_each(|m| *m *= inv_len);

        let mut hidden = self.hidden_b.clone();
        for (j, &mj) in mean.iter().enumerate() {
            let row = &self.hidden_w[j * h..(j + 1) * h];
            for (a, w) in hidden.iter_mut().zip(row) {
                *a += mj * w;
            }
        }
        hidden.iter_mut().for_each(|a| *a = a.tanh());

        let mut z = self.proj_b.clone();
        for (k, &hk) in hidden.iter().enumerate() {
            let row = &self.proj_w[k * d..(k + 1) * d];
            for (zi, w) in z.iter_mut().zip(row) {
                *zi += hk * w;
            }
        }
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > f64::MIN_POSITIVE) || !norm.is_finite() {
            return Err(Error::DegenerateEmbedding { id: None });
        }
        let output = z.iter().map(|v| v / norm).collect();
        Ok(ForwardCache {
            ids: ids.to_vec(),
            mean,
            hidden,
            norm,
            output,
            generation: self.generation,
        })
    }

    /// Accumulates into `grads` the parameter gradients given `upstream`,
    /// the gradient of some scalar w.r.t. the normalized output of `cache`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64], grads: &mut EncoderGrads) -> Result<()> {
        if cache.generation != self.generation {
            return Err(Error::StaleActivation);
        }
        let h = self.config.hidden_dim;
        let d = self.config.dim;
        if upstream.len() != d {
            return Err(Error::DimMismatch {
                expected: d,
                found: upstream.len(),
            });
        }
        let dz = normalize_backward(&cache.output, cache.norm, upstream);

        let mut dhidden = vec![0.0; h];
        for (k, &hk) in cache.hidden.iter().enumerate() {
            let w = &self.proj_w[k * d..(k + 1) * d];
            let g = &mut grads.proj_w[k * d..(k + 1) * d];
            let mut acc = 0.0;
            for ((gi, wi), dzi) in g.iter_mut().zip(w).zip(&dz) {
                *gi += hk * dzi;
                acc += wi * dzi;
            }
            dhidden[k] = acc;
        }
        for (g, dzi) in grads.proj_b.iter_mut().zip(&dz) {
            *g += dzi;
        }

        let da: Vec<f64> = dhidden
            .iter()
            .zip(&cache.hidden)
            .map(|(g, hk)| g * (1.0 - hk * hk))
            .collect();
        for (g, dai) in grads.hidden_b.iter_mut().zip(&da) {
            *g += dai;
        }
        let mut dmean = vec![0.0; h];
        for (j, &mj) in cache.mean.iter().enumerate() {
            let w = &self.hidden_w[j * h..(j + 1) * h];
            let g = &mut grads.hidden_w[j * h..(j + 1) * h];
            let mut acc = 0.0;
            for ((gi, wi), dai) in g.iter_mut().zip(w).zip(&da) {
                *gi += mj * dai;
                acc += wi * dai;
            }
            dmean[j] = acc;
        }
        let inv_len = 1.0 / cache.ids.len() as f64;
        for &id in &cache.ids {
            let g = &mut grads.embeddings[id as usize * h..(id as usize + 1) * h];
            for (gi, dm) in g.iter_mut().zip(&dmean) {
                *gi += dm * inv_len;
            }
        }
        Ok(())
    }

    pub fn encode_question(&self, question: &TokenStream) -> Result<Embedding> {
        let cache = self.forward(&self.question_ids(question))?;
        Ok(Embedding {
            values: cache.output,
            kind: EmbeddingKind::Question,
        })
    }

    pub fn encode_passage(&self, title: &str, text: &str) -> Result<Embedding> {
        let cache = self.forward(&self.passage_ids(title, text)?)?;
        Ok(Embedding {
            values: cache.output,
            kind: EmbeddingKind::Passage,
        })
    }

    /// Encodes many questions in parallel; output order follows input order.
    pub fn encode_questions(&self, questions: &[&str]) -> Result<Vec<Embedding>> {
        questions
            .par_iter()
            .map(|q| self.encode_question(&tokenize(q)))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = CheckpointMeta {
            config: self.config,
            vocab_hash: self.vocab.hash(),
            vocab: self.vocab.terms.clone(),
        };
        let meta = serde_json::to_vec(&meta)?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(&meta)?;
        for t in self.tensors() {
            for v in t {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a checkpoint, refusing it when its vocabulary hash differs from
    /// `expected_vocab_hash` (if given) or from its own vocabulary.
    pub fn load(path: &Path, expected_vocab_hash: Option<&str>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not an encoder checkpoint".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("checkpoint version {version}")));
        }
        let meta_len = read_u64(&mut r)? as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta)?;
        let meta: CheckpointMeta = serde_json::from_slice(&meta)?;
        let vocab = Vocab::from_terms(meta.vocab);
        let actual = vocab.hash();
        if actual != meta.vocab_hash {
            return Err(Error::VocabMismatch {
                checkpoint: meta.vocab_hash,
                expected: actual,
            });
        }
        if let Some(expected) = expected_vocab_hash {
            if expected != actual {
                return Err(Error::VocabMismatch {
                    checkpoint: actual,
                    expected: expected.to_string(),
                });
            }
        }
        let c = meta.config;
        let (h, d) = (c.hidden_dim, c.dim);
        let mut read = |n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect())
        };
        Ok(EncoderParams {
            embeddings: read(vocab.len() * h)?,
            hidden_w: read(h * h)?,
            hidden_b: read(h)?,
            proj_w: read(h * d)?,
            proj_b: read(d)?,
            config: c,
            vocab,
            generation: 0,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: EncoderConfig,
    vocab_hash: String,
    vocab: Vec<String>,
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn encode_question(params: &EncoderParams, question: &TokenStream) -> Result<Embedding> {
    params.encode_question(question)
}

pub fn encode_passage(params: &EncoderParams, title: &str, text: &str) -> Result<Embedding> {
    params.encode_passage(title, text)
}

/// Dot product of a question and a passage embedding.
pub fn score(q: &Embedding, p: &Embedding) -> Result<f64> {
    if q.kind != EmbeddingKind::Question || p.kind != EmbeddingKind::Passage {
        return Err(Error::InvalidArgument(
            "score expects (question, passage) embeddings".into(),
        ));
    }
    dot(&q.values, &p.values)
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(words: &[&str]) -> Vocab {
        Vocab::from_streams(&[tokenize(&words.join(" "))])
    }

    fn tiny(seed: u64, dim: usize, hidden: usize) -> EncoderParams {
        let config = EncoderConfig {
            dim,
            hidden_dim: hidden,
            max_question_len: 8,
            max_passage_len: 12,
        };
        EncoderParams::new(config, vocab(&["alpha", "beta", "gamma", "delta"]), seed).unwrap()
    }

    #[test]
    fn outputs_are_unit_norm() {
        let p = tiny(1, 5, 4);
        let e = p.encode_question(&tokenize("alpha beta unknown")).unwrap();
        let n: f64 = e.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
        assert_eq!(e.kind, EmbeddingKind::Question);
    }

    #[test]
    fn zero_projection_is_degenerate() {
        let mut p = tiny(1, 3, 4);
        let [_, _, _, pw, pb] = p.tensors_mut();
        pw.iter_mut().for_each(|v| *v = 0.0);
        pb.iter_mut().for_each(|v| *v = 0.0);
        assert!(matches!(
            p.encode_question(&tokenize("alpha")),
            Err(Error::DegenerateEmbedding { .. })
        ));
    }

    #[test]
    fn empty_question_rejected() {
        let p = tiny(1, 3, 4);
        assert!(matches!(p.encode_question(&tokenize("?!")), Err(Error::EmptyInput)));
        assert!(matches!(p.encode_passage("title", ""), Err(Error::EmptyInput)));
    }

    #[test]
    fn hand_computed_two_by_two() {
        // vocab rows: [OOV], [SEP], a, b. H = D = 2.
        let config = EncoderConfig {
            dim: 2,
            hidden_dim: 2,
            max_question_len: 8,
            max_passage_len: 8,
        };
        let mut p = EncoderParams::new(config, vocab(&["a", "b"]), 0).unwrap();
        p.embeddings = vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0, -1.0, 0.5];
        p.hidden_w = vec![0.5, -0.25, 1.0, 0.75];
        p.hidden_b = vec![0.1, -0.2];
        p.proj_w = vec![1.0, 2.0, -0.5, 0.3];
        p.proj_b = vec![0.05, 0.0];
        // mean("a b") = (0, 1.25)
        // hidden pre-activation: (0·0.5 + 1.25·1.0 + 0.1, 0·(-0.25) + 1.25·0.75 − 0.2) = (1.35, 0.7375)
        let h0 = 1.35f64.tanh();
        let h1 = 0.7375f64.tanh();
        let z0 = h0 * 1.0 + h1 * -0.5 + 0.05;
        let z1 = h0 * 2.0 + h1 * 0.3;
        let n = (z0 * z0 + z1 * z1).sqrt();
        let e = p.encode_question(&tokenize("a b")).unwrap();
        assert!((e.values[0] - z0 / n).abs() < 1e-9);
        assert!((e.values[1] - z1 / n).abs() < 1e-9);
    }

    #[test]
    fn passage_stream_includes_separator() {
        let p = tiny(3, 4, 4);
        let ids = p.passage_ids("", "alpha beta").unwrap();
        assert_eq!(ids, vec![SEP_ID, p.vocab.id("alpha"), p.vocab.id("beta")]);
        let titled = p.passage_ids("Gamma", "alpha").unwrap();
        assert_eq!(titled, vec![p.vocab.id("gamma"), SEP_ID, p.vocab.id("alpha")]);
        let long = p.passage_ids("", &"alpha ".repeat(40)).unwrap();
        assert_eq!(long.len(), 12);
        assert_eq!(p.question_ids(&tokenize(&"beta ".repeat(20))).len(), 8);
    }

    #[test]
    fn towers_share_parameters() {
        let p = tiny(4, 6, 5);
        let a = p.encode_passage("Alpha", "beta gamma").unwrap();
        let b = p.encode_passage("Alpha", "beta gamma").unwrap();
        assert_eq!(a, b);
        let ids = p.passage_ids("alpha", "beta").unwrap();
        let via_passage = p.forward(&ids).unwrap();
        // A question that tokenizes to the same id stream.
        let q_ids: Vec<u32> = ids.clone();
        assert_eq!(p.forward(&q_ids).unwrap().output(), via_passage.output());
        let q = p.encode_question(&tokenize("alpha beta")).unwrap();
        let pz = p.forward(&p.question_ids(&tokenize("alpha beta"))).unwrap();
        assert_eq!(q.values, pz.output());
    }

    #[test]
    fn score_contracts() {
        let p = tiny(5, 6, 4);
        let q = p.encode_question(&tokenize("alpha")).unwrap();
        let same = Embedding {
            values: q.values.clone(),
            kind: EmbeddingKind::Passage,
        };
        assert!((score(&q, &same).unwrap() - 1.0).abs() < 1e-12);
        let e1 = Embedding { values: vec![1.0, 0.0], kind: EmbeddingKind::Question };
        let e2 = Embedding { values: vec![0.0, 1.0], kind: EmbeddingKind::Passage };
        assert_eq!(score(&e1, &e2).unwrap(), 0.0);
        let short = Embedding { values: vec![1.0], kind: EmbeddingKind::Passage };
        assert!(matches!(score(&e1, &short), Err(Error::DimMismatch { .. })));
        assert!(score(&e2, &e1).is_err());
    }

    #[test]
    fn scale_invariance_of_outputs() {
        let p = tiny(6, 5, 4);
        let mut scaled = p.clone();
        {
            let [_, _, _, pw, pb] = scaled.tensors_mut();
            pw.iter_mut().for_each(|v| *v *= 3.7);
            pb.iter_mut().for_each(|v| *v *= 3.7);
        }
        for text in ["alpha", "beta gamma", "delta alpha beta"] {
            let a = p.encode_question(&tokenize(text)).unwrap();
            let b = scaled.encode_question(&tokenize(text)).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalization_gradient_is_orthogonal() {
        let p = tiny(7, 6, 4);
        let c = p.forward(&p.question_ids(&tokenize("alpha gamma"))).unwrap();
        let g = vec![0.3, -1.0, 2.0, 0.5, 0.0, 1.5];
        let dz = normalize_backward(c.output(), c.norm(), &g);
        let d: f64 = dz.iter().zip(c.output()).map(|(a, b)| a * b).sum();
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let p = tiny(8, 4, 3);
        let c = p.forward(&p.question_ids(&tokenize("beta delta"))).unwrap();
        let mut g = p.zero_grads();
        p.backward(&c, &[0.0; 4], &mut g).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn stale_cache_rejected() {
        let mut p = tiny(9, 4, 3);
        let c = p.forward(&[2, 3]).unwrap();
        p.tensors_mut()[2][0] += 0.1;
        let mut g = p.zero_grads();
        assert!(matches!(p.backward(&c, &[1.0; 4], &mut g), Err(Error::StaleActivation)));
    }

    /// Central differences of `c · encode(x)` against the analytic backward pass.
    fn gradient_check(seed: u64) -> f64 {
        let p = tiny(seed, 3, 4);
        let ids = vec![2, 3, 3, OOV_ID, SEP_ID];
        let c: Vec<f64> = (0..3).map(|i| (seed as f64 + i as f64).sin()).collect();
        let objective = |params: &EncoderParams| -> f64 {
            let out = params.forward(&ids).unwrap();
            out.output().iter().zip(&c).map(|(a, b)| a * b).sum()
        };
        let cache = p.forward(&ids).unwrap();
        let mut grads = p.zero_grads();
        p.backward(&cache, &c, &mut grads).unwrap();
        let eps = 1e-4;
        let mut worst: f64 = 0.0;
        for t in 0..5 {
            for i in 0..p.tensors()[t].len() {
                let mut plus = p.clone();
                plus.tensors_mut()[t][i] += eps;
                let mut minus = p.clone();
                minus.tensors_mut()[t][i] -= eps;
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * eps);
                let analytic = grads.tensors()[t][i];
                let err = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-6);
                worst = worst.max(err);
            }
        }
        worst
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in [11, 12, 13] {
            let err = gradient_check(seed);
            assert!(err < 1e-4, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn checkpoint_round_trip_and_vocab_guard() {
        let p = tiny(10, 5, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.bin");
        p.save(&path).unwrap();
        let back = EncoderParams::load(&path, Some(&p.vocab.hash())).unwrap();
        assert_eq!(back.tensors(), p.tensors());
        assert_eq!(back.config, p.config);
        let other = vocab(&["zzz"]).hash();
        assert!(matches!(
            EncoderParams::load(&path, Some(&other)),
            Err(Error::VocabMismatch { .. })
        ));
    }
}
