//! Hard-negative pools.
//!
//! Every pool excludes its question's gold passage and holds at most `M` ids.
//!
//! - coarse / fine: top-`M` passages under a separately trained low-dim (25) or
//!   high-dim (512) dual encoder.
//! - bm25: BM25 top `2M` for the question, minus passages containing an answer.
//! - context: the other passages of the gold passage's document, in order. A
//!   single-passage document is split in half and the half without the answer
//!   becomes a synthetic passage.
//! - mixed: union of the above, downsampled to `M`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{CorpusStore, Passage, TrainingPair};
use crate::dense_index::DenseIndex;
use crate::encoder::{EncoderConfig, EncoderParams, Vocab};
use crate::error::{Error, Result};
use crate::sparse_index::InvertedIndex;
use crate::text::{answer_occurrences, contains_answer_span, tokenize};
use crate::trainer::{self, DevSet, Stage, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Coarse,
    Fine,
    Bm25,
    Context,
    Mixed,
}

impl Strategy {
    pub const SINGLE: [Strategy; 4] = [Strategy::Coarse, Strategy::Fine, Strategy::Bm25, Strategy::Context];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Coarse => "coarse",
            Strategy::Fine => "fine",
            Strategy::Bm25 => "bm25",
            Strategy::Context => "context",
            Strategy::Mixed => "mixed",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "coarse" => Ok(Strategy::Coarse),
            "fine" => Ok(Strategy::Fine),
            "bm25" => Ok(Strategy::Bm25),
            "context" => Ok(Strategy::Context),
            "mixed" => Ok(Strategy::Mixed),
            other => Err(Error::Config(format!("unknown negative strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativePool {
    #[serde(rename = "qhash")]
    pub question_key: String,
    pub strategy: Strategy,
    #[serde(rename = "ids")]
    pub passage_ids: Vec<String>,
    /// Originating strategy per id.
    pub provenance: Vec<Strategy>,
}

impl NegativePool {
    fn single(question: &str, strategy: Strategy, ids: Vec<String>) -> Self {
        NegativePool {
            question_key: question_key(question),
            strategy,
            provenance: vec![strategy; ids.len()],
            passage_ids: ids,
        }
    }

    pub fn len(&self) -> usize {
        self.passage_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passage_ids.is_empty()
    }
}

/// Pools aligned with the input pairs, plus any synthetic passages they reference.
#[derive(Debug, Clone, Default)]
pub struct Mined {
    pub pools: Vec<NegativePool>,
    pub synthetic: Vec<Passage>,
    pub warnings: Vec<String>,
}

impl Mined {
    pub fn id_lists(&self) -> Vec<Vec<String>> {
        self.pools.iter().map(|p| p.passage_ids.clone()).collect()
    }
}

/// Stable key for a question string (first 128 bits of SHA-256, hex).
pub fn question_key(question: &str) -> String {
    hex::encode(&Sha256::digest(question.as_bytes())[..16])
}

fn record(warnings: &mut Vec<String>, message: String) {
    warn!("{message}");
    warnings.push(message);
}

/// Trains a miner dual encoder on the pairs with in-batch negatives only.
pub fn train_miner(
    pairs: &[TrainingPair],
    passages: &CorpusStore,
    vocab: Vocab,
    encoder: EncoderConfig,
    config: &TrainConfig,
    dev: Option<DevSet<'_>>,
) -> Result<EncoderParams> {
    let config = TrainConfig {
        hard_neg_count: 0,
        ..config.clone()
    };
    let params = EncoderParams::new(encoder, vocab, config.seed)?;
    let stage = Stage {
        pairs,
        pools: None,
        config: &config,
    };
    Ok(trainer::train(params, None, Some(stage), dev, passages)?.params)
}

/// Dense retrieval pools: top-`m` by dot product, gold excluded.
pub fn mine_dense(
    pairs: &[TrainingPair],
    corpus: &CorpusStore,
    miner: &EncoderParams,
    m: usize,
    strategy: Strategy,
) -> Result<Mined> {
    let index = DenseIndex::build(corpus, miner)?;
    let mut out = Mined::default();
    if corpus.len() < m + 1 {
        record(
            &mut out.warnings,
            format!("corpus has {} passages; {} pools truncated below M={m}", corpus.len(), strategy.name()),
        );
    }
    let questions: Vec<&str> = pairs.iter().map(|p| p.question.as_str()).collect();
    let embeddings = miner.encode_questions(&questions)?;
    let rankings = index.search_batch(&embeddings, m + 1)?;
    out.pools = pairs
        .iter()
        .zip(rankings)
        .map(|(pair, ranking)| {
            let ids = ranking
                .hits
                .into_iter()
                .map(|h| h.passage_id)
                .filter(|id| *id != pair.gold_passage_id)
                .take(m)
                .collect();
            NegativePool::single(&pair.question, strategy, ids)
        })
        .collect();
    Ok(out)
}

pub fn mine_coarse(pairs: &[TrainingPair], corpus: &CorpusStore, miner: &EncoderParams, m: usize) -> Result<Mined> {
    mine_dense(pairs, corpus, miner, m, Strategy::Coarse)
}

pub fn mine_fine(pairs: &[TrainingPair], corpus: &CorpusStore, miner: &EncoderParams, m: usize) -> Result<Mined> {
    mine_dense(pairs, corpus, miner, m, Strategy::Fine)
}

/// BM25 pools: top `2m` for the question, without the gold or any passage
/// containing an answer span, truncated to `m`.
pub fn mine_bm25(pairs: &[TrainingPair], index: &InvertedIndex, corpus: &CorpusStore, m: usize) -> Result<Mined> {
    if let Some(p) = pairs.iter().find(|p| p.answer_spans.is_empty()) {
        return Err(Error::MissingAnswers(p.question.clone()));
    }
    let depth = (2 * m).max(1);
    let results: Vec<Result<NegativePool>> = pairs
        .par_iter()
        .map(|pair| {
            let ranking = index.top_k(&tokenize(&pair.question), depth);
            let mut ids = Vec::with_capacity(m);
            for hit in ranking.hits {
                if ids.len() == m {
                    break;
                }
                if hit.passage_id == pair.gold_passage_id {
                    continue;
                }
                let passage = corpus
                    .get(&hit.passage_id)
                    .ok_or_else(|| Error::UnresolvedReference(hit.passage_id.clone()))?;
                if !contains_answer_span(passage, &pair.answer_spans) {
                    ids.push(hit.passage_id);
                }
            }
            Ok(NegativePool::single(&pair.question, Strategy::Bm25, ids))
        })
        .collect();
    let mut out = Mined::default();
    for (pair, pool) in pairs.iter().zip(results) {
        let pool = pool?;
        if pool.is_empty() {
            record(&mut out.warnings, format!("empty BM25 pool for {:?}", pair.question));
        }
        out.pools.push(pool);
    }
    Ok(out)
}

/// Picks the half of a single-passage document to use as its context negative.
/// Returns `(half index, half text)`; `None` if the passage has fewer than two words.
fn pick_half(text: &str, answers: &[String]) -> Option<(usize, String)> {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() < 2 {
        return None;
    }
    let mid = words.len() / 2;
    let halves = [words[..mid].join(" "), words[mid..].join(" ")];
    let counts: Vec<usize> = halves
        .iter()
        .map(|h| answer_occurrences(&tokenize(h).tokens, answers))
        .collect();
    let pick = if counts[0] < counts[1] { 0 } else { 1 };
    Some((pick, halves[pick].clone()))
}

/// Id of a synthetic half-passage derived from `passage_id`.
pub fn half_passage_id(passage_id: &str, half: usize) -> String {
    format!("{passage_id}~half{half}")
}

pub fn mine_context(pairs: &[TrainingPair], corpus: &CorpusStore, m: usize) -> Result<Mined> {
    if !corpus.has_document_structure() {
        return Err(Error::NoDocumentStructure);
    }
    let mut out = Mined::default();
    let mut synthetic: BTreeMap<String, Passage> = BTreeMap::new();
    for pair in pairs {
        let gold = corpus
            .get(&pair.gold_passage_id)
            .ok_or_else(|| Error::UnresolvedReference(pair.gold_passage_id.clone()))?;
        let siblings = corpus.document_passages(&gold.doc_id).unwrap_or_default();
        let ids: Vec<String> = if siblings.len() > 1 {
            siblings
                .iter()
                .filter(|p| p.passage_id != gold.passage_id)
                .take(m)
                .map(|p| p.passage_id.clone())
                .collect()
        } else {
            if pair.answer_spans.is_empty() {
                return Err(Error::MissingAnswers(pair.question.clone()));
            }
            match pick_half(&gold.text, &pair.answer_spans) {
                Some((half, text)) if m > 0 => {
                    let id = half_passage_id(&gold.passage_id, half);
                    synthetic.entry(id.clone()).or_insert_with(|| Passage {
                        passage_id: id.clone(),
                        doc_id: gold.doc_id.clone(),
                        title: gold.title.clone(),
                        text,
                        position: gold.position,
                    });
                    vec![id]
                }
                Some(_) => Vec::new(),
                None => {
                    record(
                        &mut out.warnings,
                        format!("passage {} too short to split for a context negative", gold.passage_id),
                    );
                    Vec::new()
                }
            }
        };
        out.pools.push(NegativePool::single(&pair.question, Strategy::Context, ids));
    }
    out.synthetic = synthetic.into_values().collect();
    Ok(out)
}

/// Per-question union of pools from several strategies (in the given order),
/// deduplicated with first-seen provenance and uniformly downsampled to `m`.
/// Each inner slice must be aligned with the same pair list.
pub fn mix_pools(pools_by_strategy: &[&[NegativePool]], m: usize, seed: u64) -> Result<Vec<NegativePool>> {
    if pools_by_strategy.len() < 2 {
        return Err(Error::InvalidArgument("mixing needs at least two strategies".into()));
    }
    let n = pools_by_strategy[0].len();
    if pools_by_strategy.iter().any(|p| p.len() != n) {
        return Err(Error::InvalidArgument("pool lists are not aligned".into()));
    }
    let mut mixed = Vec::with_capacity(n);
    for i in 0..n {
        let key = &pools_by_strategy[0][i].question_key;
        let mut seen = HashSet::new();
        let mut ids = Vec::new();
        let mut provenance = Vec::new();
        for pools in pools_by_strategy {
            let pool = &pools[i];
            if &pool.question_key != key {
                return Err(Error::InvalidArgument("pool lists are not aligned".into()));
            }
            for (j, id) in pool.passage_ids.iter().enumerate() {
                if seen.insert(id.clone()) {
                    ids.push(id.clone());
                    provenance.push(pool.provenance.get(j).copied().unwrap_or(pool.strategy));
                }
            }
        }
        if ids.len() > m {
            let key_seed = u64::from_str_radix(&key[..16], 16).unwrap_or(0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ key_seed);
            let mut keep = rand::seq::index::sample(&mut rng, ids.len(), m).into_vec();
            keep.sort_unstable();
            ids = keep.iter().map(|&k| ids[k].clone()).collect();
            provenance = keep.iter().map(|&k| provenance[k]).collect();
        }
        mixed.push(NegativePool {
            question_key: key.clone(),
            strategy: Strategy::Mixed,
            passage_ids: ids,
            provenance,
        });
    }
    Ok(mixed)
}

pub fn write_pools(pools: &[NegativePool], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in pools {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pools(path: &Path) -> Result<Vec<NegativePool>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Looks up each pair's pool by question key; pairs without one get an empty pool.
pub fn align_pools(pairs: &[TrainingPair], pools: &[NegativePool]) -> Vec<Vec<String>> {
    let by_key: HashMap<&str, &NegativePool> = pools.iter().map(|p| (p.question_key.as_str(), p)).collect();
    pairs
        .iter()
        .map(|pair| {
            by_key
                .get(question_key(&pair.question).as_str())
                .map(|p| p.passage_ids.clone())
                .unwrap_or_default()
        })
        .collect()
}
