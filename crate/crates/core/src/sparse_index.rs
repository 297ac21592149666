//! Okapi BM25 over an in-memory inverted index.
//!
//! ```text
//! score(q, p) = Σ_{t ∈ q} idf(t) · tf·(k1+1) / (tf + k1·(1 − b + b·len/avglen))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! Query terms are deduplicated. Passages are indexed as `title text`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStore, Passage};
use crate::error::{Error, Result};
use crate::ranking::{Hit, Ranking};
use crate::text::{tokenize, TokenStream};

pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.82, b: 0.68 }
    }
}

impl Bm25Params {
    fn validate(&self) -> Result<()> {
        if !(self.k1 >= 0.0) || !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidArgument(format!(
                "BM25 parameters out of range: k1={}, b={}",
                self.k1, self.b
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvertedIndex {
    format_version: u32,
    params: Bm25Params,
    passage_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    postings: BTreeMap<String, Vec<Posting>>,
    #[serde(skip)]
    lookup: HashMap<String, u32>,
}

/// Tokens BM25 sees for a passage.
pub fn passage_terms(p: &Passage) -> Vec<String> {
    let mut tokens = tokenize(&p.title).tokens;
    tokens.extend(tokenize(&p.text).tokens);
    tokens
}

impl InvertedIndex {
    pub fn build(corpus: &CorpusStore, params: Bm25Params) -> Result<Self> {
        params.validate()?;
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        let mut passage_ids = Vec::with_capacity(corpus.len());
        for (doc, p) in corpus.passages().iter().enumerate() {
            let terms = passage_terms(p);
            doc_lengths.push(terms.len() as u32);
            passage_ids.push(p.passage_id.clone());
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in terms {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (term, tf) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: doc as u32,
                    tf,
                });
            }
        }
        let avg_doc_length =
            doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / doc_lengths.len() as f64;
        let mut index = InvertedIndex {
            format_version: INDEX_FORMAT_VERSION,
            params,
            passage_ids,
            doc_lengths,
            avg_doc_length,
            postings,
            lookup: HashMap::new(),
        };
        index.rebuild_lookup();
        Ok(index)
    }

    fn rebuild_lookup(&mut self) {
        self.lookup = self
            .passage_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn corpus_size(&self) -> usize {
        self.passage_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, passage_id: &str) -> Option<u32> {
        self.lookup.get(passage_id).map(|&i| self.doc_lengths[i as usize])
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn passage_id(&self, doc: u32) -> &str {
        &self.passage_ids[doc as usize]
    }

    pub fn idf(&self, term: &str) -> f64 {
        let df = self.postings(term).len() as f64;
        let n = self.corpus_size() as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, tf: u32, doc: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let len = self.doc_lengths[doc as usize] as f64;
        let norm = if self.avg_doc_length > 0.0 {
            1.0 - b + b * len / self.avg_doc_length
        } else {
            1.0
        };
        tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    fn unique_terms(query: &TokenStream) -> Vec<&str> {
        let mut seen = HashSet::new();
        query.iter().filter(|t| seen.insert(*t)).collect()
    }

    pub fn score(&self, query: &TokenStream, passage_id: &str) -> Result<f64> {
        let doc = *self
            .lookup
            .get(passage_id)
            .ok_or_else(|| Error::NotIndexed(passage_id.to_string()))?;
        let mut score = 0.0;
        for term in Self::unique_terms(query) {
            let postings = self.postings(term);
            if let Ok(pos) = postings.binary_search_by_key(&doc, |p| p.doc) {
                score += self.idf(term) * self.term_weight(postings[pos].tf, doc);
            }
        }
        Ok(score)
    }

    /// Top-`k` passages with positive score, best first, ties by ascending id.
    pub fn top_k(&self, query: &TokenStream, k: usize) -> Ranking {
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for term in Self::unique_terms(query) {
            let postings = self.postings(term);
            if postings.is_empty() {
                continue;
            }
            let idf = self.idf(term);
            for p in postings {
                *acc.entry(p.doc).or_insert(0.0) += idf * self.term_weight(p.tf, p.doc);
            }
        }
        let hits = acc
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .map(|(doc, score)| Hit {
                passage_id: self.passage_ids[doc as usize].clone(),
                score,
            })
            .collect();
        Ranking::from_unsorted(hits, k)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut index: InvertedIndex = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if index.format_version != INDEX_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "sparse index format version {} (expected {})",
                index.format_version, INDEX_FORMAT_VERSION
            )));
        }
        index.params.validate()?;
        index.rebuild_lookup();
        Ok(index)
    }
}

/// Builds an index with `params`, or the defaults (k1 = 0.82, b = 0.68).
pub fn build_index(corpus: &CorpusStore, params: Option<Bm25Params>) -> Result<InvertedIndex> {
    InvertedIndex::build(corpus, params.unwrap_or_default())
}

pub fn bm25_score(index: &InvertedIndex, query: &TokenStream, passage_id: &str) -> Result<f64> {
    index.score(query, passage_id)
}

pub fn bm25_topk(index: &InvertedIndex, query: &TokenStream, k: usize) -> Result<Ranking> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    Ok(index.top_k(query, k))
}
