//! Exact maximum-inner-product search over passage embeddings.
//!
//! On-disk layout (little-endian):
//!
//! ```text
//! magic "HNDX" | version u32 | n u64 | dim u32 | n·dim f32 rows | n × (len u32, utf-8 id)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::CorpusStore;
use crate::encoder::{EncoderParams, Embedding};
use crate::error::{Error, Result};
use crate::ranking::{Hit, Ranking};

const MAGIC: &[u8; 4] = b"HNDX";
const VERSION: u32 = 1;
const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    ids: Vec<String>,
    matrix: Vec<f64>,
    dim: usize,
}

/// Full-scan top-`k` by dot product over row-major `matrix`; ties by ascending id.
pub fn top_k_dot(ids: &[String], matrix: &[f64], dim: usize, query: &[f64], k: usize) -> Ranking {
    let hits = matrix
        .chunks_exact(dim)
        .zip(ids)
        .map(|(row, id)| Hit {
            passage_id: id.clone(),
            score: row.iter().zip(query).map(|(a, b)| a * b).sum(),
        })
        .collect();
    Ranking::from_unsorted(hits, k)
}

impl DenseIndex {
    /// Builds from precomputed unit-norm rows.
    pub fn from_rows(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let dim = rows[0].len();
        let mut seen = std::collections::HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        if ids.len() != rows.len() {
            return Err(Error::InvalidArgument("ids and rows differ in length".into()));
        }
        for (id, row) in ids.iter().zip(&rows) {
            if row.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::InvalidArgument(format!("row {id} has norm {n}")));
            }
        }
        Ok(DenseIndex {
            ids,
            matrix: rows.into_iter().flatten().collect(),
            dim,
        })
    }

    pub fn build(corpus: &CorpusStore, params: &EncoderParams) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let rows: Vec<Vec<f64>> = corpus
            .passages()
            .par_iter()
            .map(|p| {
                params
                    .encode_passage(&p.title, &p.text)
                    .map(|e| e.values)
                    .map_err(|e| match e {
                        Error::DegenerateEmbedding { .. } => Error::DegenerateEmbedding {
                            id: Some(p.passage_id.clone()),
                        },
                        other => other,
                    })
            })
            .collect::<Result<_>>()?;
        let ids = corpus.passages().iter().map(|p| p.passage_id.clone()).collect();
        Ok(DenseIndex {
            ids,
            matrix: rows.into_iter().flatten().collect(),
            dim: params.dim(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn search_vector(&self, query: &[f64], k: usize) -> Result<Ranking> {
        if query.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: query.len(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        Ok(top_k_dot(&self.ids, &self.matrix, self.dim, query, k))
    }

    pub fn search(&self, q: &Embedding, k: usize) -> Result<Ranking> {
        self.search_vector(&q.values, k)
    }

    /// Parallel search; results follow query order.
    pub fn search_batch(&self, queries: &[Embedding], k: usize) -> Result<Vec<Ranking>> {
        queries.par_iter().map(|q| self.search(q, k)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for v in &self.matrix {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        for id in &self.ids {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a dense index file".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(Error::Format(format!("dense index version {version}")));
        }
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b4)?;
        let dim = u32::from_le_bytes(b4) as usize;
        let mut raw = vec![0u8; n * dim * 4];
        r.read_exact(&mut raw)?;
        let matrix = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b4)?;
            let mut buf = vec![0u8; u32::from_le_bytes(b4) as usize];
            r.read_exact(&mut buf)?;
            ids.push(String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))?);
        }
        Ok(DenseIndex { ids, matrix, dim })
    }
}

pub fn build_dense(corpus: &CorpusStore, params: &EncoderParams) -> Result<DenseIndex> {
    DenseIndex::build(corpus, params)
}

pub fn search(index: &DenseIndex, q: &Embedding, k: usize) -> Result<Ranking> {
    index.search(q, k)
}
