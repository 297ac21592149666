//! Combining dual encoders trained with different negatives.
//!
//! Embedding fusion concatenates `α_m · v_m` over members for both questions
//! and passages, so the fused dot product is `Σ_m α_m² (q_m · p_m)`. Fused
//! vectors are not re-normalized. Rank fusion (RRF) scores a passage by
//! `Σ_m 1 / (k + rank_m)` over the members that returned it.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusStore;
use crate::dense_index::{top_k_dot, DenseIndex};
use crate::error::{Error, Result};
use crate::eval::{self, Judgments, Rankings};
use crate::ranking::{Hit, Ranking};

pub const DEFAULT_RRF_K: f64 = 60.0;
pub const DEFAULT_COEFFICIENT_GRID: [f64; 3] = [0.5, 1.0, 1.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionSpec {
    pub members: Vec<String>,
    pub coefficients: Vec<f64>,
    pub rrf_k: f64,
}

impl FusionSpec {
    pub fn uniform(members: Vec<String>) -> Self {
        FusionSpec {
            coefficients: vec![1.0; members.len()],
            members,
            rrf_k: DEFAULT_RRF_K,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.coefficients.len() != self.members.len() {
            return Err(Error::SpecMismatch(format!(
                "{} members but {} coefficients",
                self.members.len(),
                self.coefficients.len()
            )));
        }
        if self.coefficients.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::SpecMismatch("coefficients must be > 0".into()));
        }
        if !(self.rrf_k > 0.0) {
            return Err(Error::SpecMismatch("rrf_k must be > 0".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let spec: FusionSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Concatenation of coefficient-scaled member vectors for one item.
pub fn embedding_fusion(vectors: &[&[f64]], spec: &FusionSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if vectors.len() != spec.members.len() {
        return Err(Error::SpecMismatch(format!(
            "{} vectors for {} members",
            vectors.len(),
            spec.members.len()
        )));
    }
    Ok(vectors
        .iter()
        .zip(&spec.coefficients)
        .flat_map(|(v, &a)| v.iter().map(move |x| a * x))
        .collect())
}

/// Passage side of embedding fusion: one concatenated row per passage.
#[derive(Debug, Clone)]
pub struct FusedIndex {
    ids: Vec<String>,
    matrix: Vec<f64>,
    dim: usize,
}

impl FusedIndex {
    /// Members must index the same passages in the same order.
    pub fn build(members: &[&DenseIndex], spec: &FusionSpec) -> Result<Self> {
        spec.validate()?;
        if members.len() != spec.members.len() || members.is_empty() {
            return Err(Error::SpecMismatch("member index count differs from spec".into()));
        }
        let ids = members[0].ids().to_vec();
        if members.iter().any(|m| m.ids() != ids.as_slice()) {
            return Err(Error::SpecMismatch("member indexes cover different passages".into()));
        }
        let dim = members.iter().map(|m| m.dim()).sum();
        let mut matrix = Vec::with_capacity(ids.len() * dim);
        for i in 0..ids.len() {
            let rows: Vec<&[f64]> = members.iter().map(|m| m.row(i)).collect();
            matrix.extend(embedding_fusion(&rows, spec)?);
        }
        Ok(FusedIndex { ids, matrix, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn search(&self, fused_query: &[f64], k: usize) -> Result<Ranking> {
        if fused_query.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: fused_query.len(),
            });
        }
        Ok(top_k_dot(&self.ids, &self.matrix, self.dim, fused_query, k))
    }
}

/// Reciprocal rank fusion over member rankings (1-based ranks); ties by ascending id.
pub fn rrf_fusion(rankings: &[&Ranking], rrf_k: f64) -> Result<Ranking> {
    if rankings.is_empty() {
        return Err(Error::InvalidArgument("rank fusion needs at least one member".into()));
    }
    if !(rrf_k > 0.0) {
        return Err(Error::SpecMismatch("rrf_k must be > 0".into()));
    }
    let mut scores: HashMap<&str, f64> = HashMap::new();
    for r in rankings {
        for (i, h) in r.hits.iter().enumerate() {
            *scores.entry(h.passage_id.as_str()).or_insert(0.0) += 1.0 / (rrf_k + (i + 1) as f64);
        }
    }
    let n = scores.len();
    let hits = scores
        .into_iter()
        .map(|(id, score)| Hit {
            passage_id: id.to_string(),
            score,
        })
        .collect();
    Ok(Ranking::from_unsorted(hits, n))
}

/// A trained member: its passage index and its dev-question embeddings.
pub struct FusionMember<'a> {
    pub name: String,
    pub index: &'a DenseIndex,
    pub questions: Vec<Vec<f64>>,
}

/// What the coefficient search maximizes on the dev set.
pub enum DevObjective<'a> {
    /// Top-1 answer accuracy (span-judged tasks).
    Top1 {
        judgments: &'a Judgments,
        corpus: &'a CorpusStore,
    },
    /// MRR@10 (qrels tasks).
    Mrr10 { judgments: &'a Judgments },
}

fn grid_points(grid: &[f64], members: usize) -> Vec<Vec<f64>> {
    let mut points = vec![Vec::new()];
    for _ in 0..members {
        points = points
            .into_iter()
            .flat_map(|p| {
                grid.iter().map(move |&g| {
                    let mut q = p.clone();
                    q.push(g);
                    q
                })
            })
            .collect();
    }
    points
}

/// (relative spread, mean distance from 1): smaller is "more uniform".
fn uniformity_key(coeffs: &[f64]) -> (f64, f64) {
    let max = coeffs.iter().cloned().fold(f64::MIN, f64::max);
    let min = coeffs.iter().cloned().fold(f64::MAX, f64::min);
    let spread = (max - min) / max;
    let off_one = coeffs.iter().map(|c| (c - 1.0).abs()).sum::<f64>() / coeffs.len() as f64;
    (spread, off_one)
}

/// Exhaustive grid search over per-member coefficients. Ties go to the most
/// uniform point, then the one closest to all-ones, then grid order.
pub fn tune_coefficients(
    members: &[FusionMember<'_>],
    dev_query_ids: &[String],
    objective: &DevObjective<'_>,
    grid: &[f64],
) -> Result<FusionSpec> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if members.is_empty() {
        return Err(Error::SpecMismatch("no members".into()));
    }
    if members.iter().any(|m| m.questions.len() != dev_query_ids.len()) {
        return Err(Error::SpecMismatch("member question embeddings not aligned with dev queries".into()));
    }
    let ids = members[0].index.ids();
    if members.iter().any(|m| m.index.ids() != ids) {
        return Err(Error::SpecMismatch("member indexes cover different passages".into()));
    }
    // Per-member score matrices: scores[m][q][p].
    let scores: Vec<Vec<Vec<f64>>> = members
        .iter()
        .map(|m| {
            m.questions
                .par_iter()
                .map(|q| {
                    m.index
                        .matrix()
                        .chunks_exact(m.index.dim())
                        .map(|row| row.iter().zip(q).map(|(a, b)| a * b).sum())
                        .collect()
                })
                .collect()
        })
        .collect();
    let depth = match objective {
        DevObjective::Top1 { .. } => 1,
        DevObjective::Mrr10 { .. } => 10,
    };
    let points = grid_points(grid, members.len());
    let evaluated: Vec<f64> = points
        .par_iter()
        .map(|alphas| {
            let rankings: Rankings = dev_query_ids
                .iter()
                .enumerate()
                .map(|(qi, qid)| {
                    let hits = (0..ids.len())
                        .map(|p| Hit {
                            passage_id: ids[p].clone(),
                            score: alphas
                                .iter()
                                .zip(&scores)
                                .map(|(a, s)| a * a * s[qi][p])
                                .sum(),
                        })
                        .collect();
                    (qid.clone(), Ranking::from_unsorted(hits, depth))
                })
                .collect();
            match objective {
                DevObjective::Top1 { judgments, corpus } => {
                    eval::topk_accuracy(&rankings, judgments, corpus, &[1]).map(|v| v[0].1)
                }
                DevObjective::Mrr10 { judgments } => eval::mrr_at_k(&rankings, judgments, 10).map(|m| m.value),
            }
        })
        .collect::<Result<_>>()?;
    let best = evaluated.iter().cloned().fold(f64::MIN, f64::max);
    let winner = points
        .iter()
        .zip(&evaluated)
        .filter(|(_, &v)| v == best)
        .map(|(p, _)| p)
        .min_by(|a, b| {
            let (ka, kb) = (uniformity_key(a), uniformity_key(b));
            ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
        })
        .expect("grid is nonempty");
    Ok(FusionSpec {
        members: members.iter().map(|m| m.name.clone()).collect(),
        coefficients: winner.clone(),
        rrf_k: DEFAULT_RRF_K,
    })
}
