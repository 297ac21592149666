//! Retrieval metrics: Top-K answer accuracy, MRR@k, Recall@k, NDCG@k.
//!
//! Rankings and judgments are keyed by query id. Every ranked query needs a
//! judgment; judged queries without a ranking count as empty rankings.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusStore;
use crate::error::{Error, Result};
use crate::ranking::{Hit, Ranking};
use crate::text::{contains_any_answer, tokenize};

/// Cutoffs for Top-K accuracy.
pub const DEFAULT_TOPK: [usize; 5] = [1, 5, 10, 20, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Judgment {
    /// Span task: a passage is relevant when it contains any answer.
    Answers(Vec<String>),
    /// Qrels task: graded relevance per passage id.
    Graded(BTreeMap<String, i64>),
}

pub type Rankings = BTreeMap<String, Ranking>;
pub type Judgments = BTreeMap<String, Judgment>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gain {
    /// `2^rel − 1`, as in trec_eval.
    #[default]
    Exponential,
    Linear,
}

/// Mean over evaluated queries, with the count of queries skipped for lack of positives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricValue {
    pub value: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

fn check_coverage(rankings: &Rankings, judgments: &Judgments) -> Result<()> {
    match rankings.keys().find(|q| !judgments.contains_key(*q)) {
        Some(q) => Err(Error::MissingJudgment(q.clone())),
        None => Ok(()),
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    Ok(())
}

fn graded<'a>(qid: &str, j: &'a Judgment) -> Result<&'a BTreeMap<String, i64>> {
    match j {
        Judgment::Graded(g) => {
            if let Some((docid, &grade)) = g.iter().find(|(_, &v)| v < 0) {
                return Err(Error::InvalidGrade {
                    qid: qid.to_string(),
                    docid: docid.clone(),
                    grade,
                });
            }
            Ok(g)
        }
        Judgment::Answers(_) => Err(Error::WrongJudgmentKind {
            qid: qid.to_string(),
            expected: "graded",
        }),
    }
}

fn empty() -> Ranking {
    Ranking::default()
}

/// Fraction of queries whose top-`k` contains a passage with an answer span, per `k`.
pub fn topk_accuracy(
    rankings: &Rankings,
    judgments: &Judgments,
    corpus: &CorpusStore,
    ks: &[usize],
) -> Result<Vec<(usize, f64)>> {
    check_coverage(rankings, judgments)?;
    for &k in ks {
        check_k(k)?;
    }
    if judgments.is_empty() {
        return Ok(ks.iter().map(|&k| (k, 0.0)).collect());
    }
    let max_k = ks.iter().copied().max().unwrap_or(0);
    let mut first_hit = Vec::with_capacity(judgments.len());
    for (qid, j) in judgments {
        let Judgment::Answers(answers) = j else {
            return Err(Error::WrongJudgmentKind {
                qid: qid.clone(),
                expected: "answers",
            });
        };
        let ranking = rankings.get(qid).cloned().unwrap_or_else(empty);
        let rank = ranking.hits.iter().take(max_k).position(|h| {
            corpus
                .get(&h.passage_id)
                .is_some_and(|p| contains_any_answer(&tokenize(&p.text).tokens, answers))
        });
        first_hit.push(rank.map(|r| r + 1));
    }
    let n = first_hit.len() as f64;
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = first_hit.iter().filter(|r| r.is_some_and(|r| r <= k)).count();
            (k, hits as f64 / n)
        })
        .collect())
}

/// Converts answer judgments to binary graded ones over the ranked passages.
pub fn resolve_answer_judgments(
    rankings: &Rankings,
    judgments: &Judgments,
    corpus: &CorpusStore,
) -> Result<Judgments> {
    check_coverage(rankings, judgments)?;
    let mut out = Judgments::new();
    for (qid, j) in judgments {
        let resolved = match j {
            Judgment::Graded(g) => g.clone(),
            Judgment::Answers(answers) => {
                let mut g = BTreeMap::new();
                for h in rankings.get(qid).map(|r| r.hits.as_slice()).unwrap_or(&[]) {
                    if let Some(p) = corpus.get(&h.passage_id) {
                        if contains_any_answer(&tokenize(&p.text).tokens, answers) {
                            g.insert(h.passage_id.clone(), 1);
                        }
                    }
                }
                g
            }
        };
        out.insert(qid.clone(), Judgment::Graded(resolved));
    }
    Ok(out)
}

pub fn mrr_at_k(rankings: &Rankings, judgments: &Judgments, k: usize) -> Result<MetricValue> {
    check_coverage(rankings, judgments)?;
    check_k(k)?;
    let mut sum = 0.0;
    for (qid, j) in judgments {
        let g = graded(qid, j)?;
        if let Some(r) = rankings.get(qid) {
            if let Some(pos) = r
                .hits
                .iter()
                .take(k)
                .position(|h| g.get(&h.passage_id).is_some_and(|&v| v > 0))
            {
                sum += 1.0 / (pos + 1) as f64;
            }
        }
    }
    let n = judgments.len();
    Ok(MetricValue {
        value: if n == 0 { 0.0 } else { sum / n as f64 },
        evaluated: n,
        skipped: 0,
    })
}

pub fn recall_at_k(rankings: &Rankings, judgments: &Judgments, k: usize) -> Result<MetricValue> {
    check_coverage(rankings, judgments)?;
    check_k(k)?;
    let (mut sum, mut evaluated, mut skipped) = (0.0, 0usize, 0usize);
    for (qid, j) in judgments {
        let g = graded(qid, j)?;
        let relevant: HashSet<&str> = g.iter().filter(|(_, &v)| v > 0).map(|(d, _)| d.as_str()).collect();
        if relevant.is_empty() {
            skipped += 1;
            continue;
        }
        let found = rankings
            .get(qid)
            .map(|r| {
                r.hits
                    .iter()
                    .take(k)
                    .filter(|h| relevant.contains(h.passage_id.as_str()))
                    .count()
            })
            .unwrap_or(0);
        sum += found as f64 / relevant.len() as f64;
        evaluated += 1;
    }
    if skipped > 0 {
        warn!("recall@{k}: skipped {skipped} queries without positives");
    }
    Ok(MetricValue {
        value: if evaluated == 0 { 0.0 } else { sum / evaluated as f64 },
        evaluated,
        skipped,
    })
}

fn gain(grade: i64, kind: Gain) -> f64 {
    match kind {
        Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
        Gain::Linear => grade as f64,
    }
}

pub fn ndcg_at_k(rankings: &Rankings, judgments: &Judgments, k: usize, kind: Gain) -> Result<MetricValue> {
    check_coverage(rankings, judgments)?;
    check_k(k)?;
    let (mut sum, mut evaluated, mut skipped) = (0.0, 0usize, 0usize);
    for (qid, j) in judgments {
        let g = graded(qid, j)?;
        let mut ideal: Vec<i64> = g.values().copied().filter(|&v| v > 0).collect();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = ideal
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &rel)| gain(rel, kind) / ((i + 2) as f64).log2())
            .sum();
        if idcg <= 0.0 {
            skipped += 1;
            continue;
        }
        let dcg: f64 = rankings
            .get(qid)
            .map(|r| {
                r.hits
                    .iter()
                    .take(k)
                    .enumerate()
                    .map(|(i, h)| gain(g.get(&h.passage_id).copied().unwrap_or(0), kind) / ((i + 2) as f64).log2())
                    .sum()
            })
            .unwrap_or(0.0);
        sum += dcg / idcg;
        evaluated += 1;
    }
    if skipped > 0 {
        warn!("ndcg@{k}: skipped {skipped} queries with zero ideal DCG");
    }
    Ok(MetricValue {
        value: if evaluated == 0 { 0.0 } else { sum / evaluated as f64 },
        evaluated,
        skipped,
    })
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a TREC run (`qid Q0 docid rank score tag`), ordering each query by rank.
pub fn read_run(path: &Path) -> Result<Rankings> {
    let mut rows: BTreeMap<String, Vec<(usize, Hit)>> = BTreeMap::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() != 6 {
            return Err(parse_err(path, i + 1, format!("expected 6 fields, found {}", f.len())));
        }
        let rank: usize = f[3].parse().map_err(|_| parse_err(path, i + 1, "bad rank"))?;
        let score: f64 = f[4].parse().map_err(|_| parse_err(path, i + 1, "bad score"))?;
        rows.entry(f[0].to_string()).or_default().push((
            rank,
            Hit {
                passage_id: f[2].to_string(),
                score,
            },
        ));
    }
    Ok(rows
        .into_iter()
        .map(|(q, mut hits)| {
            hits.sort_by(|a, b| a.0.cmp(&b.0));
            (q, Ranking { hits: hits.into_iter().map(|(_, h)| h).collect() })
        })
        .collect())
}

pub fn write_run(rankings: &Rankings, tag: &str, out: &mut impl Write) -> Result<()> {
    for (qid, r) in rankings {
        for (i, h) in r.hits.iter().enumerate() {
            writeln!(out, "{qid} Q0 {} {} {} {tag}", h.passage_id, i + 1, h.score)?;
        }
    }
    Ok(())
}

/// Reads TREC qrels (`qid 0 docid grade`).
pub fn read_qrels(path: &Path) -> Result<Judgments> {
    let mut out: BTreeMap<String, BTreeMap<String, i64>> = BTreeMap::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() != 4 {
            return Err(parse_err(path, i + 1, format!("expected 4 fields, found {}", f.len())));
        }
        let grade: i64 = f[3].parse().map_err(|_| parse_err(path, i + 1, "bad grade"))?;
        if grade < 0 {
            return Err(Error::InvalidGrade {
                qid: f[0].to_string(),
                docid: f[2].to_string(),
                grade,
            });
        }
        out.entry(f[0].to_string()).or_default().insert(f[2].to_string(), grade);
    }
    Ok(out.into_iter().map(|(q, g)| (q, Judgment::Graded(g))).collect())
}

/// Named metric values in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub entries: Vec<(String, f64)>,
}

impl MetricReport {
    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.entries.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (n, v) in &self.entries {
            s.push_str(&format!("{n},{v:.6}\n"));
        }
        s
    }

    pub fn to_json(&self) -> String {
        let map: serde_json::Map<String, serde_json::Value> = self
            .entries
            .iter()
            .map(|(n, v)| (n.clone(), serde_json::json!(v)))
            .collect();
        serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("finite metric values")
    }
}
