//! Documents, passages, question–passage pairs and their file formats.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default split width in words.
pub const DEFAULT_PASSAGE_WORDS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub passage_id: String,
    pub doc_id: String,
    pub title: String,
    pub text: String,
    pub position: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceStage {
    Synthetic,
    Gold,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub question: String,
    pub gold_passage_id: String,
    pub answer_spans: Vec<String>,
    pub source_stage: SourceStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Tsv,
    Jsonl,
}

impl CorpusFormat {
    /// Picks the format from a file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => CorpusFormat::Tsv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

/// Splits a document body into disjoint passages of at most `width` words.
///
/// Words are maximal runs of non-whitespace; passage text joins its words
/// with single spaces. Passage ids are `doc_id#position`.
pub fn split_document(doc: &Document, width: usize) -> Result<Vec<Passage>> {
    if width == 0 {
        return Err(Error::InvalidArgument("split width must be >= 1".into()));
    }
    let words: Vec<&str> = doc.body.split_whitespace().collect();
    if words.is_empty() {
        return Err(Error::EmptyDocument {
            doc_id: doc.doc_id.clone(),
        });
    }
    Ok(words
        .chunks(width)
        .enumerate()
        .map(|(position, chunk)| Passage {
            passage_id: format!("{}#{}", doc.doc_id, position),
            doc_id: doc.doc_id.clone(),
            title: doc.title.clone(),
            text: chunk.join(" "),
            position,
        })
        .collect())
}

/// Immutable, id-indexed passage collection.
#[derive(Debug, Clone, Default)]
pub struct CorpusStore {
    passages: Vec<Passage>,
    by_id: HashMap<String, usize>,
    doc_index: Option<BTreeMap<String, Vec<usize>>>,
}

impl CorpusStore {
    /// Builds a store; `with_documents` controls whether the passage → document
    /// mapping is trusted (files without document ids have none).
    pub fn from_passages(passages: Vec<Passage>, with_documents: bool) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(passages.len());
        for (i, p) in passages.iter().enumerate() {
            if by_id.insert(p.passage_id.clone(), i).is_some() {
                return Err(Error::DuplicateId(p.passage_id.clone()));
            }
        }
        let doc_index = with_documents.then(|| {
            let mut index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            for (i, p) in passages.iter().enumerate() {
                index.entry(p.doc_id.clone()).or_default().push(i);
            }
            for members in index.values_mut() {
                members.sort_by_key(|&i| (passages[i].position, i));
            }
            index
        });
        Ok(CorpusStore {
            passages,
            by_id,
            doc_index,
        })
    }

    pub fn from_documents(docs: &[Document], width: usize) -> Result<Self> {
        let mut seen = HashMap::new();
        let mut passages = Vec::new();
        for doc in docs {
            if doc.doc_id.is_empty() {
                return Err(Error::InvalidArgument("empty doc_id".into()));
            }
            if seen.insert(doc.doc_id.as_str(), ()).is_some() {
                return Err(Error::DuplicateId(doc.doc_id.clone()));
            }
            passages.extend(split_document(doc, width)?);
        }
        Self::from_passages(passages, true)
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.by_id.get(id).map(|&i| &self.passages[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn has_document_structure(&self) -> bool {
        self.doc_index.is_some()
    }

    /// Passages of a document in position order, or `None` without document structure.
    pub fn document_passages(&self, doc_id: &str) -> Option<Vec<&Passage>> {
        let index = self.doc_index.as_ref()?;
        Some(
            index
                .get(doc_id)
                .map(|m| m.iter().map(|&i| &self.passages[i]).collect())
                .unwrap_or_default(),
        )
    }

    pub fn document_ids(&self) -> impl Iterator<Item = &str> {
        self.doc_index
            .iter()
            .flat_map(|m| m.keys().map(String::as_str))
    }

    /// Returns a copy extended with extra passages (e.g. synthetic half-passages
    /// used as context negatives). Extra passages are kept out of the document index.
    pub fn with_extra(&self, extra: &[Passage]) -> Result<Self> {
        let mut out = self.clone();
        for p in extra {
            if out.by_id.contains_key(&p.passage_id) {
                return Err(Error::DuplicateId(p.passage_id.clone()));
            }
            out.by_id.insert(p.passage_id.clone(), out.passages.len());
            out.passages.push(p.clone());
        }
        Ok(out)
    }

    pub fn total_words(&self) -> usize {
        self.passages
            .iter()
            .map(|p| p.text.split_whitespace().count())
            .sum()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PassageRecord {
    id: String,
    text: String,
    title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    doc_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PairRecord {
    question: String,
    gold_id: String,
    #[serde(default)]
    answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stage: Option<SourceStage>,
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn nonblank_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

/// Loads passages. TSV columns are `id, text, title` with an optional fourth
/// `doc_id`; JSONL records are `{"id","text","title"}` with optional `"doc_id"`.
/// Document structure is only available when every record names its document.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<CorpusStore> {
    let mut records = Vec::new();
    for (line_no, line) in nonblank_lines(path)? {
        let record = match format {
            CorpusFormat::Tsv => {
                let cols: Vec<&str> = line.split('\t').collect();
                if cols.len() < 3 || cols.len() > 4 {
                    return Err(parse_error(
                        path,
                        line_no,
                        format!("expected 3 or 4 tab-separated columns, found {}", cols.len()),
                    ));
                }
                PassageRecord {
                    id: cols[0].to_string(),
                    text: cols[1].to_string(),
                    title: cols[2].to_string(),
                    doc_id: cols.get(3).map(|s| s.to_string()),
                }
            }
            CorpusFormat::Jsonl => serde_json::from_str::<PassageRecord>(&line)
                .map_err(|e| parse_error(path, line_no, e.to_string()))?,
        };
        if record.id.is_empty() {
            return Err(parse_error(path, line_no, "empty passage id"));
        }
        records.push(record);
    }
    let with_documents = !records.is_empty() && records.iter().all(|r| r.doc_id.is_some());
    let mut positions: HashMap<String, usize> = HashMap::new();
    let passages = records
        .into_iter()
        .map(|r| {
            let doc_id = r.doc_id.unwrap_or_else(|| r.id.clone());
            let pos = positions.entry(doc_id.clone()).or_insert(0);
            let position = *pos;
            *pos += 1;
            Passage {
                passage_id: r.id,
                doc_id,
                title: r.title,
                text: r.text,
                position,
            }
        })
        .collect();
    CorpusStore::from_passages(passages, with_documents)
}

/// Writes passages as JSONL, including `doc_id` when the store has document structure.
pub fn write_corpus_jsonl(corpus: &CorpusStore, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in corpus.passages() {
        let record = PassageRecord {
            id: p.passage_id.clone(),
            text: p.text.clone(),
            title: p.title.clone(),
            doc_id: corpus.has_document_structure().then(|| p.doc_id.clone()),
        };
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Loads documents from JSONL records `{"doc_id","title","body"}`.
pub fn load_documents(path: &Path) -> Result<Vec<Document>> {
    nonblank_lines(path)?
        .into_iter()
        .map(|(line_no, line)| {
            serde_json::from_str(&line).map_err(|e| parse_error(path, line_no, e.to_string()))
        })
        .collect()
}

pub fn write_documents(docs: &[Document], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for d in docs {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Loads pairs from JSONL `{"question","gold_id","answers":[...],"stage"}` and
/// tags them with `stage`. Every gold id must resolve in `corpus`.
pub fn load_pairs(path: &Path, stage: SourceStage, corpus: &CorpusStore) -> Result<Vec<TrainingPair>> {
    let mut pairs = Vec::new();
    for (line_no, line) in nonblank_lines(path)? {
        let r: PairRecord =
            serde_json::from_str(&line).map_err(|e| parse_error(path, line_no, e.to_string()))?;
        if corpus.get(&r.gold_id).is_none() {
            return Err(Error::UnresolvedReference(r.gold_id));
        }
        pairs.push(TrainingPair {
            question: r.question,
            gold_passage_id: r.gold_id,
            answer_spans: r.answers,
            source_stage: stage,
        });
    }
    Ok(pairs)
}

pub fn write_pairs(pairs: &[TrainingPair], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in pairs {
        let record = PairRecord {
            question: p.question.clone(),
            gold_id: p.gold_passage_id.clone(),
            answers: p.answer_spans.clone(),
            stage: Some(p.source_stage),
        };
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
