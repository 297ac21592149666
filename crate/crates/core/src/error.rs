use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("document {doc_id} has an empty body")]
    EmptyDocument { doc_id: String },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id {0}")]
    DuplicateId(String),

    #[error("unresolved passage reference {0}")]
    UnresolvedReference(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("passage {0} is not indexed")]
    NotIndexed(String),

    #[error("input is empty after tokenization and truncation")]
    EmptyInput,

    #[error("embedding has zero norm before normalization{}", id.as_ref().map(|p| format!(" (passage {})", p)).unwrap_or_default())]
    DegenerateEmbedding { id: Option<String> },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("activation cache was produced by an older parameter generation")]
    StaleActivation,

    #[error("non-finite score at (question, candidate) {indices:?}")]
    NonFiniteLoss { indices: Vec<(usize, usize)> },

    #[error("pool for pair {pair} has {available} negatives, {needed} required")]
    PoolTooSmall {
        pair: String,
        available: usize,
        needed: usize,
    },

    #[error("pair {0} carries no answer spans")]
    MissingAnswers(String),

    #[error("corpus has no passage-to-document mapping")]
    NoDocumentStructure,

    #[error("no judgment for query {0}")]
    MissingJudgment(String),

    #[error("judgment for query {qid} has the wrong kind: {expected} required")]
    WrongJudgmentKind { qid: String, expected: &'static str },

    #[error("negative relevance grade {grade} for ({qid}, {docid})")]
    InvalidGrade {
        qid: String,
        docid: String,
        grade: i64,
    },

    #[error("fusion spec mismatch: {0}")]
    SpecMismatch(String),

    #[error("coefficient grid is empty")]
    EmptyGrid,

    #[error("vocabulary hash mismatch: checkpoint {checkpoint}, expected {expected}")]
    VocabMismatch { checkpoint: String, expected: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
