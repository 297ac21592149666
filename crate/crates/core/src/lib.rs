//! Dual-encoder passage retrieval with mined hard negatives.
//!
//! The crate covers the whole loop: split documents into passages, index them
//! with BM25, train a shared-weight dual encoder with a bidirectional in-batch
//! softmax loss, mine hard negatives (coarse, fine, BM25, context, mixed),
//! retrieve with exact inner-product search, evaluate, and fuse models.
//!
//! See `examples/` for one runnable program per capability.

pub mod corpus;
pub mod dense_index;
pub mod encoder;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod mining;
pub mod pipeline;
pub mod ranking;
pub mod sparse_index;
pub mod synth;
pub mod text;
pub mod trainer;

pub use corpus::{CorpusStore, Document, Passage, SourceStage, TrainingPair};
pub use dense_index::DenseIndex;
pub use encoder::{EncoderConfig, EncoderParams, Embedding, EmbeddingKind, Vocab};
pub use error::{Error, Result};
pub use ranking::{Hit, Ranking};
pub use sparse_index::{Bm25Params, InvertedIndex};
pub use trainer::TrainConfig;

#[cfg(test)]
pub(crate) mod test_support {
    use crate::corpus::{CorpusStore, Document};
    use crate::encoder::{EncoderConfig, EncoderParams, Vocab};
    use crate::text::tokenize;

    pub fn tiny_corpus() -> CorpusStore {
        let docs = [
            ("d0", "Alpha", "alpha beta gamma delta alpha beta"),
            ("d1", "Beta", "beta gamma epsilon zeta"),
            ("d2", "Gamma", "gamma delta eta theta iota kappa"),
        ];
        let docs: Vec<Document> = docs
            .iter()
            .map(|(id, title, body)| Document {
                doc_id: id.to_string(),
                title: title.to_string(),
                body: body.to_string(),
            })
            .collect();
        CorpusStore::from_documents(&docs, 3).unwrap()
    }

    pub fn tiny_params(dim: usize) -> EncoderParams {
        let corpus = tiny_corpus();
        let mut streams = vec![];
        for p in corpus.passages() {
            streams.push(tokenize(&p.title));
            streams.push(tokenize(&p.text));
        }
        let config = EncoderConfig {
            dim,
            hidden_dim: 4,
            max_question_len: 16,
            max_passage_len: 16,
        };
        EncoderParams::new(config, Vocab::from_streams(&streams), 42).unwrap()
    }
}
