// Splits documents into passages, builds a BM25 index and queries it.

use anyhow::Result;
use hardneg::corpus::{CorpusStore, Document};
use hardneg::sparse_index::{bm25_topk, build_index, Bm25Params};
use hardneg::text::tokenize;
use hardneg::Ranking;

fn documents() -> Vec<Document> {
    let doc = |id: &str, title: &str, body: &str| Document {
        doc_id: id.into(),
        title: title.into(),
        body: body.into(),
    };
    vec![
        doc(
            "havana",
            "Havana (song)",
            "Havana is a song by Camila Cabello featuring Young Thug. It was released in 2017 \
             and topped the charts in many countries. The song was written by Cabello, Young Thug \
             and others, and produced by Frank Dukes.",
        ),
        doc(
            "cabello",
            "Camila Cabello",
            "Camila Cabello is a singer and songwriter born in Cojimar, Cuba. She rose to fame as \
             a member of the girl group Fifth Harmony before starting a solo career.",
        ),
        doc(
            "havana-city",
            "Havana",
            "Havana is the capital and largest city of Cuba. The city lies on the northern coast \
             of the island and is home to about two million people.",
        ),
    ]
}

pub fn run_example() -> Result<Ranking> {
    let corpus = CorpusStore::from_documents(&documents(), 20)?;
    println!("{} passages from {} documents", corpus.len(), documents().len());
    let index = build_index(&corpus, Some(Bm25Params::default()))?;
    let query = tokenize("who sings havana");
    let ranking = bm25_topk(&index, &query, 3)?;
    for (rank, hit) in ranking.hits.iter().enumerate() {
        let p = corpus.get(&hit.passage_id).expect("indexed passage");
        println!("{}. {:<14} {:.4}  {}", rank + 1, hit.passage_id, hit.score, p.text);
    }
    Ok(ranking)
}

fn main() -> Result<()> {
    run_example().map(|_| ())
}
