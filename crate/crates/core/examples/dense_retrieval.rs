// Exact inner-product search over a dense passage index, with the binary
// index format round-tripped through a file.

use anyhow::Result;
use hardneg::dense_index::DenseIndex;
use hardneg::Ranking;

pub fn run_example() -> Result<Ranking> {
    let rows = vec![
        vec![1.0, 0.0, 0.0],
        vec![0.6, 0.8, 0.0],
        vec![0.0, 0.6, 0.8],
        vec![0.0, 0.0, 1.0],
    ];
    let ids = ["p0", "p1", "p2", "p3"].map(String::from).to_vec();
    let index = DenseIndex::from_rows(ids, rows)?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("passages.idx");
    index.save(&path)?;
    let index = DenseIndex::load(&path)?;
    println!("{} rows of dimension {} ({} bytes on disk)", index.len(), index.dim(), std::fs::metadata(&path)?.len());

    let query = [0.8, 0.6, 0.0];
    let ranking = index.search_vector(&query, 3)?;
    for (rank, hit) in ranking.hits.iter().enumerate() {
        println!("{}. {} {:.4}", rank + 1, hit.passage_id, hit.score);
    }
    Ok(ranking)
}

fn main() -> Result<()> {
    run_example().map(|_| ())
}
