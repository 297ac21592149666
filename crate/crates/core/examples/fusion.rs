// Combines two retrievers: embedding fusion (scaled concatenation, so the
// fused score is a weighted sum of member scores) and reciprocal rank fusion.

use anyhow::Result;
use hardneg::dense_index::DenseIndex;
use hardneg::ensemble::{embedding_fusion, rrf_fusion, FusedIndex, FusionSpec, DEFAULT_RRF_K};
use hardneg::Ranking;

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn run_example() -> Result<(Ranking, Ranking)> {
    let ids: Vec<String> = ["p0", "p1", "p2"].map(String::from).to_vec();
    let a = DenseIndex::from_rows(ids.clone(), vec![unit(&[1.0, 0.0]), unit(&[1.0, 1.0]), unit(&[0.0, 1.0])])?;
    let b = DenseIndex::from_rows(
        ids,
        vec![unit(&[0.0, 1.0, 0.0]), unit(&[1.0, 0.0, 1.0]), unit(&[1.0, 1.0, 1.0])],
    )?;
    let qa = unit(&[1.0, 0.2]);
    let qb = unit(&[0.0, 1.0, 0.3]);

    let spec = FusionSpec {
        members: vec!["a".into(), "b".into()],
        coefficients: vec![1.0, 0.5],
        rrf_k: DEFAULT_RRF_K,
    };
    let fused = FusedIndex::build(&[&a, &b], &spec)?;
    let query = embedding_fusion(&[&qa, &qb], &spec)?;
    let by_embedding = fused.search(&query, 3)?;
    for hit in &by_embedding.hits {
        let i = a.ids().iter().position(|id| *id == hit.passage_id).expect("shared ids");
        let dot = |row: &[f64], q: &[f64]| row.iter().zip(q).map(|(x, y)| x * y).sum::<f64>();
        let weighted = 1.0 * dot(a.row(i), &qa) + 0.25 * dot(b.row(i), &qb);
        println!("{} fused {:.6} = 1·s_a + 0.25·s_b = {:.6}", hit.passage_id, hit.score, weighted);
    }

    let ra = a.search_vector(&qa, 3)?;
    let rb = b.search_vector(&qb, 3)?;
    let by_rank = rrf_fusion(&[&ra, &rb], spec.rrf_k)?;
    for hit in &by_rank.hits {
        println!("{} rrf {:.6} (ranks {:?} and {:?})", hit.passage_id, hit.score, ra.rank_of(&hit.passage_id), rb.rank_of(&hit.passage_id));
    }
    Ok((by_embedding, by_rank))
}

fn main() -> Result<()> {
    run_example().map(|_| ())
}
