// Mines coarse, fine, BM25, context and mixed negative pools for the same
// training questions and shows what each strategy picks.

use std::collections::BTreeMap;

use anyhow::Result;
use hardneg::encoder::{EncoderConfig, Vocab, COARSE_MINER_DIM, FINE_MINER_DIM};
use hardneg::mining::{mine_bm25, mine_coarse, mine_context, mine_fine, mix_pools, train_miner, NegativePool, Strategy};
use hardneg::sparse_index::build_index;
use hardneg::synth::{generate, SynthConfig};
use hardneg::text::contains_answer_span;
use hardneg::trainer::TrainConfig;

pub fn run_example() -> Result<BTreeMap<Strategy, Vec<NegativePool>>> {
    let task = generate(&SynthConfig {
        entities: 40,
        train: 100,
        dev: 20,
        test: 20,
        ..SynthConfig::default()
    })?;
    let m = 10;
    let vocab = Vocab::from_corpus(&task.corpus, &[&task.train]);
    let miner_config = TrainConfig {
        batch_size: 16,
        epochs: 3,
        learning_rate: 5e-3,
        ..TrainConfig::default()
    };
    let encoder = |dim| EncoderConfig {
        dim,
        hidden_dim: 16,
        ..EncoderConfig::default()
    };
    let coarse = train_miner(&task.train, &task.corpus, vocab.clone(), encoder(COARSE_MINER_DIM), &miner_config, None)?;
    let fine = train_miner(&task.train, &task.corpus, vocab, encoder(FINE_MINER_DIM), &miner_config, None)?;
    let index = build_index(&task.corpus, None)?;

    let mut pools = BTreeMap::new();
    pools.insert(Strategy::Coarse, mine_coarse(&task.train, &task.corpus, &coarse, m)?.pools);
    pools.insert(Strategy::Fine, mine_fine(&task.train, &task.corpus, &fine, m)?.pools);
    pools.insert(Strategy::Bm25, mine_bm25(&task.train, &index, &task.corpus, m)?.pools);
    pools.insert(Strategy::Context, mine_context(&task.train, &task.corpus, m)?.pools);
    let singles: Vec<&[NegativePool]> = Strategy::SINGLE.iter().map(|s| pools[s].as_slice()).collect();
    pools.insert(Strategy::Mixed, mix_pools(&singles, m, 0)?);

    let pair = &task.train[0];
    let gold = task.corpus.get(&pair.gold_passage_id).expect("gold passage");
    println!("question: {}  (gold {}, answer {:?})", pair.question, gold.passage_id, pair.answer_spans);
    for (strategy, list) in &pools {
        println!("{:>8}: {:?}", strategy.name(), &list[0].passage_ids[..list[0].len().min(5)]);
        for (p, pool) in task.train.iter().zip(list) {
            assert!(!pool.passage_ids.contains(&p.gold_passage_id));
            if *strategy == Strategy::Bm25 {
                for id in &pool.passage_ids {
                    assert!(!contains_answer_span(task.corpus.get(id).unwrap(), &p.answer_spans));
                }
            }
        }
    }
    let mut provenance: BTreeMap<&str, usize> = BTreeMap::new();
    for pool in &pools[&Strategy::Mixed] {
        for s in &pool.provenance {
            *provenance.entry(s.name()).or_default() += 1;
        }
    }
    println!("mixed pool provenance: {provenance:?}");
    Ok(pools)
}

fn main() -> Result<()> {
    run_example().map(|_| ())
}
