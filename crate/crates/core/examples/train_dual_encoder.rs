// Trains a small dual encoder with in-batch negatives plus BM25 hard
// negatives, prints the per-epoch losses, and round-trips the checkpoint.

use anyhow::Result;
use hardneg::encoder::{EncoderConfig, EncoderParams, Vocab};
use hardneg::mining::{align_pools, mine_bm25};
use hardneg::sparse_index::build_index;
use hardneg::synth::{generate, SynthConfig};
use hardneg::trainer::{train, write_history_csv, DevSet, EpochRecord, Stage, TrainConfig};

pub fn run_example() -> Result<Vec<EpochRecord>> {
    let task = generate(&SynthConfig {
        entities: 40,
        train: 100,
        dev: 40,
        test: 20,
        ..SynthConfig::default()
    })?;
    let vocab = Vocab::from_corpus(&task.corpus, &[&task.train, &task.dev]);
    let encoder = EncoderConfig {
        dim: 32,
        hidden_dim: 32,
        ..EncoderConfig::default()
    };
    let params = EncoderParams::new(encoder, vocab, 1)?;
    println!("{} parameters", params.num_parameters());

    let index = build_index(&task.corpus, None)?;
    let mined = mine_bm25(&task.train, &index, &task.corpus, 20)?;
    let pools = align_pools(&task.train, &mined.pools);
    let config = TrainConfig {
        batch_size: 16,
        hard_neg_count: 2,
        pool_size: 20,
        learning_rate: 5e-3,
        epochs: 6,
        ..TrainConfig::default()
    };
    let stage = Stage {
        pairs: &task.train,
        pools: Some(&pools),
        config: &config,
    };
    let dev = DevSet {
        pairs: &task.dev,
        corpus: &task.corpus,
    };
    let trained = train(params, None, Some(stage), Some(dev), &task.corpus)?;
    let mut csv = Vec::new();
    write_history_csv(&trained.history, &mut csv)?;
    print!("{}", String::from_utf8(csv)?);

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("model.bin");
    trained.params.save(&path)?;
    let restored = EncoderParams::load(&path, Some(&trained.params.vocab.hash()))?;
    assert_eq!(restored.tensors(), trained.params.tensors());
    println!("checkpoint round-trip ok ({} bytes)", std::fs::metadata(&path)?.len());
    Ok(trained.history)
}

fn main() -> Result<()> {
    run_example().map(|_| ())
}
