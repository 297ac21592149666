// Generates the synthetic retrieval task and writes it as JSONL files.
//
// Usage: `cargo run --example generate_task [OUT_DIR]`. With `OUT_DIR`, the
// full desk-scale task (450 documents, 2250 passages) is written there.

use std::path::PathBuf;

use anyhow::Result;
use hardneg::synth::{generate, SynthConfig, SynthTask};

pub fn run_example() -> Result<SynthTask> {
    let config = SynthConfig {
        entities: 60,
        train: 150,
        dev: 50,
        test: 50,
        ..SynthConfig::default()
    };
    let task = generate(&config)?;
    println!(
        "{} documents, {} passages, {} train / {} dev / {} test gold pairs, {} synthetic pairs",
        task.documents.len(),
        task.corpus.len(),
        task.train.len(),
        task.dev.len(),
        task.test.len(),
        task.synthetic.len()
    );
    let pair = &task.train[0];
    let gold = task.corpus.get(&pair.gold_passage_id).expect("gold passage exists");
    println!("question:  {}", pair.question);
    println!("answer:    {}", pair.answer_spans[0]);
    println!("passage:   [{}] {}", gold.title, gold.text);
    println!("synthetic: {}", task.synthetic[0].question);
    Ok(task)
}

fn main() -> Result<()> {
    run_example()?;
    if let Some(dir) = std::env::args().nth(1).map(PathBuf::from) {
        generate(&SynthConfig::default())?.write(&dir)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}
