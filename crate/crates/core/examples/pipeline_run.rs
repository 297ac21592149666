// Runs the configured two-stage pipeline on a generated task from a TOML
// config, then runs it again to show that cached artifacts are reused.

use std::path::Path;

use anyhow::Result;
use hardneg::eval::MetricReport;
use hardneg::pipeline::{cmd_pipeline, PipelineConfig, RunOptions};
use hardneg::synth::{generate, SynthConfig};

const CONFIG: &str = r#"
seed = 3

[data]
documents = "documents.jsonl"
split_width = 40
train = "train.jsonl"
dev = "dev.jsonl"
test = "test.jsonl"
synthetic = "synthetic.jsonl"

[encoder]
dim = 16
hidden_dim = 16

[train]
batch_size = 16
hard_neg_count = 2
pool_size = 10
learning_rate = 0.005
epochs = 3

[stage1]
mode = "on"

[stage2]
negatives = "mixed"

[miner]
fine_dim = 64

[eval]
ks = [1, 5, 20]
"#;

pub fn write_inputs(dir: &Path) -> Result<()> {
    let task = generate(&SynthConfig {
        entities: 40,
        train: 100,
        dev: 30,
        test: 40,
        ..SynthConfig::default()
    })?;
    task.write(dir)?;
    std::fs::write(dir.join("pipeline.toml"), CONFIG)?;
    Ok(())
}

pub fn run_example() -> Result<MetricReport> {
    let dir = tempfile::tempdir()?;
    write_inputs(dir.path())?;
    let config = PipelineConfig::load(&dir.path().join("pipeline.toml"))?;
    let opts = RunOptions {
        reproducible: true,
        ..RunOptions::default()
    };
    let first = cmd_pipeline(config.clone(), &opts)?;
    print!("{}", first.metrics.to_csv());
    let again = cmd_pipeline(config, &opts)?;
    assert_eq!(first.metrics, again.metrics);
    let cached = std::fs::read_dir(dir.path().join("out/cache"))?.count();
    println!("{cached} cached files under out/cache; second run reused them");
    Ok(first.metrics)
}

fn main() -> Result<()> {
    run_example().map(|_| ())
}
