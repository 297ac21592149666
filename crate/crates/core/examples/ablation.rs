// Ablation grid on the generated task: Stage 1 {on, no-hard-neg, off} ×
// Stage 2 negatives {rnd, coarse, fine, bm25, context, mixed}.
//
// `cargo run --release --example ablation` runs the full desk-scale grid
// (2250 passages, 1200 training questions) and prints one CSV row per cell.

use std::path::Path;

use anyhow::Result;
use hardneg::pipeline::{ablation_csv, cmd_ablate, AblateConfig, CellResult, PipelineConfig, RunOptions};
use hardneg::synth::{generate, SynthConfig};

/// Config shared by every cell; data paths are relative to the task directory.
pub const DESK_CONFIG: &str = r#"
seed = 0

[data]
documents = "documents.jsonl"
split_width = 40
train = "train.jsonl"
dev = "dev.jsonl"
test = "test.jsonl"
synthetic = "synthetic.jsonl"

[encoder]
dim = 64
hidden_dim = 64

[train]
batch_size = 16
hard_neg_count = 2
pool_size = 100
learning_rate = 0.005
epochs = 30
patience = 3
loss_scale = 20.0
"#;

/// Writes the task and config into `dir` and runs the grid.
pub fn desk_scale(dir: &Path, synth: &SynthConfig, grid: AblateConfig, extra_toml: &str) -> Result<Vec<CellResult>> {
    generate(synth)?.write(dir)?;
    std::fs::write(dir.join("ablate.toml"), format!("{DESK_CONFIG}\n{extra_toml}"))?;
    let mut config = PipelineConfig::load(&dir.join("ablate.toml"))?;
    config.ablate = grid;
    let opts = RunOptions {
        cache_dir: Some(dir.join("cache")),
        ..RunOptions::default()
    };
    Ok(cmd_ablate(config, &opts)?)
}

pub fn run_example() -> Result<Vec<CellResult>> {
    let dir = tempfile::tempdir()?;
    let synth = SynthConfig {
        entities: 40,
        train: 100,
        dev: 30,
        test: 40,
        ..SynthConfig::default()
    };
    let grid = AblateConfig {
        stage1: vec!["on".parse()?, "off".parse()?],
        negatives: vec!["rnd".parse()?, "context".parse()?],
    };
    let cells = desk_scale(dir.path(), &synth, grid, "[miner]\nepochs = 2\nfine_dim = 64")?;
    print!("{}", ablation_csv(&cells));
    Ok(cells)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let dir = tempfile::tempdir()?;
    let cells = desk_scale(dir.path(), &SynthConfig::default(), AblateConfig::default(), "")?;
    print!("{}", ablation_csv(&cells));
    Ok(())
}
