// Compares the analytic gradient of the bidirectional loss with central
// finite differences on a tiny encoder.

use anyhow::Result;
use hardneg::encoder::{EncoderConfig, EncoderParams, Vocab};
use hardneg::text::tokenize;
use hardneg::trainer::{forward_loss, loss_and_gradients, PassageInput, TrainConfig, TrainingBatch};

fn passage(id: &str, title: &str, text: &str) -> PassageInput {
    PassageInput {
        passage_id: id.into(),
        title: title.into(),
        text: text.into(),
    }
}

pub fn run_example() -> Result<f64> {
    let streams: Vec<_> = ["red fox jumps", "blue whale swims", "green frog sits", "fox whale frog"]
        .iter()
        .map(|s| tokenize(s))
        .collect();
    let vocab = Vocab::from_streams(&streams);
    let config = EncoderConfig {
        dim: 3,
        hidden_dim: 3,
        max_question_len: 8,
        max_passage_len: 8,
    };
    let mut params = EncoderParams::new(config, vocab, 5)?;
    println!("{} parameters", params.num_parameters());
    let batch = TrainingBatch {
        questions: vec![tokenize("red fox"), tokenize("blue whale")],
        gold_passages: vec![passage("a", "fox", "red fox jumps"), passage("b", "whale", "blue whale swims")],
        hard_negatives: vec![vec![passage("c", "frog", "green frog sits")], vec![passage("d", "fox", "fox whale frog")]],
    };
    let train = TrainConfig {
        loss_scale: 4.0,
        ..TrainConfig::default()
    };
    let (_, grads) = loss_and_gradients(&params, &batch, train.loss_scale)?;
    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.iter().copied()).collect();

    let eps = 1e-4;
    let mut numeric = Vec::with_capacity(analytic.len());
    for t in 0..5 {
        for i in 0..params.tensors()[t].len() {
            let orig = params.tensors()[t][i];
            params.tensors_mut()[t][i] = orig + eps;
            let plus = forward_loss(&params, &batch, &train)?.total;
            params.tensors_mut()[t][i] = orig - eps;
            let minus = forward_loss(&params, &batch, &train)?.total;
            params.tensors_mut()[t][i] = orig;
            numeric.push((plus - minus) / (2.0 * eps));
        }
    }
    let worst = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .filter(|r| r.is_finite())
        .fold(0.0, f64::max);
    println!("max relative error {worst:.3e} over {} parameters", analytic.len());
    Ok(worst)
}

fn main() -> Result<()> {
    run_example().map(|_| ())
}
