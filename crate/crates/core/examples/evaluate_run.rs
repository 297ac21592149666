// Scores a TREC run against graded qrels (MRR, Recall, NDCG) and against
// answer spans (Top-K accuracy).

use std::collections::BTreeMap;

use anyhow::Result;
use hardneg::corpus::{CorpusStore, Passage};
use hardneg::eval::{
    mrr_at_k, ndcg_at_k, read_qrels, read_run, recall_at_k, topk_accuracy, Gain, Judgment, Judgments, MetricReport,
};

const RUN: &str = "\
q1 Q0 p3 1 12.5 demo
q1 Q0 p1 2 11.0 demo
q1 Q0 p2 3 9.0 demo
q2 Q0 p2 1 8.0 demo
q2 Q0 p4 2 7.5 demo
";

const QRELS: &str = "\
q1 0 p1 2
q1 0 p2 1
q2 0 p4 1
";

pub fn run_example() -> Result<MetricReport> {
    let dir = tempfile::tempdir()?;
    std::fs::write(dir.path().join("run.trec"), RUN)?;
    std::fs::write(dir.path().join("qrels.txt"), QRELS)?;
    let rankings = read_run(&dir.path().join("run.trec"))?;
    let qrels = read_qrels(&dir.path().join("qrels.txt"))?;

    let mut report = MetricReport::default();
    report.push("mrr@10", mrr_at_k(&rankings, &qrels, 10)?.value);
    report.push("recall@2", recall_at_k(&rankings, &qrels, 2)?.value);
    report.push("ndcg@3", ndcg_at_k(&rankings, &qrels, 3, Gain::Exponential)?.value);
    report.push("ndcg@3-linear", ndcg_at_k(&rankings, &qrels, 3, Gain::Linear)?.value);

    let texts = [
        ("p1", "the eiffel tower is in paris"),
        ("p2", "paris is the capital of france"),
        ("p3", "rome has the colosseum"),
        ("p4", "the thames flows through london"),
    ];
    let corpus = CorpusStore::from_passages(
        texts
            .iter()
            .map(|(id, text)| Passage {
                passage_id: id.to_string(),
                doc_id: id.to_string(),
                title: String::new(),
                text: text.to_string(),
                position: 0,
            })
            .collect(),
        false,
    )?;
    let answers: Judgments = BTreeMap::from([
        ("q1".to_string(), Judgment::Answers(vec!["Paris".into()])),
        ("q2".to_string(), Judgment::Answers(vec!["London".into()])),
    ]);
    for (k, v) in topk_accuracy(&rankings, &answers, &corpus, &[1, 2])? {
        report.push(format!("top@{k}"), v);
    }
    print!("{}", report.to_csv());
    Ok(report)
}

fn main() -> Result<()> {
    run_example().map(|_| ())
}
