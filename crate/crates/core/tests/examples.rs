#[allow(dead_code)]
mod generate_task {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/generate_task.rs"));
}

#[allow(dead_code)]
mod bm25_search {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/bm25_search.rs"));
}

#[allow(dead_code)]
mod train_dual_encoder {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/train_dual_encoder.rs"));
}

#[allow(dead_code)]
mod mine_negatives {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/mine_negatives.rs"));
}

#[allow(dead_code)]
mod dense_retrieval {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/dense_retrieval.rs"));
}

#[allow(dead_code)]
mod evaluate_run {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/evaluate_run.rs"));
}

#[allow(dead_code)]
mod fusion {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/fusion.rs"));
}

#[allow(dead_code)]
mod gradient_check {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/gradient_check.rs"));
}

#[allow(dead_code)]
mod pipeline_run {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/pipeline_run.rs"));
}

#[allow(dead_code)]
mod ablation {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/ablation.rs"));
}

#[test]
fn generate_task_example_runs() {
    let task = generate_task::run_example().expect("generate_task example should run");
    assert_eq!(task.corpus.len(), 300);
}

#[test]
fn bm25_search_example_runs() {
    let ranking = bm25_search::run_example().expect("bm25_search example should run");
    assert_eq!(ranking.len(), 3);
    assert!(ranking.hits.iter().any(|h| h.passage_id == "havana#0"));
}

#[test]
fn train_dual_encoder_example_runs() {
    let history = train_dual_encoder::run_example().expect("train_dual_encoder example should run");
    assert!(!history.is_empty());
    assert!(history.last().unwrap().total < history[0].total);
}

#[test]
fn mine_negatives_example_runs() {
    let pools = mine_negatives::run_example().expect("mine_negatives example should run");
    assert_eq!(pools.len(), 5);
}

#[test]
fn dense_retrieval_example_runs() {
    let ranking = dense_retrieval::run_example().expect("dense_retrieval example should run");
    assert_eq!(ranking.ids().collect::<Vec<_>>(), ["p1", "p0", "p2"]);
}

#[test]
fn evaluate_run_example_runs() {
    let report = evaluate_run::run_example().expect("evaluate_run example should run");
    assert_eq!(report.get("mrr@10"), Some(0.5));
    assert_eq!(report.get("top@2"), Some(1.0));
}

#[test]
fn fusion_example_runs() {
    let (by_embedding, by_rank) = fusion::run_example().expect("fusion example should run");
    assert_eq!(by_embedding.len(), 3);
    assert_eq!(by_rank.hits[0].passage_id, "p0");
}

#[test]
fn gradient_check_example_runs() {
    let worst = gradient_check::run_example().expect("gradient_check example should run");
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn pipeline_run_example_runs() {
    let metrics = pipeline_run::run_example().expect("pipeline_run example should run");
    assert!(metrics.get("top@20").is_some());
}

#[test]
fn ablation_example_runs() {
    let cells = ablation::run_example().expect("ablation example should run");
    assert_eq!(cells.len(), 4);
}
