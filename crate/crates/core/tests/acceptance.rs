// Acceptance suite. Every criterion runs in one test, sequentially, so the
// runtime budgets are measured without other tests competing for cores. One
// PASS/FAIL line per criterion goes straight to stdout.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hardneg::corpus::{CorpusStore, TrainingPair};
use hardneg::dense_index::DenseIndex;
use hardneg::encoder::{EncoderConfig, EncoderParams, Vocab};
use hardneg::ensemble::{embedding_fusion, rrf_fusion, FusedIndex, FusionSpec};
use hardneg::eval::{mrr_at_k, ndcg_at_k, recall_at_k, topk_accuracy, Gain, Judgment, Judgments, Rankings};
use hardneg::mining::{self, mine_bm25, mine_coarse, mine_context, mine_fine, mix_pools, NegativePool, Strategy};
use hardneg::pipeline::{cmd_pipeline, AblateConfig, Negatives, PipelineConfig, RunOptions, Stage1Mode};
use hardneg::ranking::{Hit, Ranking};
use hardneg::sparse_index::{build_index, Bm25Params};
use hardneg::synth::{generate, SynthConfig, SynthTask};
use hardneg::text::{contains_answer_span, tokenize};
use hardneg::trainer::{
    bidirectional_loss, build_batch, forward_loss, loss_and_gradients, PassageInput, TrainConfig, TrainingBatch,
};

#[allow(dead_code)]
mod ablation {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/ablation.rs"));
}

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn task(entities: usize, train: usize, seed: u64) -> SynthTask {
    generate(&SynthConfig {
        entities,
        train,
        dev: 0,
        test: 0,
        seed,
        ..SynthConfig::default()
    })
    .expect("task generation")
}

// ---------------------------------------------------------------- criterion 1

fn loss_identities() -> Check {
    let single = bidirectional_loss(&[vec![0.37]], 20.0).map_err(|e| e.to_string())?.report;
    ensure(single.forward == 0.0 && single.backward == 0.0 && single.total == 0.0, || {
        format!("B=1,N=0 gave {single:?}")
    })?;

    let uniform = bidirectional_loss(&vec![vec![0.25; 4]; 4], 20.0).map_err(|e| e.to_string())?.report;
    let ln4 = 4f64.ln();
    ensure((uniform.forward - ln4).abs() < 1e-9 && (uniform.backward - ln4).abs() < 1e-9, || {
        format!("uniform B=4 gave L_f={} L_b={}", uniform.forward, uniform.backward)
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let b = rng.gen_range(1..=8);
        let n = rng.gen_range(0..=3);
        let scores: Vec<Vec<f64>> = (0..b).map(|_| (0..(n + 1) * b).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let r = bidirectional_loss(&scores, rng.gen_range(0.5..30.0)).map_err(|e| e.to_string())?.report;
        worst = worst.max((r.total - 0.5 * (r.forward + r.backward)).abs());
    }
    ensure(worst <= f64::EPSILON, || format!("L - 0.5(L_f+L_b) reached {worst:e}"))?;

    // Same identities through a real encoder.
    let t = task(4, 4, 3);
    let vocab = Vocab::from_corpus(&t.corpus, &[t.train.as_slice()]);
    let params = EncoderParams::new(EncoderConfig { dim: 8, hidden_dim: 8, ..EncoderConfig::default() }, vocab, 2)
        .map_err(|e| e.to_string())?;
    let pair: Vec<&TrainingPair> = t.train.iter().take(1).collect();
    let batch = build_batch(&pair, &[], &t.corpus, 0, &mut rng).map_err(|e| e.to_string())?;
    let r = forward_loss(&params, &batch, &TrainConfig::default()).map_err(|e| e.to_string())?;
    ensure(r.total == 0.0, || format!("encoder B=1,N=0 loss {}", r.total))?;
    Ok(format!("L(B=1,N=0)=0 exactly; |L_f−ln4|,|L_b−ln4| < 1e-9; max |L−0.5(L_f+L_b)| = {worst:e} over 500 matrices"))
}

// ---------------------------------------------------------------- criterion 2

fn passage(id: &str, title: &str, text: &str) -> PassageInput {
    PassageInput {
        passage_id: id.into(),
        title: title.into(),
        text: text.into(),
    }
}

fn gradient_check_seed(seed: u64) -> Result<(usize, f64), String> {
    let words = ["amber", "basil", "cedar", "delta", "ember", "fable", "grove", "haven", "iris", "jade"];
    let streams = vec![tokenize(&words.join(" "))];
    let vocab = Vocab::from_streams(&streams);
    let config = EncoderConfig {
        dim: 6,
        hidden_dim: 6,
        max_question_len: 8,
        max_passage_len: 12,
    };
    let mut params = EncoderParams::new(config, vocab, seed).map_err(|e| e.to_string())?;
    let n_params = params.num_parameters();
    ensure(n_params <= 500, || format!("{n_params} parameters"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phrase = |len: usize| {
        (0..len).map(|_| *words.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ")
    };
    let (b, n) = (3, 1);
    let batch = TrainingBatch {
        questions: (0..b).map(|_| tokenize(&phrase(3))).collect(),
        gold_passages: (0..b).map(|i| passage(&format!("g{i}"), &phrase(1), &phrase(5))).collect(),
        hard_negatives: (0..b)
            .map(|i| (0..n).map(|j| passage(&format!("h{i}{j}"), &phrase(1), &phrase(5))).collect())
            .collect(),
    };
    let train = TrainConfig::default();
    let (_, grads) = loss_and_gradients(&params, &batch, train.loss_scale).map_err(|e| e.to_string())?;
    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.iter().copied()).collect();
    let eps = 1e-4;
    let mut worst: f64 = 0.0;
    let mut k = 0;
    for t in 0..5 {
        for i in 0..params.tensors()[t].len() {
            let orig = params.tensors()[t][i];
            params.tensors_mut()[t][i] = orig + eps;
            let plus = forward_loss(&params, &batch, &train).map_err(|e| e.to_string())?.total;
            params.tensors_mut()[t][i] = orig - eps;
            let minus = forward_loss(&params, &batch, &train).map_err(|e| e.to_string())?.total;
            params.tensors_mut()[t][i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[k];
            k += 1;
            let denom = a.abs().max(numeric.abs());
            if denom > 1e-8 {
                worst = worst.max((a - numeric).abs() / denom);
            } else {
                worst = worst.max((a - numeric).abs());
            }
        }
    }
    Ok((n_params, worst))
}

fn gradient_check() -> Check {
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for seed in [11, 12, 13] {
        let (n, w) = gradient_check_seed(seed)?;
        parts.push(format!("seed {seed}: {n} params, {w:.2e}"));
        worst = worst.max(w);
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:.2e} < 1e-4 ({})", parts.join("; ")))
}

// ---------------------------------------------------------------- criterion 3

fn batch_contract() -> Check {
    let t = task(20, 60, 5);
    let vocab = Vocab::from_corpus(&t.corpus, &[t.train.as_slice()]);
    let params = EncoderParams::new(EncoderConfig { dim: 8, hidden_dim: 8, ..EncoderConfig::default() }, vocab, 1)
        .map_err(|e| e.to_string())?;
    let pools = mine_context(&t.train, &t.corpus, 10).map_err(|e| e.to_string())?.id_lists();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut seen = Vec::new();
    for (b, n) in [(2usize, 0usize), (4, 2), (8, 3)] {
        let pairs: Vec<&TrainingPair> = t.train.iter().take(b).collect();
        let pool_refs: Vec<&[String]> = pools.iter().take(b).map(Vec::as_slice).collect();
        let batch = build_batch(&pairs, &pool_refs, &t.corpus, n, &mut rng).map_err(|e| e.to_string())?;
        let report = forward_loss(&params, &batch, &TrainConfig::default()).map_err(|e| e.to_string())?;
        ensure(batch.candidates().count() == (n + 1) * b, || format!("(B,N)=({b},{n}): batch candidates"))?;
        ensure(report.forward_candidates == vec![(n + 1) * b; b], || {
            format!("(B,N)=({b},{n}): forward candidates {:?}", report.forward_candidates)
        })?;
        ensure(report.backward_candidates == vec![b; b], || {
            format!("(B,N)=({b},{n}): backward candidates {:?}", report.backward_candidates)
        })?;
        seen.push(format!("({b},{n})→{}/{}", report.forward_candidates[0], report.backward_candidates[0]));
    }
    Ok(format!("forward/backward candidates per question: {}", seen.join(", ")))
}

// ---------------------------------------------------------------- criterion 4

/// Rankings agree when scores match position-wise within `tol` and ids match
/// outside groups of (numerically) tied scores.
fn same_ranking(got: &[(String, f64)], want: &[(String, f64)], tol: f64) -> Result<(), String> {
    ensure(got.len() == want.len(), || format!("lengths {} vs {}", got.len(), want.len()))?;
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        ensure((g.1 - w.1).abs() <= tol, || format!("rank {}: score {} vs {}", i + 1, g.1, w.1))?;
        if g.0 != w.0 {
            let tied = |s: f64| want.iter().filter(|x| (x.1 - s).abs() <= 1e-12).count() > 1;
            ensure(tied(w.1), || format!("rank {}: {} vs {}", i + 1, g.0, w.0))?;
        }
    }
    Ok(())
}

fn pairs_of(r: &Ranking) -> Vec<(String, f64)> {
    r.hits.iter().map(|h| (h.passage_id.clone(), h.score)).collect()
}

fn brute_sort(mut v: Vec<(String, f64)>, k: usize) -> Vec<(String, f64)> {
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    v.truncate(k);
    v
}

fn brute_bm25(corpus: &CorpusStore, query: &str, k1: f64, b: f64) -> Vec<(String, f64)> {
    let docs: Vec<(String, Vec<String>)> = corpus
        .passages()
        .iter()
        .map(|p| {
            let mut terms = tokenize(&p.title).tokens;
            terms.extend(tokenize(&p.text).tokens);
            (p.passage_id.clone(), terms)
        })
        .collect();
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.1.len() as f64).sum::<f64>() / n;
    let mut q_terms: Vec<String> = Vec::new();
    for t in tokenize(query).tokens {
        if !q_terms.contains(&t) {
            q_terms.push(t);
        }
    }
    let mut out = Vec::new();
    for (id, terms) in &docs {
        let mut score = 0.0;
        for t in &q_terms {
            let tf = terms.iter().filter(|x| *x == t).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = docs.iter().filter(|d| d.1.contains(t)).count() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            score += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * terms.len() as f64 / avgdl));
        }
        if score > 0.0 {
            out.push((id.clone(), score));
        }
    }
    out
}

fn unit_vec(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

fn oracle_bm25(checked: &mut Vec<String>) -> Result<(), String> {
    for (entities, queries) in [(10usize, 50usize), (200, 100)] {
        let t = task(entities, queries.min(entities * 5), 21);
        let index = build_index(&t.corpus, None).map_err(|e| e.to_string())?;
        let Bm25Params { k1, b } = index.params();
        for pair in &t.train {
            let got = index.top_k(&tokenize(&pair.question), 10);
            let want = brute_sort(brute_bm25(&t.corpus, &pair.question, k1, b), 10);
            same_ranking(&pairs_of(&got), &want, 1e-10).map_err(|e| format!("bm25 {:?}: {e}", pair.question))?;
        }
        checked.push(format!("bm25 top-10 on {} passages × {} queries", t.corpus.len(), t.train.len()));
    }
    Ok(())
}

fn oracle_dense(checked: &mut Vec<String>) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dim = 16;
    let rows: Vec<Vec<f64>> = (0..500).map(|_| unit_vec(&mut rng, dim)).collect();
    let ids: Vec<String> = (0..500).map(|i| format!("r{i:03}")).collect();
    let index = DenseIndex::from_rows(ids.clone(), rows.clone()).map_err(|e| e.to_string())?;
    for _ in 0..50 {
        let q = unit_vec(&mut rng, dim);
        let got = index.search_vector(&q, 10).map_err(|e| e.to_string())?;
        let all: Vec<(String, f64)> = ids
            .iter()
            .zip(&rows)
            .map(|(id, r)| (id.clone(), r.iter().zip(&q).fold(0.0, |acc, (a, b)| acc + a * b)))
            .collect();
        same_ranking(&pairs_of(&got), &brute_sort(all, 10), 1e-10).map_err(|e| format!("dense: {e}"))?;
    }
    checked.push("dense top-10 over 500 rows × 50 queries".into());
    Ok(())
}

fn oracle_dense_pools(checked: &mut Vec<String>) -> Result<(), String> {
    let t = task(40, 100, 8);
    let vocab = Vocab::from_corpus(&t.corpus, &[t.train.as_slice()]);
    let m = 20;
    for (name, dim) in [("coarse", 25usize), ("fine", 512)] {
        let encoder = EncoderConfig { dim, hidden_dim: 8, ..EncoderConfig::default() };
        let miner = EncoderParams::new(encoder, vocab.clone(), 3).map_err(|e| e.to_string())?;
        let mined = if dim == 25 {
            mine_coarse(&t.train, &t.corpus, &miner, m)
        } else {
            mine_fine(&t.train, &t.corpus, &miner, m)
        }
        .map_err(|e| e.to_string())?;
        let passages: Vec<(String, Vec<f64>)> = t
            .corpus
            .passages()
            .iter()
            .map(|p| (p.passage_id.clone(), miner.encode_passage(&p.title, &p.text).unwrap().values))
            .collect();
        for (pair, pool) in t.train.iter().zip(&mined.pools) {
            let q = miner.encode_question(&tokenize(&pair.question)).unwrap().values;
            let scored: Vec<(String, f64)> = passages
                .iter()
                .filter(|(id, _)| *id != pair.gold_passage_id)
                .map(|(id, v)| (id.clone(), v.iter().zip(&q).map(|(a, b)| a * b).sum()))
                .collect();
            let want = brute_sort(scored, m);
            let got: Vec<(String, f64)> = pool
                .passage_ids
                .iter()
                .map(|id| {
                    let v = &passages.iter().find(|p| p.0 == *id).unwrap().1;
                    (id.clone(), v.iter().zip(&q).map(|(a, b)| a * b).sum())
                })
                .collect();
            same_ranking(&got, &want, 1e-10).map_err(|e| format!("{name} pool: {e}"))?;
        }
        checked.push(format!("{name} pools (M={m}) on {} passages", t.corpus.len()));
    }
    Ok(())
}

fn random_ranking(rng: &mut impl Rng, universe: &[String], len: usize) -> Ranking {
    let mut ids = universe.to_vec();
    ids.shuffle(rng);
    let mut score = 10.0;
    Ranking {
        hits: ids
            .into_iter()
            .take(len)
            .map(|id| {
                score -= rng.gen_range(0.01..1.0);
                Hit { passage_id: id, score }
            })
            .collect(),
    }
}

fn oracle_rrf(checked: &mut Vec<String>) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let universe: Vec<String> = (0..60).map(|i| format!("d{i:02}")).collect();
    for _ in 0..200 {
        let members: Vec<Ranking> = (0..rng.gen_range(1..5))
            .map(|_| {
                let len = rng.gen_range(1..40);
                random_ranking(&mut rng, &universe, len)
            })
            .collect();
        let refs: Vec<&Ranking> = members.iter().collect();
        let got = rrf_fusion(&refs, 60.0).map_err(|e| e.to_string())?;
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        for r in &members {
            for (i, h) in r.hits.iter().enumerate() {
                *sums.entry(h.passage_id.clone()).or_default() += 1.0 / (60.0 + (i + 1) as f64);
            }
        }
        let want = brute_sort(sums.into_iter().collect(), usize::MAX);
        same_ranking(&pairs_of(&got), &want, 1e-10).map_err(|e| format!("rrf: {e}"))?;
    }
    checked.push("rrf over 200 random member sets".into());
    Ok(())
}

fn oracle_metrics(checked: &mut Vec<String>) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let universe: Vec<String> = (0..30).map(|i| format!("d{i:02}")).collect();
    for _ in 0..100 {
        let nq = rng.gen_range(1..12);
        let mut rankings = Rankings::new();
        let mut graded = Judgments::new();
        let mut qrels: Vec<(String, Vec<String>, HashMap<String, i64>)> = Vec::new();
        for q in 0..nq {
            let qid = format!("q{q}");
            let len = rng.gen_range(0..25);
            let r = random_ranking(&mut rng, &universe, len);
            let mut judged: HashMap<String, i64> = HashMap::new();
            for d in &universe {
                if rng.gen_bool(0.2) {
                    judged.insert(d.clone(), rng.gen_range(0..4));
                }
            }
            qrels.push((qid.clone(), r.ids().map(String::from).collect(), judged.clone()));
            rankings.insert(qid.clone(), r);
            graded.insert(qid, Judgment::Graded(judged.into_iter().collect()));
        }
        let k = rng.gen_range(1..15);
        let mrr = mrr_at_k(&rankings, &graded, k).map_err(|e| e.to_string())?.value;
        let recall = recall_at_k(&rankings, &graded, k).map_err(|e| e.to_string())?.value;
        let ndcg = ndcg_at_k(&rankings, &graded, k, Gain::Exponential).map_err(|e| e.to_string())?.value;

        let (mut b_mrr, mut b_rec, mut rec_n, mut b_ndcg, mut ndcg_n) = (0.0, 0.0, 0usize, 0.0, 0usize);
        for (_, ids, judged) in &qrels {
            let top: Vec<&String> = ids.iter().take(k).collect();
            let rel = |d: &String| judged.get(d).copied().unwrap_or(0);
            if let Some(i) = top.iter().position(|d| rel(d) > 0) {
                b_mrr += 1.0 / (i as f64 + 1.0);
            }
            let positives = judged.values().filter(|&&g| g > 0).count();
            if positives > 0 {
                b_rec += top.iter().filter(|d| rel(d) > 0).count() as f64 / positives as f64;
                rec_n += 1;
                let dcg: f64 = top.iter().enumerate().map(|(i, d)| (2f64.powi(rel(d) as i32) - 1.0) / (i as f64 + 2.0).log2()).sum();
                let mut ideal: Vec<i64> = judged.values().copied().filter(|&g| g > 0).collect();
                ideal.sort_by(|a, b| b.cmp(a));
                let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, &g)| (2f64.powi(g as i32) - 1.0) / (i as f64 + 2.0).log2()).sum();
                b_ndcg += dcg / idcg;
                ndcg_n += 1;
            }
        }
        let b_mrr = b_mrr / nq as f64;
        let b_rec = if rec_n == 0 { 0.0 } else { b_rec / rec_n as f64 };
        let b_ndcg = if ndcg_n == 0 { 0.0 } else { b_ndcg / ndcg_n as f64 };
        ensure((mrr - b_mrr).abs() <= 1e-10, || format!("mrr@{k} {mrr} vs {b_mrr}"))?;
        ensure((recall - b_rec).abs() <= 1e-10, || format!("recall@{k} {recall} vs {b_rec}"))?;
        ensure((ndcg - b_ndcg).abs() <= 1e-10, || format!("ndcg@{k} {ndcg} vs {b_ndcg}"))?;
    }

    // Top-K accuracy on a generated corpus with answer spans.
    let t = task(30, 100, 13);
    let ids: Vec<String> = t.corpus.passages().iter().map(|p| p.passage_id.clone()).collect();
    let mut rankings = Rankings::new();
    let mut answers = Judgments::new();
    for (i, pair) in t.train.iter().enumerate() {
        let qid = format!("q{i:03}");
        let len = rng.gen_range(0..40);
        rankings.insert(qid.clone(), random_ranking(&mut rng, &ids, len));
        answers.insert(qid, Judgment::Answers(pair.answer_spans.clone()));
    }
    let ks = [1, 5, 10, 20, 100];
    let got = topk_accuracy(&rankings, &answers, &t.corpus, &ks).map_err(|e| e.to_string())?;
    for (k, v) in got {
        let mut hits = 0;
        for (qid, r) in &rankings {
            let Judgment::Answers(a) = &answers[qid] else { unreachable!() };
            let found = r.ids().take(k).any(|id| {
                let text = tokenize(&t.corpus.get(id).unwrap().text).tokens;
                a.iter().any(|ans| {
                    let needle = tokenize(ans).tokens;
                    !needle.is_empty() && (0..text.len()).any(|s| text[s..].starts_with(&needle))
                })
            });
            hits += found as usize;
        }
        let want = hits as f64 / rankings.len() as f64;
        ensure((v - want).abs() <= 1e-10, || format!("top@{k} {v} vs {want}"))?;
    }
    checked.push("MRR/Recall/NDCG on 100 random qrel sets; Top-K on 100 span-judged queries".into());
    Ok(())
}

fn oracle_equivalences() -> Check {
    let mut checked = Vec::new();
    oracle_bm25(&mut checked)?;
    oracle_dense(&mut checked)?;
    oracle_dense_pools(&mut checked)?;
    oracle_rrf(&mut checked)?;
    oracle_metrics(&mut checked)?;
    Ok(checked.join("; "))
}

// ---------------------------------------------------------------- criterion 5

fn mining_invariants() -> Check {
    let t = generate(&SynthConfig {
        entities: 100,
        train: 300,
        dev: 50,
        test: 0,
        seed: 31,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let m = 100;
    let vocab = Vocab::from_corpus(&t.corpus, &[t.train.as_slice()]);
    let miner_config = TrainConfig { batch_size: 16, epochs: 2, learning_rate: 5e-3, ..TrainConfig::default() };
    let encoder = |dim| EncoderConfig { dim, hidden_dim: 16, ..EncoderConfig::default() };
    let coarse = mining::train_miner(&t.train, &t.corpus, vocab.clone(), encoder(25), &miner_config, None)
        .map_err(|e| e.to_string())?;
    let fine = mining::train_miner(&t.train, &t.corpus, vocab, encoder(512), &miner_config, None)
        .map_err(|e| e.to_string())?;
    let index = build_index(&t.corpus, None).map_err(|e| e.to_string())?;
    let context = mine_context(&t.train, &t.corpus, m).map_err(|e| e.to_string())?;
    let lookup = t.corpus.with_extra(&context.synthetic).map_err(|e| e.to_string())?;
    let mut pools: Vec<(Strategy, Vec<NegativePool>)> = vec![
        (Strategy::Coarse, mine_coarse(&t.train, &t.corpus, &coarse, m).map_err(|e| e.to_string())?.pools),
        (Strategy::Fine, mine_fine(&t.train, &t.corpus, &fine, m).map_err(|e| e.to_string())?.pools),
        (Strategy::Bm25, mine_bm25(&t.train, &index, &t.corpus, m).map_err(|e| e.to_string())?.pools),
        (Strategy::Context, context.pools),
    ];
    let singles: Vec<&[NegativePool]> = pools.iter().map(|(_, p)| p.as_slice()).collect();
    let mixed = mix_pools(&singles, m, 0).map_err(|e| e.to_string())?;
    pools.push((Strategy::Mixed, mixed));

    let (mut members, mut bm25_members, mut context_members) = (0usize, 0usize, 0usize);
    for (strategy, list) in &pools {
        for (pair, pool) in t.train.iter().zip(list) {
            let gold_doc = &t.corpus.get(&pair.gold_passage_id).unwrap().doc_id;
            for id in &pool.passage_ids {
                members += 1;
                ensure(*id != pair.gold_passage_id, || format!("{} pool holds gold {id}", strategy.name()))?;
                let p = lookup.get(id).ok_or_else(|| format!("unknown passage {id}"))?;
                if *strategy == Strategy::Bm25 {
                    bm25_members += 1;
                    ensure(!contains_answer_span(p, &pair.answer_spans), || format!("bm25 member {id} has an answer"))?;
                }
                if *strategy == Strategy::Context {
                    context_members += 1;
                    ensure(&p.doc_id == gold_doc, || format!("context member {id} outside {gold_doc}"))?;
                }
            }
        }
    }
    Ok(format!(
        "{members} pool members over 5 strategies exclude gold; {bm25_members} bm25 members answer-free; {context_members} context members share the gold document"
    ))
}

// ---------------------------------------------------------------- criterion 6

fn fusion_algebra() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let members = rng.gen_range(1..=4);
        let dims: Vec<usize> = (0..members).map(|_| rng.gen_range(2..=16)).collect();
        let alphas: Vec<f64> = (0..members).map(|_| rng.gen_range(0.1..2.0)).collect();
        let qs: Vec<Vec<f64>> = dims.iter().map(|&d| unit_vec(&mut rng, d)).collect();
        let ps: Vec<Vec<f64>> = dims.iter().map(|&d| unit_vec(&mut rng, d)).collect();
        let spec = FusionSpec {
            members: (0..members).map(|m| format!("m{m}")).collect(),
            coefficients: alphas.clone(),
            rrf_k: 60.0,
        };
        let q = embedding_fusion(&qs.iter().map(Vec::as_slice).collect::<Vec<_>>(), &spec).map_err(|e| e.to_string())?;
        let p = embedding_fusion(&ps.iter().map(Vec::as_slice).collect::<Vec<_>>(), &spec).map_err(|e| e.to_string())?;
        let fused: f64 = q.iter().zip(&p).map(|(a, b)| a * b).sum();
        let weighted: f64 = (0..members)
            .map(|m| alphas[m] * alphas[m] * qs[m].iter().zip(&ps[m]).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        worst = worst.max((fused - weighted).abs());
    }
    ensure(worst <= 1e-10, || format!("fused dot deviates by {worst:e}"))?;

    let ids: Vec<String> = (0..200).map(|i| format!("p{i:03}")).collect();
    let rows: Vec<Vec<f64>> = (0..200).map(|_| unit_vec(&mut rng, 12)).collect();
    let index = DenseIndex::from_rows(ids, rows).map_err(|e| e.to_string())?;
    for alpha in [0.5, 1.0, 1.7] {
        let spec = FusionSpec { members: vec!["only".into()], coefficients: vec![alpha], rrf_k: 60.0 };
        let fused = FusedIndex::build(&[&index], &spec).map_err(|e| e.to_string())?;
        for _ in 0..20 {
            let q = unit_vec(&mut rng, 12);
            let fq = embedding_fusion(&[&q], &spec).map_err(|e| e.to_string())?;
            let a: Vec<String> = fused.search(&fq, 20).map_err(|e| e.to_string())?.ids().map(String::from).collect();
            let b: Vec<String> = index.search_vector(&q, 20).map_err(|e| e.to_string())?.ids().map(String::from).collect();
            ensure(a == b, || format!("single-member fusion (α={alpha}) reordered results"))?;
        }
    }

    let hit = |id: &str, s: f64| Hit { passage_id: id.into(), score: s };
    let r1 = Ranking { hits: vec![hit("x", 2.0), hit("y", 1.0)] };
    let r2 = Ranking { hits: vec![hit("y", 5.0), hit("x", 4.0)] };
    let fused = rrf_fusion(&[&r1, &r2], 60.0).map_err(|e| e.to_string())?;
    let x = fused.hits.iter().find(|h| h.passage_id == "x").unwrap().score;
    ensure(x == 1.0 / 61.0 + 1.0 / 62.0, || format!("rrf(1,2) = {x}"))?;
    Ok(format!(
        "max |fused − Σα²s| = {worst:.1e} over 1000 instances; single-member ranking identity; RRF(1,2) = 1/61+1/62 exactly"
    ))
}

// ---------------------------------------------------------------- criterion 7

fn directional_reproduction() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let synth = SynthConfig::default();
    let grid = AblateConfig {
        stage1: vec![Stage1Mode::On, Stage1Mode::Off],
        negatives: Negatives::ALL.to_vec(),
    };
    let cells = ablation::desk_scale(dir.path(), &synth, grid, "").map_err(|e| e.to_string())?;
    let task = generate(&synth).map_err(|e| e.to_string())?;
    let multi_passage = task
        .corpus
        .document_ids()
        .filter(|d| task.corpus.document_passages(d).is_some_and(|p| p.len() > 1))
        .count();
    let questions = task.train.len() + task.dev.len() + task.test.len();
    ensure(task.corpus.len() >= 2000 && multi_passage >= 400 && questions >= 500, || {
        format!("task below desk scale: {} passages, {multi_passage} multi-passage documents", task.corpus.len())
    })?;
    let metric = |mode: Stage1Mode, neg: Negatives, name: &str| {
        cells
            .iter()
            .find(|c| c.stage1 == mode && c.negatives == neg)
            .and_then(|c| c.metrics.get(name))
            .expect("cell present")
    };
    let mut lines = Vec::new();
    for mode in [Stage1Mode::On, Stage1Mode::Off] {
        let row: Vec<String> = Negatives::ALL
            .iter()
            .map(|&n| format!("{n} {:.1}/{:.1}", 100.0 * metric(mode, n, "top@1"), 100.0 * metric(mode, n, "top@20")))
            .collect();
        lines.push(format!("stage1 {}: {}", mode.name(), row.join(", ")));
    }
    let rnd = metric(Stage1Mode::On, Negatives::Rnd, "top@1");
    let hard = &Negatives::ALL[1..];
    let not_worse = hard.iter().filter(|&&n| metric(Stage1Mode::On, n, "top@1") >= rnd).count();
    let clearly_better = hard.iter().filter(|&&n| metric(Stage1Mode::On, n, "top@1") >= rnd + 0.01).count();
    let mixed = Negatives::Mined(Strategy::Mixed);
    let two_stage = metric(Stage1Mode::On, mixed, "top@20");
    let no_stage1 = metric(Stage1Mode::Off, mixed, "top@20");
    let summary = format!(
        "{not_worse}/5 hard-negative models ≥ Rnd top@1, {clearly_better}/5 by ≥1 point; two-stage top@20 {:.1} vs no-Stage-1 {:.1} (mixed) [{}]",
        100.0 * two_stage,
        100.0 * no_stage1,
        lines.join(" | ")
    );
    ensure(not_worse == 5 && clearly_better >= 3 && two_stage > no_stage1, || summary.clone())?;
    Ok(summary)
}

// ---------------------------------------------------------------- criterion 8

fn reproducibility() -> Check {
    let data = tempfile::tempdir().map_err(|e| e.to_string())?;
    generate(&SynthConfig { entities: 60, train: 150, dev: 50, test: 60, ..SynthConfig::default() })
        .and_then(|t| t.write(data.path()))
        .map_err(|e| e.to_string())?;
    std::fs::write(data.path().join("p.toml"), ablation::DESK_CONFIG).map_err(|e| e.to_string())?;
    let mut csvs = Vec::new();
    for run in 0..2 {
        let mut config = PipelineConfig::load(&data.path().join("p.toml")).map_err(|e| e.to_string())?;
        config.train.epochs = 4;
        config.miner.fine_dim = 128;
        config.output = data.path().join(format!("out{run}"));
        let opts = RunOptions {
            seed: Some(17),
            reproducible: true,
            cache_dir: Some(data.path().join(format!("cache{run}"))),
        };
        cmd_pipeline(config, &opts).map_err(|e| e.to_string())?;
        csvs.push(std::fs::read(data.path().join(format!("out{run}/metrics.csv"))).map_err(|e| e.to_string())?);
    }
    ensure(csvs[0] == csvs[1], || "metric CSVs differ between runs".into())?;
    Ok(format!("two cold-cache runs produced identical {}-byte metric CSVs", csvs[0].len()))
}

// ---------------------------------------------------------------- driver

#[test]
fn acceptance() {
    let criteria: Vec<(u32, &str, Duration, fn() -> Check)> = vec![
        (1, "loss identities", Duration::from_secs(1), loss_identities),
        (2, "gradient check", Duration::from_secs(30), gradient_check),
        (3, "batch contract", Duration::from_secs(60), batch_contract),
        (4, "oracle equivalences", Duration::from_secs(120), oracle_equivalences),
        (5, "mining invariants", Duration::from_secs(300), mining_invariants),
        (6, "fusion algebra", Duration::from_secs(60), fusion_algebra),
        (7, "directional reproduction", Duration::from_secs(15 * 60), directional_reproduction),
        (8, "reproducibility", Duration::from_secs(300), reproducibility),
    ];
    let mut failed = Vec::new();
    let mut out = std::io::stdout();
    for (id, name, limit, check) in criteria {
        let started = Instant::now();
        let result = check();
        let elapsed = started.elapsed();
        let (pass, detail) = match result {
            Ok(d) if elapsed <= limit => (true, d),
            Ok(d) => (false, format!("{d}; took {elapsed:.1?}, limit {limit:?}")),
            Err(e) => (false, e),
        };
        let status = if pass { "PASS" } else { "FAIL" };
        writeln!(out, "criterion {id} {name}: {status} [{elapsed:.2?}] {detail}").unwrap();
        if !pass {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
