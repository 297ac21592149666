use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hardneg::corpus::{load_corpus, load_documents, load_pairs, write_corpus_jsonl, CorpusFormat, CorpusStore, SourceStage};
use hardneg::ensemble::{rrf_fusion, FusedIndex, FusionSpec, DEFAULT_RRF_K};
use hardneg::eval::{self, read_qrels, read_run, write_run, Gain, MetricReport, Rankings};
use hardneg::mining::{self, align_pools, mix_pools, read_pools, write_pools, NegativePool, Strategy};
use hardneg::pipeline::{self, cmd_ablate, cmd_pipeline, query_id, PipelineConfig, RunOptions, CACHE_ENV};
use hardneg::sparse_index::{build_index, Bm25Params, InvertedIndex};
use hardneg::text::tokenize;
use hardneg::trainer::{save_history_csv, train, DevSet, Stage};
use hardneg::{DenseIndex, EncoderConfig, EncoderParams, TrainConfig, Vocab};

#[derive(Parser)]
#[command(name = "hardneg", version, about = "Dual-encoder retrieval with mined hard negatives")]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single-threaded, deterministic execution.
    #[arg(long, global = true)]
    reproducible: bool,
    #[arg(long, global = true, env = CACHE_ENV)]
    cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split documents into fixed-width passages.
    Split {
        #[arg(long)]
        documents: PathBuf,
        #[arg(long, default_value_t = hardneg::corpus::DEFAULT_PASSAGE_WORDS)]
        width: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a BM25 index.
    IndexSparse {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        k1: Option<f64>,
        #[arg(long)]
        b: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mine a negative pool per training pair.
    Mine(MineArgs),
    /// Train a dual encoder (one or two stages).
    Train(TrainArgs),
    /// Encode every passage into a dense index.
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieve top-k passages for each question into a TREC run file.
    Retrieve(RetrieveArgs),
    /// Score a run file against qrels or answer spans.
    Eval(EvalArgs),
    /// Fuse runs (RRF) or models (embedding fusion).
    Fuse(FuseArgs),
    /// Stage 1 → mining → Stage 2 → embed → retrieve → eval, as configured.
    Pipeline,
    /// Run the configured grid of Stage 1 modes × negative types.
    Ablate,
}

#[derive(Args)]
struct MineArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    strategy: Strategy,
    #[arg(long, default_value_t = 100)]
    m: usize,
    /// Miner checkpoint (coarse / fine).
    #[arg(long)]
    miner: Option<PathBuf>,
    /// Existing pool files to combine (mixed).
    #[arg(long = "mix")]
    mix: Vec<PathBuf>,
    /// Where to write synthetic half-passages (context).
    #[arg(long)]
    halves: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    pools: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Stage 1 pairs and pools, trained first.
    #[arg(long)]
    stage1_pairs: Option<PathBuf>,
    #[arg(long)]
    stage1_pools: Option<PathBuf>,
    /// Half-passages produced by context mining.
    #[arg(long)]
    halves: Vec<PathBuf>,
    /// Overrides the encoder output dimension (e.g. 25 or 512 for miners).
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    /// Dense model and index.
    #[arg(long, requires = "index")]
    model: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    /// BM25 index instead of a dense one.
    #[arg(long, conflicts_with = "model")]
    bm25: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long, default_value = "run")]
    tag: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Answer-span judgments: pairs file plus corpus.
    #[arg(long, requires = "corpus")]
    pairs: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    linear_gain: bool,
    #[arg(long)]
    json: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    /// Run files to fuse with RRF.
    #[arg(long)]
    run: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RRF_K)]
    rrf_k: f64,
    /// Models and their indexes (same order) for embedding fusion.
    #[arg(long)]
    model: Vec<PathBuf>,
    #[arg(long)]
    index: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    coefficients: Vec<f64>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

fn corpus(path: &Path) -> Result<CorpusStore> {
    load_corpus(path, CorpusFormat::from_path(path)).with_context(|| format!("loading {}", path.display()))
}

fn write_rankings(rankings: &Rankings, tag: &str, out: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(out)?);
    write_run(rankings, tag, &mut f)?;
    f.flush()?;
    Ok(())
}

fn pipeline_config(cli: &Cli) -> Result<Option<PipelineConfig>> {
    cli.config
        .as_ref()
        .map(|p| PipelineConfig::load(p).with_context(|| format!("reading {}", p.display())))
        .transpose()
}

fn mine(args: &MineArgs) -> Result<()> {
    let corpus = corpus(&args.corpus)?;
    let pairs = load_pairs(&args.pairs, SourceStage::Gold, &corpus)?;
    let mined = match args.strategy {
        Strategy::Coarse | Strategy::Fine => {
            let Some(path) = &args.miner else { bail!("--miner is required for {}", args.strategy.name()) };
            let miner = EncoderParams::load(path, None)?;
            mining::mine_dense(&pairs, &corpus, &miner, args.m, args.strategy)?
        }
        Strategy::Bm25 => mining::mine_bm25(&pairs, &build_index(&corpus, None)?, &corpus, args.m)?,
        Strategy::Context => mining::mine_context(&pairs, &corpus, args.m)?,
        Strategy::Mixed => {
            let lists = args.mix.iter().map(|p| read_pools(p)).collect::<hardneg::Result<Vec<_>>>()?;
            let aligned: Vec<Vec<NegativePool>> = lists
                .iter()
                .map(|pools| {
                    let ids = align_pools(&pairs, pools);
                    pairs
                        .iter()
                        .zip(ids)
                        .map(|(pair, ids)| NegativePool {
                            question_key: mining::question_key(&pair.question),
                            strategy: pools.first().map_or(Strategy::Mixed, |p| p.strategy),
                            provenance: vec![pools.first().map_or(Strategy::Mixed, |p| p.strategy); ids.len()],
                            passage_ids: ids,
                        })
                        .collect()
                })
                .collect();
            let refs: Vec<&[NegativePool]> = aligned.iter().map(Vec::as_slice).collect();
            mining::Mined {
                pools: mix_pools(&refs, args.m, 0)?,
                ..Default::default()
            }
        }
    };
    write_pools(&mined.pools, &args.out)?;
    if let Some(h) = &args.halves {
        let mut s = String::new();
        for p in &mined.synthetic {
            s.push_str(&serde_json::to_string(p)?);
            s.push('\n');
        }
        fs::write(h, s)?;
    }
    eprintln!("{} pools, {} half-passages, {} warnings", mined.pools.len(), mined.synthetic.len(), mined.warnings.len());
    Ok(())
}

fn train_cmd(args: &TrainArgs, config: Option<PipelineConfig>, seed: Option<u64>) -> Result<()> {
    let (mut encoder, mut train_config) = config
        .map(|c| (c.encoder, c.train))
        .unwrap_or((EncoderConfig::default(), TrainConfig::default()));
    if let Some(dim) = args.dim {
        encoder.dim = dim;
    }
    if let Some(seed) = seed {
        train_config.seed = seed;
    }
    let base = corpus(&args.corpus)?;
    let mut halves = Vec::new();
    for h in &args.halves {
        for line in fs::read_to_string(h)?.lines().filter(|l| !l.trim().is_empty()) {
            halves.push(serde_json::from_str(line)?);
        }
    }
    let passages = base.with_extra(&halves)?;
    let pairs = load_pairs(&args.pairs, SourceStage::Gold, &passages)?;
    let dev = match &args.dev {
        Some(p) => load_pairs(p, SourceStage::Gold, &base)?,
        None => Vec::new(),
    };
    let stage1_pairs = match &args.stage1_pairs {
        Some(p) => load_pairs(p, SourceStage::Synthetic, &passages)?,
        None => Vec::new(),
    };
    let vocab = Vocab::from_corpus(&base, &[&pairs, &dev, &stage1_pairs]);
    let params = EncoderParams::new(encoder, vocab, train_config.seed)?;
    let pools = |path: &Option<PathBuf>, pairs: &[hardneg::TrainingPair]| -> Result<Option<Vec<Vec<String>>>> {
        Ok(match path {
            Some(p) => Some(align_pools(pairs, &read_pools(p)?)),
            None => None,
        })
    };
    let pools2 = pools(&args.pools, &pairs)?;
    let pools1 = pools(&args.stage1_pools, &stage1_pairs)?;
    let no_neg = TrainConfig {
        hard_neg_count: 0,
        ..train_config.clone()
    };
    let config2 = if pools2.is_some() { &train_config } else { &no_neg };
    let config1 = if pools1.is_some() { &train_config } else { &no_neg };
    let stage1 = (!stage1_pairs.is_empty()).then(|| Stage {
        pairs: &stage1_pairs,
        pools: pools1.as_deref(),
        config: config1,
    });
    let stage2 = Stage {
        pairs: &pairs,
        pools: pools2.as_deref(),
        config: config2,
    };
    let dev_set = (!dev.is_empty()).then_some(DevSet {
        pairs: &dev,
        corpus: &base,
    });
    let trained = train(params, stage1, Some(stage2), dev_set, &passages)?;
    trained.params.save(&args.out)?;
    if let Some(h) = &args.history {
        save_history_csv(&trained.history, h)?;
    }
    Ok(())
}

fn retrieve(args: &RetrieveArgs) -> Result<()> {
    let corpus = corpus(&args.corpus)?;
    let pairs = load_pairs(&args.pairs, SourceStage::Gold, &corpus)?;
    let rankings: Rankings = match (&args.model, &args.index, &args.bm25) {
        (Some(model), Some(index), None) => {
            let params = EncoderParams::load(model, None)?;
            pipeline::retrieve_dense(&params, &DenseIndex::load(index)?, &pairs, args.k)?
        }
        (None, None, Some(bm25)) => {
            let index = InvertedIndex::load(bm25)?;
            pairs
                .iter()
                .enumerate()
                .map(|(i, p)| (query_id(i), index.top_k(&tokenize(&p.question), args.k)))
                .collect()
        }
        _ => bail!("give either --model with --index, or --bm25"),
    };
    write_rankings(&rankings, &args.tag, &args.out)
}

fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let rankings = read_run(&args.run)?;
    let gain = if args.linear_gain { Gain::Linear } else { Gain::Exponential };
    let mut report = MetricReport::default();
    let graded = match (&args.qrels, &args.pairs, &args.corpus) {
        (Some(q), _, _) => read_qrels(q)?,
        (None, Some(p), Some(c)) => {
            let corpus = corpus(c)?;
            let pairs = load_pairs(p, SourceStage::Gold, &corpus)?;
            let (answers, gold) = pipeline::pair_judgments(&pairs);
            for (k, v) in eval::topk_accuracy(&rankings, &answers, &corpus, &eval::DEFAULT_TOPK)? {
                report.push(format!("top@{k}"), v);
            }
            gold
        }
        _ => bail!("give --qrels, or --pairs with --corpus"),
    };
    report.push(format!("mrr@{}", args.k), eval::mrr_at_k(&rankings, &graded, args.k)?.value);
    report.push(format!("recall@{}", args.k), eval::recall_at_k(&rankings, &graded, args.k)?.value);
    report.push(format!("ndcg@{}", args.k), eval::ndcg_at_k(&rankings, &graded, args.k, gain)?.value);
    let text = if args.json { report.to_json() + "\n" } else { report.to_csv() };
    match &args.out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn fuse(args: &FuseArgs) -> Result<()> {
    if !args.run.is_empty() {
        let runs = args.run.iter().map(|p| read_run(p)).collect::<hardneg::Result<Vec<_>>>()?;
        let mut fused = Rankings::new();
        let qids: std::collections::BTreeSet<&String> = runs.iter().flat_map(|r| r.keys()).collect();
        for q in qids {
            let members: Vec<_> = runs.iter().filter_map(|r| r.get(q)).collect();
            let mut ranking = rrf_fusion(&members, args.rrf_k)?;
            ranking.hits.truncate(args.k);
            fused.insert(q.clone(), ranking);
        }
        return write_rankings(&fused, "rrf", &args.out);
    }
    if args.model.len() != args.index.len() || args.model.is_empty() {
        bail!("give --run files, or matching --model/--index lists");
    }
    let (Some(c), Some(p)) = (&args.corpus, &args.pairs) else { bail!("embedding fusion needs --corpus and --pairs") };
    let corpus = corpus(c)?;
    let pairs = load_pairs(p, SourceStage::Gold, &corpus)?;
    let names: Vec<String> = args.model.iter().map(|m| m.display().to_string()).collect();
    let mut spec = FusionSpec::uniform(names);
    if !args.coefficients.is_empty() {
        spec.coefficients = args.coefficients.clone();
    }
    let models = args.model.iter().map(|m| EncoderParams::load(m, None)).collect::<hardneg::Result<Vec<_>>>()?;
    let indexes = args.index.iter().map(|i| DenseIndex::load(i)).collect::<hardneg::Result<Vec<_>>>()?;
    let fused_index = FusedIndex::build(&indexes.iter().collect::<Vec<_>>(), &spec)?;
    let questions: Vec<&str> = pairs.iter().map(|p| p.question.as_str()).collect();
    let per_model = models.iter().map(|m| m.encode_questions(&questions)).collect::<hardneg::Result<Vec<_>>>()?;
    let mut fused = Rankings::new();
    for i in 0..pairs.len() {
        let vectors: Vec<&[f64]> = per_model.iter().map(|e| e[i].values.as_slice()).collect();
        let q = hardneg::ensemble::embedding_fusion(&vectors, &spec)?;
        fused.insert(query_id(i), fused_index.search(&q, args.k)?);
    }
    write_rankings(&fused, "fused", &args.out)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let threads = if cli.reproducible { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let opts = RunOptions {
        seed: cli.seed,
        reproducible: cli.reproducible,
        cache_dir: cli.cache_dir.clone(),
    };
    match &cli.command {
        Command::Split { documents, width, out } => {
            let docs = load_documents(documents)?;
            let store = CorpusStore::from_documents(&docs, *width)?;
            write_corpus_jsonl(&store, out)?;
            eprintln!("{} documents → {} passages", docs.len(), store.len());
        }
        Command::IndexSparse { corpus: c, k1, b, out } => {
            let defaults = Bm25Params::default();
            let params = Bm25Params {
                k1: k1.unwrap_or(defaults.k1),
                b: b.unwrap_or(defaults.b),
            };
            build_index(&corpus(c)?, Some(params))?.save(out)?;
        }
        Command::Mine(args) => mine(args)?,
        Command::Train(args) => train_cmd(args, pipeline_config(&cli)?, cli.seed)?,
        Command::Embed { model, corpus: c, out } => {
            let params = EncoderParams::load(model, None)?;
            DenseIndex::build(&corpus(c)?, &params)?.save(out)?;
        }
        Command::Retrieve(args) => retrieve(args)?,
        Command::Eval(args) => eval_cmd(args)?,
        Command::Fuse(args) => fuse(args)?,
        Command::Pipeline => {
            let Some(config) = pipeline_config(&cli)? else { bail!("pipeline needs --config") };
            let cell = cmd_pipeline(config, &opts)?;
            print!("{}", cell.metrics.to_csv());
        }
        Command::Ablate => {
            let Some(config) = pipeline_config(&cli)? else { bail!("ablate needs --config") };
            let cells = cmd_ablate(config, &opts)?;
            print!("{}", pipeline::ablation_csv(&cells));
        }
    }
    Ok(())
}
