//! End-to-end orchestration: Stage 1 → mining → Stage 2 → embed → retrieve → eval.
//!
//! Every intermediate artifact (miner checkpoints, negative pools, trained
//! models, passage indexes, run files) lives in a content-addressed cache
//! directory, keyed by a hash of the inputs and config that produce it. A
//! sidecar `*.manifest.json` records provenance and the artifact's own hash;
//! an artifact is reused only when that hash still matches. Ablation cells
//! therefore share miners, pools and Stage 1 models.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{load_corpus, load_documents, load_pairs, CorpusFormat, CorpusStore, Passage, SourceStage, TrainingPair};
use crate::dense_index::DenseIndex;
use crate::encoder::{EncoderConfig, EncoderParams, Vocab, COARSE_MINER_DIM, FINE_MINER_DIM};
use crate::error::{Error, Result};
use crate::eval::{
    mrr_at_k, ndcg_at_k, read_run, recall_at_k, topk_accuracy, write_run, Gain, Judgment, Judgments, MetricReport,
    Rankings, DEFAULT_TOPK,
};
use crate::mining::{self, align_pools, mix_pools, read_pools, write_pools, NegativePool, Strategy};
use crate::sparse_index::build_index;
use crate::trainer::{save_history_csv, train, DevSet, Stage, TrainConfig};

/// Environment variable naming the artifact cache directory.
pub const CACHE_ENV: &str = "HARDNEG_CACHE_DIR";

/// Stage 1 setting of an ablation cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage1Mode {
    /// Stage 1 with hard negatives.
    #[serde(rename = "on")]
    On,
    /// Stage 1 with in-batch negatives only.
    #[serde(rename = "no-hard-neg")]
    NoHardNeg,
    #[serde(rename = "off")]
    Off,
}

impl Stage1Mode {
    pub const ALL: [Stage1Mode; 3] = [Stage1Mode::On, Stage1Mode::NoHardNeg, Stage1Mode::Off];

    pub fn name(self) -> &'static str {
        match self {
            Stage1Mode::On => "on",
            Stage1Mode::NoHardNeg => "no-hard-neg",
            Stage1Mode::Off => "off",
        }
    }
}

impl FromStr for Stage1Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage1Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage1 mode {s:?}")))
    }
}

/// Negatives for a training stage: in-batch only, or a mined pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Negatives {
    Rnd,
    Mined(Strategy),
}

impl Negatives {
    pub const ALL: [Negatives; 6] = [
        Negatives::Rnd,
        Negatives::Mined(Strategy::Coarse),
        Negatives::Mined(Strategy::Fine),
        Negatives::Mined(Strategy::Bm25),
        Negatives::Mined(Strategy::Context),
        Negatives::Mined(Strategy::Mixed),
    ];
}

impl fmt::Display for Negatives {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Negatives::Rnd => f.write_str("rnd"),
            Negatives::Mined(s) => f.write_str(s.name()),
        }
    }
}

impl FromStr for Negatives {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rnd" | "random" | "none" => Ok(Negatives::Rnd),
            other => Ok(Negatives::Mined(other.parse()?)),
        }
    }
}

impl Serialize for Negatives {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Negatives {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Documents (JSONL `doc_id,title,body`) to split into passages.
    #[serde(default)]
    pub documents: Option<PathBuf>,
    /// Pre-split passages (TSV or JSONL); used when `documents` is absent.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default = "default_split_width")]
    pub split_width: usize,
    pub train: PathBuf,
    #[serde(default)]
    pub dev: Option<PathBuf>,
    pub test: PathBuf,
    /// Stage 1 pairs.
    #[serde(default)]
    pub synthetic: Option<PathBuf>,
}

fn default_split_width() -> usize {
    crate::corpus::DEFAULT_PASSAGE_WORDS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    pub mode: Stage1Mode,
    /// Defaults to context negatives when documents are known, coarse otherwise.
    pub negatives: Option<Strategy>,
    /// Overrides `train.epochs` for Stage 1.
    pub epochs: Option<usize>,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            mode: Stage1Mode::On,
            negatives: None,
            epochs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Config {
    pub negatives: Negatives,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            negatives: Negatives::Mined(Strategy::Mixed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinerConfig {
    pub coarse_dim: usize,
    pub fine_dim: usize,
    /// Overrides `train.epochs` for miner training.
    pub epochs: Option<usize>,
}

impl Default for MinerConfig {
    fn default() -> Self {
        MinerConfig {
            coarse_dim: COARSE_MINER_DIM,
            fine_dim: FINE_MINER_DIM,
            epochs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    /// Retrieval depth; at least the largest of `ks`.
    pub depth: Option<usize>,
    pub mrr_k: usize,
    pub ndcg_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: DEFAULT_TOPK.to_vec(),
            depth: None,
            mrr_k: 10,
            ndcg_k: 10,
        }
    }
}

impl EvalConfig {
    fn depth(&self) -> usize {
        let max_k = self.ks.iter().copied().chain([self.mrr_k, self.ndcg_k]).max().unwrap_or(1);
        self.depth.unwrap_or(max_k).max(max_k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub stage1: Vec<Stage1Mode>,
    pub negatives: Vec<Negatives>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            stage1: Stage1Mode::ALL.to_vec(),
            negatives: Negatives::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    /// Stage 2 training; Stage 1 and the miners inherit it.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub stage1: Stage1Config,
    #[serde(default)]
    pub stage2: Stage2Config,
    #[serde(default)]
    pub miner: MinerConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub ablate: AblateConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: PipelineConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.train.validate()?;
        if c.data.documents.is_none() && c.data.corpus.is_none() {
            return Err(Error::Config("data.documents or data.corpus is required".into()));
        }
        Ok(c)
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut c = Self::from_toml_str(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let d = &mut c.data;
        for p in [&mut d.documents, &mut d.corpus, &mut d.dev, &mut d.synthetic].into_iter().flatten() {
            fix(p);
        }
        fix(&mut d.train);
        fix(&mut d.test);
        fix(&mut c.output);
        Ok(c)
    }
}

/// Run-time options that do not belong to the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `seed` in the config.
    pub seed: Option<u64>,
    pub reproducible: bool,
    /// Overrides the cache directory (otherwise `$HARDNEG_CACHE_DIR`, then `<output>/cache`).
    pub cache_dir: Option<PathBuf>,
}

/// Provenance of one artifact (or of one whole command run).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    /// Input name → content hash.
    pub inputs: BTreeMap<String, String>,
    pub seed: u64,
    pub version: String,
    pub wall_clock_secs: f64,
    pub reproducible: bool,
    pub artifact: String,
    pub artifact_hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

fn key_of(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(&h.finalize()[..12])
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config values serialize")
}

/// Content-addressed artifact directory.
pub struct ArtifactStore {
    dir: PathBuf,
    command: String,
    config_hash: String,
    seed: u64,
    reproducible: bool,
}

impl ArtifactStore {
    pub fn new(dir: PathBuf, command: &str, config_hash: &str, seed: u64, reproducible: bool) -> Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(ArtifactStore {
            dir,
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            reproducible,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn manifest_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }

    /// Returns the artifact for `key`, producing it with `make` unless a
    /// hash-verified copy already exists.
    pub fn get_or_make(
        &self,
        step: &str,
        key: &str,
        ext: &str,
        inputs: BTreeMap<String, String>,
        make: impl FnOnce(&Path) -> Result<()>,
    ) -> Result<PathBuf> {
        let path = self.dir.join(format!("{step}-{key}.{ext}"));
        let manifest_path = Self::manifest_path(&path);
        if path.exists() && manifest_path.exists() {
            let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
            if manifest.artifact_hash == file_hash(&path)? {
                info!("reusing {}", path.display());
                return Ok(path);
            }
            info!("hash mismatch for {}; rebuilding", path.display());
        }
        let started = Instant::now();
        let tmp = self.dir.join(format!("{step}-{key}.{ext}.tmp{}", std::process::id()));
        make(&tmp)?;
        fs::rename(&tmp, &path)?;
        let manifest = RunManifest {
            command: self.command.clone(),
            config_hash: self.config_hash.clone(),
            inputs,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_secs: started.elapsed().as_secs_f64(),
            reproducible: self.reproducible,
            artifact: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            artifact_hash: file_hash(&path)?,
        };
        fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }
}

fn load_passage_file(path: &Path) -> Result<Vec<Passage>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

fn write_passage_file(passages: &[Passage], path: &Path) -> Result<()> {
    let mut s = String::new();
    for p in passages {
        s.push_str(&serde_json::to_string(p)?);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Loaded inputs of a pipeline run, with their content hashes.
pub struct Inputs {
    pub corpus: CorpusStore,
    pub train: Vec<TrainingPair>,
    pub dev: Vec<TrainingPair>,
    pub test: Vec<TrainingPair>,
    pub synthetic: Vec<TrainingPair>,
    pub vocab: Vocab,
    pub hashes: BTreeMap<String, String>,
}

impl Inputs {
    pub fn load(data: &DataConfig) -> Result<Self> {
        let mut hashes = BTreeMap::new();
        let corpus = if let Some(docs) = &data.documents {
            hashes.insert(
                "corpus".to_string(),
                key_of(&[&file_hash(docs)?, &data.split_width.to_string()]),
            );
            CorpusStore::from_documents(&load_documents(docs)?, data.split_width)?
        } else {
            let path = data.corpus.as_ref().ok_or_else(|| Error::Config("no corpus configured".into()))?;
            hashes.insert("corpus".to_string(), file_hash(path)?);
            load_corpus(path, CorpusFormat::from_path(path))?
        };
        let mut load = |name: &str, path: Option<&PathBuf>, stage: SourceStage| -> Result<Vec<TrainingPair>> {
            match path {
                Some(p) => {
                    hashes.insert(name.to_string(), file_hash(p)?);
                    load_pairs(p, stage, &corpus)
                }
                None => {
                    hashes.insert(name.to_string(), "none".to_string());
                    Ok(Vec::new())
                }
            }
        };
        let train = load("train", Some(&data.train), SourceStage::Gold)?;
        let dev = load("dev", data.dev.as_ref(), SourceStage::Gold)?;
        let test = load("test", Some(&data.test), SourceStage::Gold)?;
        let synthetic = load("synthetic", data.synthetic.as_ref(), SourceStage::Synthetic)?;
        let vocab = Vocab::from_corpus(&corpus, &[&train, &dev, &test, &synthetic]);
        hashes.insert("vocab".to_string(), vocab.hash());
        Ok(Inputs {
            corpus,
            train,
            dev,
            test,
            synthetic,
            vocab,
            hashes,
        })
    }

    fn hash(&self, name: &str) -> &str {
        self.hashes.get(name).map(String::as_str).unwrap_or("none")
    }
}

/// Which pair set a pool or stage is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PairSet {
    Train,
    Synthetic,
}

impl PairSet {
    fn name(self) -> &'static str {
        match self {
            PairSet::Train => "train",
            PairSet::Synthetic => "synthetic",
        }
    }
}

/// Pools aligned with a pair set, plus any synthetic half-passages they use.
struct PoolArtifact {
    key: String,
    pools: Vec<Vec<String>>,
    halves: Vec<Passage>,
}

/// Outcome of one (Stage 1, Stage 2 negatives) cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub stage1: Stage1Mode,
    pub negatives: Negatives,
    pub metrics: MetricReport,
    pub model: PathBuf,
    pub run: PathBuf,
    pub manifest: RunManifest,
}

/// A loaded config plus its inputs and artifact store; runs cells.
pub struct Runner {
    pub config: PipelineConfig,
    pub inputs: Inputs,
    pub store: ArtifactStore,
    seed: u64,
}

impl Runner {
    pub fn new(mut config: PipelineConfig, opts: &RunOptions, command: &str) -> Result<Self> {
        if let Some(seed) = opts.seed {
            config.seed = seed;
        }
        let seed = config.seed;
        config.train.seed = seed;
        config.train.validate()?;
        let inputs = Inputs::load(&config.data)?;
        if inputs.train.is_empty() || inputs.test.is_empty() {
            return Err(Error::Config("train and test pairs must be non-empty".into()));
        }
        let dir = opts
            .cache_dir
            .clone()
            .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
            .unwrap_or_else(|| config.output.join("cache"));
        let config_hash = sha256_hex(json(&config).as_bytes());
        let store = ArtifactStore::new(dir, command, &config_hash, seed, opts.reproducible)?;
        Ok(Runner {
            config,
            inputs,
            store,
            seed,
        })
    }

    fn pairs(&self, set: PairSet) -> &[TrainingPair] {
        match set {
            PairSet::Train => &self.inputs.train,
            PairSet::Synthetic => &self.inputs.synthetic,
        }
    }

    fn dev(&self) -> Option<DevSet<'_>> {
        (!self.inputs.dev.is_empty()).then_some(DevSet {
            pairs: &self.inputs.dev,
            corpus: &self.inputs.corpus,
        })
    }

    fn base_inputs(&self, names: &[&str]) -> BTreeMap<String, String> {
        names.iter().map(|n| (n.to_string(), self.inputs.hash(n).to_string())).collect()
    }

    fn miner_config(&self) -> TrainConfig {
        TrainConfig {
            hard_neg_count: 0,
            epochs: self.config.miner.epochs.unwrap_or(self.config.train.epochs),
            ..self.config.train.clone()
        }
    }

    /// Trains (or reuses) a miner encoder of dimension `dim`; returns (key, path).
    fn miner(&self, dim: usize) -> Result<(String, PathBuf)> {
        let encoder = EncoderConfig { dim, ..self.config.encoder };
        let train_config = self.miner_config();
        let key = key_of(&[
            "miner",
            &json(&encoder),
            &json(&train_config),
            self.inputs.hash("corpus"),
            self.inputs.hash("train"),
            self.inputs.hash("dev"),
            self.inputs.hash("vocab"),
        ]);
        let inputs = self.base_inputs(&["corpus", "train", "dev", "vocab"]);
        let path = self.store.get_or_make(&format!("miner{dim}"), &key, "bin", inputs, |out| {
            info!("training {dim}-d miner");
            let params = mining::train_miner(
                &self.inputs.train,
                &self.inputs.corpus,
                self.inputs.vocab.clone(),
                encoder,
                &train_config,
                self.dev(),
            )?;
            params.save(out)
        })?;
        Ok((key, path))
    }

    fn pools(&self, strategy: Strategy, set: PairSet) -> Result<PoolArtifact> {
        let m = self.config.train.pool_size;
        let pairs = self.pairs(set);
        let mut parts = vec![
            "pools".to_string(),
            strategy.name().to_string(),
            set.name().to_string(),
            m.to_string(),
            self.inputs.hash("corpus").to_string(),
            self.inputs.hash(set.name()).to_string(),
        ];
        let mut inputs = self.base_inputs(&["corpus", set.name()]);
        let mut components = Vec::new();
        let mut miner = None;
        match strategy {
            Strategy::Coarse | Strategy::Fine => {
                let dim = if strategy == Strategy::Coarse {
                    self.config.miner.coarse_dim
                } else {
                    self.config.miner.fine_dim
                };
                let (key, path) = self.miner(dim)?;
                parts.push(key.clone());
                inputs.insert("miner".into(), key);
                miner = Some(path);
            }
            Strategy::Mixed => {
                parts.push(self.seed.to_string());
                for s in Strategy::SINGLE {
                    if s == Strategy::Context && !self.inputs.corpus.has_document_structure() {
                        continue;
                    }
                    let a = self.pools(s, set)?;
                    parts.push(a.key.clone());
                    inputs.insert(format!("pools.{}", s.name()), a.key.clone());
                    components.push((s, a));
                }
            }
            Strategy::Bm25 | Strategy::Context => {}
        }
        let key = key_of(&parts.iter().map(String::as_str).collect::<Vec<_>>());
        let step = format!("pools-{}-{}", strategy.name(), set.name());
        let path = self.store.get_or_make(&step, &key, "jsonl", inputs.clone(), |out| {
            info!("mining {} negatives for {} pairs", strategy.name(), set.name());
            let pools = match strategy {
                Strategy::Coarse | Strategy::Fine => {
                    let path = miner.as_ref().expect("dense strategies load a miner");
                    let params = EncoderParams::load(path, Some(self.inputs.hash("vocab")))?;
                    mining::mine_dense(pairs, &self.inputs.corpus, &params, m, strategy)?.pools
                }
                Strategy::Bm25 => {
                    let index = build_index(&self.inputs.corpus, None)?;
                    mining::mine_bm25(pairs, &index, &self.inputs.corpus, m)?.pools
                }
                Strategy::Context => mining::mine_context(pairs, &self.inputs.corpus, m)?.pools,
                Strategy::Mixed => {
                    let lists: Vec<Vec<NegativePool>> = components
                        .iter()
                        .map(|(s, a)| {
                            Ok(a.pools
                                .iter()
                                .zip(pairs)
                                .map(|(ids, pair)| NegativePool {
                                    question_key: mining::question_key(&pair.question),
                                    strategy: *s,
                                    provenance: vec![*s; ids.len()],
                                    passage_ids: ids.clone(),
                                })
                                .collect())
                        })
                        .collect::<Result<_>>()?;
                    let refs: Vec<&[NegativePool]> = lists.iter().map(Vec::as_slice).collect();
                    mix_pools(&refs, m, self.seed)?
                }
            };
            write_pools(&pools, out)
        })?;
        let halves = match strategy {
            Strategy::Context => {
                let hkey = key_of(&["halves", &key]);
                let hpath = self.store.get_or_make(&format!("halves-{}", set.name()), &hkey, "jsonl", inputs, |out| {
                    write_passage_file(&mining::mine_context(pairs, &self.inputs.corpus, m)?.synthetic, out)
                })?;
                load_passage_file(&hpath)?
            }
            Strategy::Mixed => components.iter().flat_map(|(_, a)| a.halves.clone()).collect(),
            _ => Vec::new(),
        };
        Ok(PoolArtifact {
            key,
            pools: align_pools(pairs, &read_pools(&path)?),
            halves,
        })
    }

    fn stage1_strategy(&self) -> Strategy {
        self.config.stage1.negatives.unwrap_or(if self.inputs.corpus.has_document_structure() {
            Strategy::Context
        } else {
            Strategy::Coarse
        })
    }

    fn history_path(model: &Path) -> PathBuf {
        model.with_extension("history.csv")
    }

    /// Trains (or reuses) a model for one stage starting from `init`
    /// (`None`: fresh parameters from the run seed). Returns (key, path).
    fn stage_model(
        &self,
        stage_no: u8,
        set: PairSet,
        negatives: Negatives,
        config: TrainConfig,
        init: Option<&(String, PathBuf)>,
    ) -> Result<(String, PathBuf)> {
        let pools = match negatives {
            Negatives::Rnd => None,
            Negatives::Mined(s) => Some(self.pools(s, set)?),
        };
        let config = TrainConfig {
            hard_neg_count: if pools.is_some() { config.hard_neg_count } else { 0 },
            ..config
        };
        let key = key_of(&[
            "stage",
            &stage_no.to_string(),
            set.name(),
            &negatives.to_string(),
            pools.as_ref().map_or("none", |p| p.key.as_str()),
            init.map_or("fresh", |(k, _)| k.as_str()),
            &json(&self.config.encoder),
            &json(&config),
            self.inputs.hash("corpus"),
            self.inputs.hash(set.name()),
            self.inputs.hash("dev"),
            self.inputs.hash("vocab"),
        ]);
        let mut inputs = self.base_inputs(&["corpus", set.name(), "dev", "vocab"]);
        if let Some(p) = &pools {
            inputs.insert("pools".into(), p.key.clone());
        }
        if let Some((k, _)) = init {
            inputs.insert("init".into(), k.clone());
        }
        let path = self.store.get_or_make(&format!("stage{stage_no}"), &key, "bin", inputs, |out| {
            info!("training stage {stage_no} on {} pairs with {negatives} negatives", set.name());
            let params = match init {
                Some((_, p)) => EncoderParams::load(p, Some(self.inputs.hash("vocab")))?,
                None => EncoderParams::new(self.config.encoder, self.inputs.vocab.clone(), self.seed)?,
            };
            let halves = pools.as_ref().map(|p| p.halves.as_slice()).unwrap_or(&[]);
            let passages = self.inputs.corpus.with_extra(halves)?;
            let stage = Stage {
                pairs: self.pairs(set),
                pools: pools.as_ref().map(|p| p.pools.as_slice()),
                config: &config,
            };
            let trained = train(params, None, Some(stage), self.dev(), &passages)?;
            save_history_csv(&trained.history, &Self::history_path(out))?;
            trained.params.save(out)
        })?;
        Ok((key, path))
    }

    /// Stage 1 model for a mode, or `None` when Stage 1 is off or has no pairs.
    fn stage1(&self, mode: Stage1Mode) -> Result<Option<(String, PathBuf)>> {
        if mode == Stage1Mode::Off {
            return Ok(None);
        }
        if self.inputs.synthetic.is_empty() {
            return Err(Error::Config("stage 1 enabled but data.synthetic is not set".into()));
        }
        let config = TrainConfig {
            epochs: self.config.stage1.epochs.unwrap_or(self.config.train.epochs),
            ..self.config.train.clone()
        };
        let negatives = match mode {
            Stage1Mode::On => Negatives::Mined(self.stage1_strategy()),
            _ => Negatives::Rnd,
        };
        self.stage_model(1, PairSet::Synthetic, negatives, config, None).map(Some)
    }

    /// Runs one cell through evaluation. Metrics are written under `out_dir`.
    pub fn run_cell(&self, mode: Stage1Mode, negatives: Negatives, out_dir: &Path) -> Result<CellResult> {
        let started = Instant::now();
        let stage1 = self.stage1(mode)?;
        let (model_key, model) = self.stage_model(2, PairSet::Train, negatives, self.config.train.clone(), stage1.as_ref())?;

        let index_key = key_of(&["index", &model_key, self.inputs.hash("corpus")]);
        let mut inputs = self.base_inputs(&["corpus"]);
        inputs.insert("model".into(), model_key.clone());
        let index_path = self.store.get_or_make("index", &index_key, "bin", inputs, |out| {
            let params = EncoderParams::load(&model, Some(self.inputs.hash("vocab")))?;
            DenseIndex::build(&self.inputs.corpus, &params)?.save(out)
        })?;

        let depth = self.config.eval.depth();
        let run_key = key_of(&["run", &index_key, self.inputs.hash("test"), &depth.to_string()]);
        let mut inputs = self.base_inputs(&["test"]);
        inputs.insert("index".into(), index_key.clone());
        let run_path = self.store.get_or_make("run", &run_key, "trec", inputs.clone(), |out| {
            let params = EncoderParams::load(&model, Some(self.inputs.hash("vocab")))?;
            let index = DenseIndex::load(&index_path)?;
            let rankings = retrieve_dense(&params, &index, &self.inputs.test, depth)?;
            let mut f = std::io::BufWriter::new(fs::File::create(out)?);
            write_run(&rankings, &format!("{}-{negatives}", mode.name()), &mut f)?;
            std::io::Write::flush(&mut f)?;
            Ok(())
        })?;

        let rankings = read_run(&run_path)?;
        let metrics = evaluate(&rankings, &self.inputs.test, &self.inputs.corpus, &self.config.eval)?;
        fs::create_dir_all(out_dir)?;
        fs::write(out_dir.join("metrics.csv"), metrics.to_csv())?;
        fs::write(out_dir.join("metrics.json"), metrics.to_json())?;
        let history = Self::history_path(&model);
        if history.exists() {
            fs::copy(&history, out_dir.join("history.csv"))?;
        }
        let mut inputs = self.inputs.hashes.clone();
        inputs.insert("model".into(), model_key);
        inputs.insert("run".into(), run_key);
        let manifest = RunManifest {
            command: self.store.command.clone(),
            config_hash: self.store.config_hash.clone(),
            inputs,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_secs: started.elapsed().as_secs_f64(),
            reproducible: self.store.reproducible,
            artifact: "metrics.csv".into(),
            artifact_hash: sha256_hex(metrics.to_csv().as_bytes()),
        };
        fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(CellResult {
            stage1: mode,
            negatives,
            metrics,
            model,
            run: run_path,
            manifest,
        })
    }
}

/// Query ids for a pair list: `q00000`, `q00001`, … in input order.
pub fn query_id(i: usize) -> String {
    format!("q{i:05}")
}

pub fn retrieve_dense(params: &EncoderParams, index: &DenseIndex, pairs: &[TrainingPair], k: usize) -> Result<Rankings> {
    let questions: Vec<&str> = pairs.iter().map(|p| p.question.as_str()).collect();
    let embeddings = params.encode_questions(&questions)?;
    let rankings = index.search_batch(&embeddings, k)?;
    Ok(rankings.into_iter().enumerate().map(|(i, r)| (query_id(i), r)).collect())
}

/// Answer judgments (for Top-K) and gold-passage judgments (for the rest), keyed like [`query_id`].
pub fn pair_judgments(pairs: &[TrainingPair]) -> (Judgments, Judgments) {
    let mut answers = Judgments::new();
    let mut gold = Judgments::new();
    for (i, p) in pairs.iter().enumerate() {
        answers.insert(query_id(i), Judgment::Answers(p.answer_spans.clone()));
        gold.insert(
            query_id(i),
            Judgment::Graded([(p.gold_passage_id.clone(), 1)].into_iter().collect()),
        );
    }
    (answers, gold)
}

/// Top-K accuracy at each cutoff, then MRR, Recall at the largest cutoff, and NDCG.
pub fn evaluate(
    rankings: &Rankings,
    pairs: &[TrainingPair],
    corpus: &CorpusStore,
    config: &EvalConfig,
) -> Result<MetricReport> {
    let (answers, gold) = pair_judgments(pairs);
    let mut report = MetricReport::default();
    for (k, v) in topk_accuracy(rankings, &answers, corpus, &config.ks)? {
        report.push(format!("top@{k}"), v);
    }
    report.push(format!("mrr@{}", config.mrr_k), mrr_at_k(rankings, &gold, config.mrr_k)?.value);
    let max_k = config.ks.iter().copied().max().unwrap_or(config.ndcg_k);
    report.push(format!("recall@{max_k}"), recall_at_k(rankings, &gold, max_k)?.value);
    report.push(
        format!("ndcg@{}", config.ndcg_k),
        ndcg_at_k(rankings, &gold, config.ndcg_k, Gain::Exponential)?.value,
    );
    Ok(report)
}

/// Runs the configured cell. Metrics land in `<output>/metrics.{csv,json}`.
pub fn cmd_pipeline(config: PipelineConfig, opts: &RunOptions) -> Result<CellResult> {
    let runner = Runner::new(config, opts, "pipeline")?;
    let (mode, negatives) = (runner.config.stage1.mode, runner.config.stage2.negatives);
    let out = runner.config.output.clone();
    runner.run_cell(mode, negatives, &out)
}

/// Runs every (Stage 1 mode × negatives) cell of `config.ablate` and writes
/// `<output>/ablation.csv` with one row per cell.
pub fn cmd_ablate(config: PipelineConfig, opts: &RunOptions) -> Result<Vec<CellResult>> {
    let runner = Runner::new(config, opts, "ablate")?;
    let out = runner.config.output.clone();
    let mut cells = Vec::new();
    for &mode in &runner.config.ablate.stage1 {
        for &negatives in &runner.config.ablate.negatives {
            let dir = out.join("cells").join(format!("{}-{}", mode.name(), negatives));
            cells.push(runner.run_cell(mode, negatives, &dir)?);
        }
    }
    fs::create_dir_all(&out)?;
    fs::write(out.join("ablation.csv"), ablation_csv(&cells))?;
    Ok(cells)
}

/// One row per cell: `stage1,negatives,<metric>...`.
pub fn ablation_csv(cells: &[CellResult]) -> String {
    let mut s = String::from("stage1,negatives");
    if let Some(first) = cells.first() {
        for (name, _) in &first.metrics.entries {
            s.push(',');
            s.push_str(name);
        }
    }
    s.push('\n');
    for c in cells {
        s.push_str(&format!("{},{}", c.stage1.name(), c.negatives));
        for (_, v) in &c.metrics.entries {
            s.push_str(&format!(",{v:.6}"));
        }
        s.push('\n');
    }
    s
}
