//! Generated retrieval task for desk-scale experiments.
//!
//! Each document describes one fictional place. Its passages each state one
//! fact (a relation and a value) padded with topical filler, so passages of
//! the same document share the entity name and vocabulary while differing in
//! the fact. Gold questions paraphrase the relation; synthetic questions copy
//! keywords from the passage, the way a question generator would.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_documents, write_pairs, CorpusStore, Document, SourceStage, TrainingPair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ValueKind {
    Place,
    Person,
    Year,
    Count,
    Thing,
}

struct Relation {
    passage: &'static [&'static str],
    question: &'static [&'static str],
    value: ValueKind,
}

const RELATIONS: &[Relation] = &[
    Relation {
        passage: &["{e} was the home town where {v} was born", "the poet {v} was born and raised in {e}"],
        question: &["which famous poet was born in {e}", "who is the best known person born in {e}"],
        value: ValueKind::Person,
    },
    Relation {
        passage: &["{e} was established in the year {v}", "records show {e} was granted its charter in {v}"],
        question: &["when was {e} founded", "in what year did {e} start"],
        value: ValueKind::Year,
    },
    Relation {
        passage: &["the current leader of {e} is {v}", "{e} is governed by the elected chief {v}"],
        question: &["who leads {e} today", "who is the head of {e}"],
        value: ValueKind::Person,
    },
    Relation {
        passage: &["{e} has roughly {v} residents", "a census counted {v} inhabitants living in {e}"],
        question: &["how many people live in {e}", "what is the population of {e}"],
        value: ValueKind::Count,
    },
    Relation {
        passage: &["the river {v} flows through {e}", "boats travel along the {v} river past {e}"],
        question: &["which river runs through {e}", "what stream crosses {e}"],
        value: ValueKind::Place,
    },
    Relation {
        passage: &["people in {e} mostly speak {v}", "the common tongue heard in {e} is {v}"],
        question: &["what language is spoken in {e}", "which language do locals of {e} use"],
        value: ValueKind::Thing,
    },
    Relation {
        passage: &["trade in {e} is conducted using the {v} coin", "shops in {e} accept payment in {v} coins"],
        question: &["what currency does {e} use", "what money circulates in {e}"],
        value: ValueKind::Thing,
    },
    Relation {
        passage: &["the highest peak near {e} is mount {v}", "mount {v} towers over the valley of {e}"],
        question: &["what is the tallest mountain near {e}", "which summit overlooks {e}"],
        value: ValueKind::Place,
    },
    Relation {
        passage: &["every summer {e} celebrates the {v} festival", "crowds gather in {e} for the yearly {v} festival"],
        question: &["what celebration is held in {e}", "which holiday event does {e} host"],
        value: ValueKind::Thing,
    },
    Relation {
        passage: &["the traditional food of {e} is {v}", "cooks in {e} are famous for a stew named {v}"],
        question: &["what dish is {e} known for", "what do people eat in {e}"],
        value: ValueKind::Thing,
    },
    Relation {
        passage: &["the favourite game played in {e} is {v}", "teams from {e} compete at {v} every weekend"],
        question: &["what sport is popular in {e}", "which team game do fans in {e} follow"],
        value: ValueKind::Thing,
    },
    Relation {
        passage: &["the great hall of {e} was designed by {v}", "the architect {v} drew the plans for the hall of {e}"],
        question: &["who designed the hall in {e}", "which architect planned the building of {e}"],
        value: ValueKind::Person,
    },
    Relation {
        passage: &["{e} is twinned with the city of {v}", "a partnership links {e} with its sister town {v}"],
        question: &["what is the sister city of {e}", "which town is paired with {e}"],
        value: ValueKind::Place,
    },
    Relation {
        passage: &["students in {e} attend {v} college", "the academy of {v} trains scholars in {e}"],
        question: &["which university is located in {e}", "where do pupils of {e} study"],
        value: ValueKind::Place,
    },
    Relation {
        passage: &["the anthem of {e} is called {v}", "at ceremonies {e} sings the hymn {v}"],
        question: &["what is the name of the song of {e}", "which anthem belongs to {e}"],
        value: ValueKind::Thing,
    },
    Relation {
        passage: &["the main export of {e} is {v}", "merchants ship {v} from {e} to distant ports"],
        question: &["what does {e} sell abroad", "what goods come from {e}"],
        value: ValueKind::Thing,
    },
    Relation {
        passage: &["{e} honours saint {v} as its protector", "the chapel of {e} is dedicated to saint {v}"],
        question: &["who is the patron saint of {e}", "which saint watches over {e}"],
        value: ValueKind::Person,
    },
    Relation {
        passage: &["local news in {e} is printed by the {v} gazette", "the {v} gazette reports on daily life in {e}"],
        question: &["which newspaper serves {e}", "what paper do readers in {e} buy"],
        value: ValueKind::Thing,
    },
    Relation {
        passage: &["{e} was first settled by {v}", "the explorer {v} built the first houses of {e}"],
        question: &["who founded {e}", "who were the first settlers of {e}"],
        value: ValueKind::Person,
    },
    Relation {
        passage: &["the nearest harbour to {e} lies at {v}", "ships bound for {e} dock in the port of {v}"],
        question: &["where is the port closest to {e}", "which harbour serves {e}"],
        value: ValueKind::Place,
    },
];

const COMMON: &[&str] = &[
    "the", "a", "of", "and", "in", "to", "was", "is", "for", "on", "with", "as", "by", "at", "from", "its",
    "this", "that", "many", "some", "during", "after", "before", "while", "also", "often", "known", "area",
    "region", "local", "old", "new", "time", "years", "later", "early", "small", "large", "near", "around",
    "people", "history", "part", "place", "since", "although", "several", "most", "other", "each",
];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mir", "ven", "tor", "sa", "bel", "dun", "ri", "gan", "pel", "os", "tha", "mu", "rek", "zi",
    "dor", "fa", "lin", "quo", "bra", "ne", "sul", "vik", "ha", "jor", "ce", "lum", "wa", "xe", "pry", "gol",
];

/// Size and split of the generated task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub entities: usize,
    /// Facts (and so passages) per entity; at most the number of relation types.
    pub facts_per_entity: usize,
    /// Words per passage; documents are split at this width.
    pub passage_words: usize,
    pub topics: usize,
    /// Probability that a filler word is replaced by the entity name.
    pub mention_rate: f64,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    /// Fraction of passages that receive a synthetic question.
    pub synthetic_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            entities: 450,
            facts_per_entity: 5,
            passage_words: 40,
            topics: 25,
            mention_rate: 0.08,
            train: 1200,
            dev: 300,
            test: 500,
            synthetic_fraction: 1.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn num_relations() -> usize {
        RELATIONS.len()
    }
}

#[derive(Debug, Clone)]
pub struct SynthTask {
    pub documents: Vec<Document>,
    pub corpus: CorpusStore,
    pub train: Vec<TrainingPair>,
    pub dev: Vec<TrainingPair>,
    pub test: Vec<TrainingPair>,
    pub synthetic: Vec<TrainingPair>,
}

struct Words {
    used: HashSet<String>,
}

impl Words {
    fn fresh(&mut self, rng: &mut impl Rng, syllables: usize) -> String {
        loop {
            let w: String = (0..syllables).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn value(&mut self, kind: ValueKind, rng: &mut impl Rng) -> String {
        match kind {
            ValueKind::Place | ValueKind::Thing => self.fresh(rng, 3),
            ValueKind::Person => {
                let first: String = (0..2).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
                format!("{first} {}", self.fresh(rng, 3))
            }
            ValueKind::Year => loop {
                let y = rng.gen_range(1000..2000).to_string();
                if self.used.insert(y.clone()) {
                    return y;
                }
            },
            ValueKind::Count => loop {
                let n = format!("{},{:03}", rng.gen_range(2..999), rng.gen_range(0..1000));
                if self.used.insert(n.clone()) {
                    return n;
                }
            },
        }
    }
}

fn capitalize(s: &str) -> String {
    s.split(' ')
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(f) => f.to_uppercase().chain(c).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn fill(template: &str, entity: &str, value: &str) -> String {
    template.replace("{e}", entity).replace("{v}", value)
}

struct Fact {
    doc: usize,
    position: usize,
    relation: usize,
    value: String,
    sentence: String,
}

/// Generates the task deterministically from `config.seed`.
pub fn generate(config: &SynthConfig) -> Result<SynthTask> {
    if config.facts_per_entity < 2 || config.facts_per_entity > RELATIONS.len() {
        return Err(Error::Config(format!(
            "facts_per_entity must be in 2..={}",
            RELATIONS.len()
        )));
    }
    if !(0.0..1.0).contains(&config.mention_rate) {
        return Err(Error::Config("mention_rate must be in [0, 1)".into()));
    }
    if config.entities == 0 || config.topics == 0 {
        return Err(Error::Config("entities and topics must be >= 1".into()));
    }
    let total = config.entities * config.facts_per_entity;
    if config.train + config.dev + config.test > total {
        return Err(Error::Config(format!(
            "{} gold questions requested but only {total} passages",
            config.train + config.dev + config.test
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut words = Words { used: HashSet::new() };
    let topic_words: Vec<Vec<String>> = (0..config.topics)
        .map(|_| (0..20).map(|_| words.fresh(&mut rng, 3)).collect())
        .collect();

    let mut documents = Vec::with_capacity(config.entities);
    let mut facts = Vec::with_capacity(total);
    for d in 0..config.entities {
        let name = capitalize(&words.fresh(&mut rng, 3));
        let topic = &topic_words[rng.gen_range(0..config.topics)];
        let own: Vec<String> = (0..4).map(|_| words.fresh(&mut rng, 3)).collect();
        let mut relations: Vec<usize> = (0..RELATIONS.len()).collect();
        relations.shuffle(&mut rng);
        let mut body = Vec::new();
        for (position, &r) in relations[..config.facts_per_entity].iter().enumerate() {
            let rel = &RELATIONS[r];
            let value = words.value(rel.value, &mut rng);
            let display = if rel.value == ValueKind::Person || rel.value == ValueKind::Place {
                capitalize(&value)
            } else {
                value.clone()
            };
            let sentence = fill(rel.passage.choose(&mut rng).unwrap(), &name, &display);
            let mut passage: Vec<String> = sentence.split_whitespace().map(str::to_string).collect();
            while passage.len() < config.passage_words {
                if rng.gen_bool(config.mention_rate) {
                    passage.push(name.clone());
                    continue;
                }
                let w = match rng.gen_range(0..10) {
                    0..=3 => topic.choose(&mut rng).unwrap().clone(),
                    4..=5 => own.choose(&mut rng).unwrap().clone(),
                    _ => COMMON.choose(&mut rng).unwrap().to_string(),
                };
                passage.push(w);
            }
            if passage.len() > config.passage_words {
                return Err(Error::Config(format!(
                    "passage_words {} is shorter than a fact sentence",
                    config.passage_words
                )));
            }
            body.extend(passage);
            facts.push(Fact {
                doc: d,
                position,
                relation: r,
                value,
                sentence,
            });
        }
        documents.push(Document {
            doc_id: format!("e{d:04}"),
            title: name,
            body: body.join(" "),
        });
    }
    let corpus = CorpusStore::from_documents(&documents, config.passage_words)?;

    let passage_id = |f: &Fact| format!("{}#{}", documents[f.doc].doc_id, f.position);
    let mut order: Vec<usize> = (0..facts.len()).collect();
    order.shuffle(&mut rng);
    let gold = |rng: &mut ChaCha8Rng, i: usize| {
        let f = &facts[i];
        let q = RELATIONS[f.relation].question.choose(rng).unwrap();
        TrainingPair {
            question: fill(q, &documents[f.doc].title, ""),
            gold_passage_id: passage_id(f),
            answer_spans: vec![f.value.clone()],
            source_stage: SourceStage::Gold,
        }
    };
    let (train_idx, rest) = order.split_at(config.train);
    let (dev_idx, rest) = rest.split_at(config.dev);
    let test_idx = &rest[..config.test];
    let train = train_idx.iter().map(|&i| gold(&mut rng, i)).collect();
    let dev = dev_idx.iter().map(|&i| gold(&mut rng, i)).collect();
    let test = test_idx.iter().map(|&i| gold(&mut rng, i)).collect();

    let mut synthetic = Vec::new();
    for f in &facts {
        if !rng.gen_bool(config.synthetic_fraction.clamp(0.0, 1.0)) {
            continue;
        }
        let title = &documents[f.doc].title;
        let value_tokens: HashSet<&str> = f.value.split_whitespace().collect();
        let mut keywords: Vec<&str> = f
            .sentence
            .split_whitespace()
            .filter(|w| {
                let lw = w.to_lowercase();
                !COMMON.contains(&lw.as_str())
                    && !value_tokens.contains(lw.as_str())
                    && !title.to_lowercase().split(' ').any(|t| t == lw)
            })
            .collect();
        keywords.shuffle(&mut rng);
        keywords.truncate(3);
        synthetic.push(TrainingPair {
            question: format!("{} {}", title.to_lowercase(), keywords.join(" ")),
            gold_passage_id: passage_id(f),
            answer_spans: vec![f.value.clone()],
            source_stage: SourceStage::Synthetic,
        });
    }

    Ok(SynthTask {
        documents,
        corpus,
        train,
        dev,
        test,
        synthetic,
    })
}

impl SynthTask {
    /// Writes `documents.jsonl` and `{train,dev,test,synthetic}.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_documents(&self.documents, &dir.join("documents.jsonl"))?;
        write_pairs(&self.train, &dir.join("train.jsonl"))?;
        write_pairs(&self.dev, &dir.join("dev.jsonl"))?;
        write_pairs(&self.test, &dir.join("test.jsonl"))?;
        write_pairs(&self.synthetic, &dir.join("synthetic.jsonl"))?;
        Ok(())
    }
}
