//! A small generated world for end-to-end runs without external data.
//!
//! Each fact has a stale object, which the training corpus states, and an
//! updated object, which only the gold contexts state. A model trained on the
//! corpus answers from the stale snapshot; reading the context is the only
//! way to get the updated answers right.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Granularity, NgramConfig};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluation::{write_atomic, write_jsonl, QaRecord};
use crate::prompting::{FewShotExample, PromptMode, PromptTemplates};
use crate::retrieval::Passage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Birthplace,
    Capital,
    Founder,
}

impl Relation {
    const ALL: [Relation; 3] = [Relation::Birthplace, Relation::Capital, Relation::Founder];

    pub fn question(self, subject: &str) -> String {
        match self {
            Relation::Birthplace => format!("Where was {subject} born?"),
            Relation::Capital => format!("What is the capital of {subject}?"),
            Relation::Founder => format!("Who founded {subject}?"),
        }
    }

    pub fn statement(self, subject: &str, object: &str) -> String {
        match self {
            Relation::Birthplace => format!("{subject} was born in {object}."),
            Relation::Capital => format!("The capital of {subject} is {object}."),
            Relation::Founder => format!("{subject} was founded by {object}."),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub subject: String,
    pub relation: Relation,
    pub stale: String,
    pub updated: String,
    pub popularity: u64,
}

impl Fact {
    pub fn is_conflict(&self) -> bool {
        self.stale != self.updated
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub seed: u64,
    pub num_facts: usize,
    pub num_questions: usize,
    /// Questions whose gold context restates the stale object.
    pub unchanged_questions: usize,
    /// Copies of each stale statement and question in the corpus.
    pub repetitions: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 2024,
            num_facts: 50,
            num_questions: 25,
            unchanged_questions: 5,
            repetitions: 200,
        }
    }
}

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

fn make_name(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    let mut s = String::new();
    for _ in 0..syllables {
        s.push_str(ONSETS.choose(rng).expect("non-empty"));
        s.push_str(VOWELS.choose(rng).expect("non-empty"));
    }
    s.push_str(["n", "r", "l", "s"].choose(rng).expect("non-empty"));
    let mut c = s.chars();
    let first = c.next().expect("non-empty").to_ascii_uppercase();
    std::iter::once(first).chain(c).collect()
}

/// The generated world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub config: WorldConfig,
    pub facts: Vec<Fact>,
}

impl World {
    pub fn generate(config: WorldConfig) -> World {
        assert!(config.num_questions <= config.num_facts);
        assert!(config.unchanged_questions <= config.num_questions);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut used = BTreeSet::new();
        let mut fresh = |rng: &mut ChaCha8Rng, syllables: usize| loop {
            let name = make_name(rng, syllables);
            if used.insert(name.clone()) {
                return name;
            }
        };
        let subjects: Vec<String> = (0..config.num_facts).map(|_| fresh(&mut rng, 2)).collect();
        let objects: Vec<String> = (0..config.num_facts).map(|_| fresh(&mut rng, 3)).collect();
        let mut facts: Vec<Fact> = subjects
            .into_iter()
            .zip(&objects)
            .enumerate()
            .map(|(i, (subject, stale))| Fact {
                subject,
                relation: Relation::ALL[i % Relation::ALL.len()],
                stale: stale.clone(),
                updated: stale.clone(),
                popularity: 10u64.pow(rng.gen_range(0..7)) * rng.gen_range(1..10),
            })
            .collect();
        // Updated objects are drawn from objects stated elsewhere in the corpus,
        // so every answer is in the model's vocabulary.
        let changed = config.num_questions - config.unchanged_questions;
        for i in 0..changed {
            let fact_objects: Vec<&String> = objects
                .iter()
                .filter(|o| **o != facts[i].stale)
                .collect();
            facts[i].updated = fact_objects.choose(&mut rng).expect("at least two facts").to_string();
        }
        World { config, facts }
    }

    pub fn questions(&self) -> &[Fact] {
        &self.facts[..self.config.num_questions]
    }

    /// Word-level training text stating every stale fact as a sentence and as
    /// a closed-book question with its answer.
    pub fn stale_corpus(&self) -> String {
        let templates = PromptTemplates::default();
        let mut lines = Vec::new();
        for _ in 0..self.config.repetitions {
            for f in &self.facts {
                lines.push(f.relation.statement(&f.subject, &f.stale));
                let prompt = templates
                    .render(PromptMode::Closed, &f.relation.question(&f.subject), None, &[])
                    .expect("closed template");
                lines.push(format!("{prompt}{}", f.stale));
            }
        }
        let mut text = lines.join("\n");
        text.push('\n');
        text
    }

    pub fn gold_context(&self, i: usize) -> String {
        let f = &self.facts[i];
        f.relation.statement(&f.subject, &f.updated)
    }

    pub fn dataset(&self) -> Vec<QaRecord> {
        self.questions()
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let context = self.gold_context(i);
                let byte = context.find(f.updated.as_str()).expect("statement names the object");
                let start = context[..byte].chars().count();
                QaRecord {
                    id: format!("syn-{i:03}"),
                    question: f.relation.question(&f.subject),
                    answers: vec![f.updated.clone()],
                    gold_context: Some(context),
                    entity_popularity: Some(f.popularity),
                    answer_entity_span: Some((start, start + f.updated.chars().count())),
                }
            })
            .collect()
    }

    /// Items whose updated answer differs from the stale one.
    pub fn conflict_split(&self) -> Vec<QaRecord> {
        self.dataset()
            .into_iter()
            .zip(self.questions())
            .filter(|(_, f)| f.is_conflict())
            .map(|(r, _)| r)
            .collect()
    }

    /// Demonstrations drawn from the facts that are not asked about.
    pub fn shots(&self) -> Vec<FewShotExample> {
        self.facts[self.config.num_questions..]
            .iter()
            .map(|f| FewShotExample {
                question: f.relation.question(&f.subject),
                answer: f.stale.clone(),
                context: Some(f.relation.statement(&f.subject, &f.stale)),
            })
            .collect()
    }

    /// Retrieval corpus: one passage per fact, updated facts for the questions.
    pub fn passages(&self) -> Vec<Passage> {
        self.facts
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let text = if i < self.config.num_questions {
                    self.gold_context(i)
                } else {
                    f.relation.statement(&f.subject, &f.stale)
                };
                Passage::new(format!("fact-{i:03}"), f.subject.clone(), text)
            })
            .collect()
    }
}

/// Word-level order-7 model with the in-context cache enabled.
pub fn ngram_config() -> NgramConfig {
    NgramConfig {
        order: 7,
        granularity: Granularity::Word,
        cache_bonus: 1.0,
    }
}

/// File names written by [`World::write_files`].
pub const CORPUS_FILE: &str = "stale_corpus.txt";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const CONFLICT_FILE: &str = "conflict.jsonl";
pub const PASSAGES_FILE: &str = "passages.jsonl";
pub const SHOTS_FILE: &str = "shots.jsonl";
pub const CONFIG_FILE: &str = "run.toml";
pub const WORLD_FILE: &str = "world.json";

impl World {
    /// Zero-shot run over every strategy with the n-gram model trained on
    /// `corpus_path`.
    pub fn run_config(&self, corpus_path: &str) -> RunConfig {
        let mut config = RunConfig::default();
        config.backend.spec = format!("ngram:{corpus_path}");
        config.backend.ngram = ngram_config();
        config.num_shots = 0;
        config.seed = self.config.seed;
        config
    }

    /// Writes the corpus, datasets, passages, shots, world description, and a
    /// run config pointing at the corpus inside `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join(CORPUS_FILE), self.stale_corpus().as_bytes())?;
        write_jsonl(dir.join(DATASET_FILE), &self.dataset())?;
        write_jsonl(dir.join(CONFLICT_FILE), &self.conflict_split())?;
        write_jsonl(dir.join(PASSAGES_FILE), &self.passages())?;
        write_jsonl(dir.join(SHOTS_FILE), &self.shots())?;
        let mut world = serde_json::to_string_pretty(self).map_err(|e| Error::json("world", e))?;
        world.push('\n');
        write_atomic(&dir.join(WORLD_FILE), world.as_bytes())?;
        let corpus = dir.join(CORPUS_FILE);
        let config = self.run_config(&corpus.to_string_lossy()).to_toml()?;
        write_atomic(&dir.join(CONFIG_FILE), config.as_bytes())
    }
}
