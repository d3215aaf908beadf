//! Choosing the relevant and irrelevant passages for a question.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::{cosine_distance, Embedder, Index, Passage};

/// Fixed off-topic passage used as the irrelevant context.
pub const FIXED_IRRELEVANT_TEXT: &str = include_str!("../assets/fixed_irrelevant.txt");
pub const FIXED_IRRELEVANT_ID: &str = "fixed-irrelevant-v1";
pub const DEFAULT_POOL_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IrrelevantStrategy {
    Random,
    #[default]
    Fixed,
    #[serde(alias = "fixed-permuted")]
    FixedPermuted,
    #[serde(alias = "most-distant")]
    MostDistant,
}

impl IrrelevantStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            IrrelevantStrategy::Random => "random",
            IrrelevantStrategy::Fixed => "fixed",
            IrrelevantStrategy::FixedPermuted => "fixed-permuted",
            IrrelevantStrategy::MostDistant => "most-distant",
        }
    }

    /// Whether the strategy draws from the retrieval pool.
    pub fn uses_pool(&self) -> bool {
        matches!(self, IrrelevantStrategy::Random | IrrelevantStrategy::MostDistant)
    }
}

impl fmt::Display for IrrelevantStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IrrelevantStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "random" => IrrelevantStrategy::Random,
            "fixed" => IrrelevantStrategy::Fixed,
            "fixed-permuted" | "fixed_permuted" => IrrelevantStrategy::FixedPermuted,
            "most-distant" | "most_distant" => IrrelevantStrategy::MostDistant,
            other => return Err(Error::Config(format!("unknown irrelevant strategy {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevantSource {
    Gold,
    Retrieved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextPair {
    pub relevant: Passage,
    pub irrelevant: Passage,
    pub relevant_source: RelevantSource,
    pub strategy: IrrelevantStrategy,
    pub seed: Option<u64>,
}

/// Per-question seed derived from the run seed.
pub fn derive_seed(base: u64, ordinal: u64) -> u64 {
    base ^ ordinal
}

/// The gold passage when given, else the top BM25 hit for the question.
pub fn select_relevant(question: &str, index: Option<&Index>, gold: Option<&Passage>) -> Result<Passage> {
    if let Some(gold) = gold {
        return Ok(gold.clone());
    }
    let index = index.ok_or(Error::NoRetrievalHit)?;
    let hits = match index.search(question, 1) {
        Ok(hits) => hits,
        Err(Error::EmptyQuery) => return Err(Error::NoRetrievalHit),
        Err(e) => return Err(e),
    };
    hits.into_iter()
        .next()
        .map(|h| h.passage)
        .ok_or(Error::NoRetrievalHit)
}

/// Candidate pool for corpus-drawn irrelevant contexts: the top `pool_size`
/// retrievals for the question without the rank-1 passage.
pub fn candidate_pool(index: &Index, question: &str, pool_size: usize) -> Result<Vec<Passage>> {
    match index.search(question, pool_size) {
        Ok(hits) => Ok(hits.into_iter().skip(1).map(|h| h.passage).collect()),
        Err(Error::EmptyQuery) => Ok(Vec::new()),
        Err(e) => Err(e),
    }
}

/// The fixed passage with its words shuffled by `seed`.
pub fn permuted_fixed_text(seed: u64) -> String {
    let mut words: Vec<&str> = FIXED_IRRELEVANT_TEXT.split_whitespace().collect();
    words.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    words.join(" ")
}

pub fn fixed_passage() -> Passage {
    Passage::new(FIXED_IRRELEVANT_ID, "", FIXED_IRRELEVANT_TEXT.trim_end())
}

pub fn select_irrelevant(
    strategy: IrrelevantStrategy,
    c_plus: &Passage,
    pool: &[Passage],
    embedder: Option<&dyn Embedder>,
    seed: u64,
) -> Result<Passage> {
    match strategy {
        IrrelevantStrategy::Fixed => Ok(fixed_passage()),
        IrrelevantStrategy::FixedPermuted => Ok(Passage::new(
            format!("{FIXED_IRRELEVANT_ID}-permuted-{seed}"),
            "",
            permuted_fixed_text(seed),
        )),
        IrrelevantStrategy::Random => {
            let candidates: Vec<&Passage> = pool.iter().filter(|p| p.id != c_plus.id).collect();
            if candidates.is_empty() {
                return Err(Error::EmptyPool);
            }
            let pick = ChaCha8Rng::seed_from_u64(seed).gen_range(0..candidates.len());
            Ok(candidates[pick].clone())
        }
        IrrelevantStrategy::MostDistant => {
            let candidates: Vec<&Passage> = pool.iter().filter(|p| p.id != c_plus.id).collect();
            if candidates.is_empty() {
                return Err(Error::EmptyPool);
            }
            let embedder = embedder
                .ok_or_else(|| Error::EmbedderUnavailable("no embedder configured".into()))?;
            let unavailable = |e: Error| match e {
                Error::RemoteUnavailable(msg) => Error::EmbedderUnavailable(msg),
                other => other,
            };
            let anchor = embedder.embed(&c_plus.text).map_err(unavailable)?;
            let texts: Vec<&str> = candidates.iter().map(|p| p.text.as_str()).collect();
            let vectors = embedder.embed_many(&texts).map_err(unavailable)?;
            let mut best: Option<(f64, &Passage)> = None;
            for (p, v) in candidates.into_iter().zip(&vectors) {
                let d = cosine_distance(&anchor, v)?;
                let better = match best {
                    None => true,
                    Some((bd, bp)) => d > bd || (d == bd && p.id < bp.id),
                };
                if better {
                    best = Some((d, p));
                }
            }
            Ok(best.expect("non-empty candidates").1.clone())
        }
    }
}

/// Selection settings shared by every question of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub strategy: IrrelevantStrategy,
    pub pool_size: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            strategy: IrrelevantStrategy::default(),
            pool_size: DEFAULT_POOL_SIZE,
        }
    }
}

/// Relevant passage plus irrelevant passage for one question.
pub fn build_pair(
    question: &str,
    gold: Option<&Passage>,
    index: Option<&Index>,
    embedder: Option<&dyn Embedder>,
    config: &SelectionConfig,
    seed: u64,
) -> Result<ContextPair> {
    let relevant = select_relevant(question, index, gold)?;
    let pool = match (config.strategy.uses_pool(), index) {
        (true, Some(index)) => candidate_pool(index, question, config.pool_size)?,
        (true, None) => return Err(Error::EmptyPool),
        (false, _) => Vec::new(),
    };
    let irrelevant = select_irrelevant(config.strategy, &relevant, &pool, embedder, seed)?;
    Ok(ContextPair {
        relevant,
        irrelevant,
        relevant_source: if gold.is_some() {
            RelevantSource::Gold
        } else {
            RelevantSource::Retrieved
        },
        strategy: config.strategy,
        seed: Some(seed),
    })
}
