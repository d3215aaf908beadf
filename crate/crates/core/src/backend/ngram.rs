use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::vocab::{join_words, split_words};
use super::{
    check_prefix, BackendDescriptor, BackendKind, LanguageModel, LogitVector, TokenSequence,
    VocabInfo,
};
use crate::error::{Error, Result};

pub const EOS_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
const UNK_SURFACE: &str = "<unk>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Char,
    Word,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NgramConfig {
    /// Longest n-gram length; the model conditions on up to `order - 1` tokens.
    pub order: usize,
    pub granularity: Granularity,
    /// Scale of the in-context cache: a token already present in the prefix
    /// gets `cache_bonus * idf(token)` added to its logit, with idf computed
    /// over corpus lines. Zero disables it.
    pub cache_bonus: f64,
}

impl Default for NgramConfig {
    fn default() -> Self {
        NgramConfig {
            order: 3,
            granularity: Granularity::Char,
            cache_bonus: 0.0,
        }
    }
}

#[derive(Debug, Default, Clone)]
struct Continuations {
    total: u64,
    next: HashMap<u32, u64>,
}

/// Add-one smoothed n-gram model trained on a plain-text corpus.
///
/// For a prefix, the model averages the add-one estimates
/// `(c(h, w) + 1) / (c(h) + |V|)` over every history length from zero up to
/// `min(order - 1, prefix length)`, so every token keeps positive mass.
/// Id 0 is eos and id 1 is `<unk>`; the remaining ids are the corpus
/// surfaces in sorted order.
#[derive(Debug, Clone)]
pub struct NgramModel {
    descriptor: BackendDescriptor,
    config: NgramConfig,
    surfaces: Vec<String>,
    lookup: HashMap<String, u32>,
    /// `counts[k]` maps a k-token history to its continuation counts.
    counts: Vec<HashMap<Vec<u32>, Continuations>>,
    /// `ln((1 + lines) / (1 + df))` per token, df counted over corpus lines
    /// including their terminating newline.
    idf: Vec<f64>,
}

impl NgramModel {
    pub fn train(corpus: &str, config: NgramConfig) -> Result<Self> {
        if config.order == 0 {
            return Err(Error::InvalidBackend("n-gram order must be at least 1".into()));
        }
        if !config.cache_bonus.is_finite() || config.cache_bonus < 0.0 {
            return Err(Error::InvalidBackend(
                "cache_bonus must be finite and non-negative".into(),
            ));
        }
        let pieces = segment(corpus, config.granularity);
        if pieces.is_empty() {
            return Err(Error::InvalidBackend("n-gram training corpus is empty".into()));
        }
        let distinct: BTreeSet<&str> = pieces.iter().copied().collect();
        let mut surfaces = vec![String::new(), UNK_SURFACE.to_string()];
        surfaces.extend(distinct.into_iter().filter(|s| *s != UNK_SURFACE).map(String::from));
        let lookup: HashMap<String, u32> = surfaces
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();

        let mut ids: Vec<u32> = pieces.iter().map(|p| lookup[*p]).collect();
        ids.push(EOS_ID);

        let mut counts = vec![HashMap::<Vec<u32>, Continuations>::new(); config.order];
        for (i, &target) in ids.iter().enumerate() {
            for (k, table) in counts.iter_mut().enumerate() {
                if k > i {
                    break;
                }
                let entry = table.entry(ids[i - k..i].to_vec()).or_default();
                entry.total += 1;
                *entry.next.entry(target).or_insert(0) += 1;
            }
        }

        let mut df = vec![0u64; surfaces.len()];
        let mut lines = 0u64;
        for line in corpus.split_inclusive('\n') {
            lines += 1;
            let present: HashSet<u32> = segment(line, config.granularity)
                .into_iter()
                .map(|p| lookup[p])
                .collect();
            for id in present {
                df[id as usize] += 1;
            }
        }
        // eos and <unk> are never cached
        let idf = df
            .iter()
            .enumerate()
            .map(|(id, &d)| match id as u32 {
                EOS_ID | UNK_ID => 0.0,
                _ => ((1 + lines) as f64 / (1 + d) as f64).ln(),
            })
            .collect();

        let digest = Sha256::digest(corpus.as_bytes());
        let identity = format!(
            "ngram:order={},granularity={},cache_bonus={},corpus_sha256={}",
            config.order,
            match config.granularity {
                Granularity::Char => "char",
                Granularity::Word => "word",
            },
            config.cache_bonus,
            &hex::encode(digest)[..16]
        );
        Ok(NgramModel {
            descriptor: BackendDescriptor {
                kind: BackendKind::Ngram,
                vocab: VocabInfo::new(surfaces.len(), EOS_ID)?,
                identity,
            },
            config,
            surfaces,
            lookup,
            counts,
            idf,
        })
    }

    pub fn config(&self) -> &NgramConfig {
        &self.config
    }

    pub fn token_id(&self, surface: &str) -> Option<u32> {
        self.lookup.get(surface).copied()
    }

    /// Line-level inverse document frequency used to scale the cache bonus.
    pub fn idf(&self, id: u32) -> f64 {
        self.idf[id as usize]
    }

    /// Raw count of `history` followed by `next` in the training stream.
    pub fn count(&self, history: &[u32], next: u32) -> u64 {
        self.counts
            .get(history.len())
            .and_then(|t| t.get(history))
            .and_then(|c| c.next.get(&next))
            .copied()
            .unwrap_or(0)
    }

    /// Smoothed next-token distribution (before the cache bonus).
    pub fn probabilities(&self, prefix: &[u32]) -> Vec<f64> {
        let v = self.surfaces.len();
        let max_k = (self.config.order - 1).min(prefix.len());
        let mut probs = vec![0.0; v];
        for k in 0..=max_k {
            let history = &prefix[prefix.len() - k..];
            let (total, next) = match self.counts[k].get(history) {
                Some(c) => (c.total, Some(&c.next)),
                None => (0, None),
            };
            let denom = (total + v as u64) as f64;
            let base = 1.0 / denom;
            for p in probs.iter_mut() {
                *p += base;
            }
            if let Some(next) = next {
                for (&w, &c) in next {
                    probs[w as usize] += c as f64 / denom;
                }
            }
        }
        let weight = 1.0 / (max_k + 1) as f64;
        for p in probs.iter_mut() {
            *p *= weight;
        }
        probs
    }
}

fn segment(text: &str, granularity: Granularity) -> Vec<&str> {
    match granularity {
        Granularity::Char => text
            .char_indices()
            .map(|(i, c)| &text[i..i + c.len_utf8()])
            .collect(),
        Granularity::Word => split_words(text),
    }
}

impl LanguageModel for NgramModel {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn max_context(&self) -> Option<usize> {
        None
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        Ok(segment(text, self.config.granularity)
            .into_iter()
            .map(|p| self.token_id(p).unwrap_or(UNK_ID))
            .collect::<Vec<_>>()
            .into())
    }

    fn detokenize(&self, tokens: &[u32]) -> Result<String> {
        self.descriptor.vocab.check_ids(tokens)?;
        let pieces = tokens.iter().map(|&t| self.surfaces[t as usize].as_str());
        Ok(match self.config.granularity {
            Granularity::Char => pieces.collect(),
            Granularity::Word => join_words(pieces),
        })
    }

    fn next_logits(&self, prefix: &[u32]) -> Result<LogitVector> {
        check_prefix(&self.descriptor.vocab, None, prefix)?;
        let mut logits: Vec<f64> = self.probabilities(prefix).into_iter().map(f64::ln).collect();
        if self.config.cache_bonus > 0.0 {
            let seen: HashSet<u32> = prefix.iter().copied().collect();
            for id in seen {
                logits[id as usize] += self.config.cache_bonus * self.idf[id as usize];
            }
        }
        Ok(LogitVector::from_finite(logits))
    }
}
