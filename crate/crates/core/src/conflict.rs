//! Knowledge-conflict sets: the answer entity in each gold context is swapped
//! for a different entity, and the swapped entity becomes the only answer.

use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::derive_seed;
use crate::error::{Error, Result};
use crate::evaluation::{normalize_answer, QaRecord};

/// A rewritten record. Serializes as a plain [`QaRecord`] carrying the new
/// context and answers, plus `base` and `substitute_entity`, so the output
/// file loads directly as an evaluation dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Wire", try_from = "Wire")]
pub struct SubstitutionRecord {
    pub base: QaRecord,
    pub substitute_entity: String,
    pub new_context: String,
    pub new_answers: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Wire {
    #[serde(flatten)]
    record: QaRecord,
    substitute_entity: String,
    base: QaRecord,
}

impl From<SubstitutionRecord> for Wire {
    fn from(s: SubstitutionRecord) -> Self {
        Wire {
            record: s.as_qa_record(),
            substitute_entity: s.substitute_entity,
            base: s.base,
        }
    }
}

impl TryFrom<Wire> for SubstitutionRecord {
    type Error = String;

    fn try_from(w: Wire) -> std::result::Result<Self, String> {
        let new_context = w
            .record
            .gold_context
            .ok_or_else(|| format!("record {} has no gold_context", w.record.id))?;
        Ok(SubstitutionRecord {
            base: w.base,
            substitute_entity: w.substitute_entity,
            new_context,
            new_answers: w.record.answers,
        })
    }
}

impl SubstitutionRecord {
    /// The evaluation view: same id and question, substituted context and answer.
    pub fn as_qa_record(&self) -> QaRecord {
        let span = char_find(&self.new_context, &self.substitute_entity)
            .map(|start| (start, start + self.substitute_entity.chars().count()));
        QaRecord {
            id: self.base.id.clone(),
            question: self.base.question.clone(),
            answers: self.new_answers.clone(),
            gold_context: Some(self.new_context.clone()),
            entity_popularity: self.base.entity_popularity,
            answer_entity_span: span,
        }
    }

    /// The spanned surface string of the base record.
    pub fn original_entity(&self) -> &str {
        self.base.span_text().unwrap_or_default()
    }
}

/// Character offset of the first occurrence of `needle`.
fn char_find(haystack: &str, needle: &str) -> Option<usize> {
    haystack
        .find(needle)
        .map(|byte| haystack[..byte].chars().count())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// No span or no gold context.
    MissingSpan,
    /// Every pool entry is equivalent to an original answer.
    PoolTooSmall,
    /// The drawn substitute already occurs in the context.
    SubstitutePreexists,
    /// Replacement would leave the original string in the context.
    Residual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub id: String,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ConflictStats {
    pub total: usize,
    pub generated: usize,
    pub skipped: Vec<Skipped>,
}

impl ConflictStats {
    pub fn count(&self, reason: SkipReason) -> usize {
        self.skipped.iter().filter(|s| s.reason == reason).count()
    }
}

/// The spanned entity of every annotated record, duplicates kept.
pub fn self_pool(dataset: &[QaRecord]) -> Vec<String> {
    dataset
        .iter()
        .filter_map(|r| r.span_text().map(String::from))
        .collect()
}

/// One entity per non-empty line.
pub fn read_pool(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let entity = line.trim();
        if !entity.is_empty() {
            out.push(entity.to_string());
        }
    }
    Ok(out)
}

/// Substitutes one record, drawing from `pool` with a generator seeded by `seed`.
pub fn substitute_record(
    record: &QaRecord,
    pool: &[String],
    seed: u64,
) -> std::result::Result<SubstitutionRecord, SkipReason> {
    let (Some(context), Some(original)) = (record.gold_context.as_deref(), record.span_text()) else {
        return Err(SkipReason::MissingSpan);
    };
    let excluded: Vec<String> = record
        .answers
        .iter()
        .map(|a| normalize_answer(a))
        .chain([normalize_answer(original)])
        .collect();
    let candidates: Vec<&String> = pool
        .iter()
        .filter(|c| !c.is_empty() && !excluded.contains(&normalize_answer(c)))
        .collect();
    let substitute = candidates
        .choose(&mut ChaCha8Rng::seed_from_u64(seed))
        .ok_or(SkipReason::PoolTooSmall)?;
    if context.contains(substitute.as_str()) {
        return Err(SkipReason::SubstitutePreexists);
    }
    let new_context = context.replace(original, substitute);
    if new_context.contains(original) || new_context.replace(substitute.as_str(), original) != context {
        return Err(SkipReason::Residual);
    }
    Ok(SubstitutionRecord {
        base: record.clone(),
        substitute_entity: (*substitute).clone(),
        new_context,
        new_answers: vec![(*substitute).clone()],
    })
}

/// Builds the conflict set. Record `i` draws with seed `derive_seed(seed, i)`.
pub fn generate_conflict_set(
    dataset: &[QaRecord],
    pool: &[String],
    seed: u64,
) -> (Vec<SubstitutionRecord>, ConflictStats) {
    let mut stats = ConflictStats {
        total: dataset.len(),
        ..Default::default()
    };
    let mut out = Vec::new();
    for (i, record) in dataset.iter().enumerate() {
        match substitute_record(record, pool, derive_seed(seed, i as u64)) {
            Ok(s) => out.push(s),
            Err(reason) => stats.skipped.push(Skipped {
                id: record.id.clone(),
                reason,
            }),
        }
    }
    stats.generated = out.len();
    (out, stats)
}

/// Checks that a pool can supply at least one substitute for some record.
pub fn check_pool(pool: &[String]) -> Result<()> {
    let mut distinct: Vec<String> = pool.iter().map(|p| normalize_answer(p)).collect();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::PoolTooSmall(format!(
            "entity pool has {} distinct entries, need at least 2",
            distinct.len()
        )));
    }
    Ok(())
}
