//! Dataset ingestion, scoring, and strategy reports.

mod metrics;
mod run;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use metrics::{
    exact_match, extract_prediction, matched_answer, normalize_answer, popularity_bucket,
    PopularityBucket, MAX_BUCKET,
};
pub use run::{run_eval, Answer, AskOutput, Pipeline};

use crate::config::RunConfig;
use crate::decoding::DecodeStrategy;
use crate::error::{Error, Result};

/// One question with its gold answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_context: Option<String>,
    /// Monthly page views of the subject entity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_popularity: Option<u64>,
    /// Character offsets `[start, end)` of the answer entity in `gold_context`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_entity_span: Option<(usize, usize)>,
}

impl QaRecord {
    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidRecord {
            id: self.id.clone(),
            reason,
        };
        if self.answers.is_empty() {
            return Err(invalid("answers must be non-empty".into()));
        }
        if let Some(span) = self.answer_entity_span {
            let text = self
                .span_text()
                .ok_or_else(|| invalid(format!("span {span:?} outside gold_context")))?;
            if matched_answer(text, &self.answers).is_none() {
                return Err(invalid(format!("span text {text:?} matches no answer")));
            }
        }
        Ok(())
    }

    /// The spanned surface string, if the span is present and in bounds.
    pub fn span_text(&self) -> Option<&str> {
        let (start, end) = self.answer_entity_span?;
        let ctx = self.gold_context.as_deref()?;
        if start >= end {
            return None;
        }
        let mut offsets = ctx.char_indices().map(|(i, _)| i).chain([ctx.len()]);
        let begin = offsets.nth(start)?;
        let finish = offsets.nth(end - start - 1)?;
        Some(&ctx[begin..finish])
    }
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<QaRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: QaRecord = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), n + 1), e))?;
        record.validate()?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, row).map_err(|e| Error::json("jsonl row", e))?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

/// Writes via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    pub prediction: String,
    pub matched_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traces_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket: Option<String>,
}

impl ItemResult {
    pub fn is_match(&self) -> bool {
        self.matched_answer.is_some()
    }

    pub fn is_errored(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketEm {
    pub em: f64,
    pub count: usize,
}

/// Bucket key for items without popularity data.
pub const UNKNOWN_BUCKET: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Display form, e.g. `ours-fixed(alpha=1)`.
    pub strategy: String,
    pub strategy_spec: DecodeStrategy,
    /// Mean match indicator; `None` when no item was scored.
    pub em: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
    pub scored: usize,
    pub errored: usize,
    pub per_bucket_em: BTreeMap<String, BucketEm>,
    pub items: Vec<ItemResult>,
}

impl RunReport {
    /// Aggregates item results. Errored items count as misses unless
    /// `exclude_errored` drops them from every denominator.
    pub fn from_items(strategy: DecodeStrategy, items: Vec<ItemResult>, exclude_errored: bool) -> Self {
        let errored = items.iter().filter(|i| i.is_errored()).count();
        let scored_items: Vec<&ItemResult> = items
            .iter()
            .filter(|i| !(exclude_errored && i.is_errored()))
            .collect();
        let mean = |xs: &[&ItemResult]| {
            xs.iter().filter(|i| i.is_match()).count() as f64 / xs.len() as f64
        };
        let em = (!scored_items.is_empty()).then(|| mean(&scored_items));
        let mut groups: BTreeMap<String, Vec<&ItemResult>> = BTreeMap::new();
        for item in &scored_items {
            let key = item.bucket.clone().unwrap_or_else(|| UNKNOWN_BUCKET.to_string());
            groups.entry(key).or_default().push(item);
        }
        let per_bucket_em = groups
            .into_iter()
            .map(|(k, v)| {
                (
                    k,
                    BucketEm {
                        em: mean(&v),
                        count: v.len(),
                    },
                )
            })
            .collect();
        RunReport {
            strategy: strategy.to_string(),
            strategy_spec: strategy,
            em,
            flag: scored_items.is_empty().then(|| "no items".to_string()),
            scored: scored_items.len(),
            errored,
            per_bucket_em,
            items,
        }
    }

    pub fn item_ids(&self) -> BTreeSet<&str> {
        self.items.iter().map(|i| i.id.as_str()).collect()
    }
}

/// On-disk report: the resolved config plus one report per strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub config: RunConfig,
    pub backend: String,
    pub embedder: Option<String>,
    /// Always "first_line_trimmed": generations are cut at the first newline.
    pub prediction_rule: String,
    pub reports: Vec<RunReport>,
}

impl ReportFile {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("report", e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        write_atomic(path.as_ref(), text.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn any_errored(&self) -> bool {
        self.reports.iter().any(|r| r.errored > 0)
    }
}

/// One row per report, one EM column overall and per popularity bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub buckets: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub em: Option<f64>,
    pub per_bucket: Vec<Option<f64>>,
}

/// Aligns reports over the same item ids.
pub fn compare(reports: &[(String, &RunReport)]) -> Result<ComparisonTable> {
    if reports.len() < 2 {
        return Err(Error::Config("comparison needs at least two reports".into()));
    }
    let ids = reports[0].1.item_ids();
    if reports.iter().any(|(_, r)| r.item_ids() != ids) {
        return Err(Error::DatasetMismatch);
    }
    let buckets: Vec<String> = reports
        .iter()
        .flat_map(|(_, r)| r.per_bucket_em.keys().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let show_buckets = !(buckets.len() == 1 && buckets[0] == UNKNOWN_BUCKET);
    let rows = reports
        .iter()
        .map(|(label, r)| ComparisonRow {
            label: label.clone(),
            em: r.em,
            per_bucket: if show_buckets {
                buckets
                    .iter()
                    .map(|b| r.per_bucket_em.get(b).map(|x| x.em))
                    .collect()
            } else {
                Vec::new()
            },
        })
        .collect();
    Ok(ComparisonTable {
        buckets: if show_buckets { buckets } else { Vec::new() },
        rows,
    })
}

impl std::fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let fmt_em = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let width = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .max()
            .unwrap_or(0)
            .max("strategy".len());
        write!(f, "{:<width$}  {:>8}", "strategy", "EM")?;
        for b in &self.buckets {
            write!(f, "  {:>12}", b)?;
        }
        writeln!(f)?;
        for row in &self.rows {
            write!(f, "{:<width$}  {:>8}", row.label, fmt_em(row.em))?;
            for v in &row.per_bucket {
                write!(f, "  {:>12}", fmt_em(*v))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
