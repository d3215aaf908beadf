//! Passage store, BM25 search, and embedders for context selection.

mod analyzer;
mod embed;
mod index;

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use analyzer::analyze;
pub use embed::{cosine_distance, Embedder, EmbeddingVector, RemoteEmbedder, TfidfEmbedder};
pub use index::{Bm25Params, Index, INDEX_FORMAT_VERSION};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

impl Passage {
    pub fn new(id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Passage {
            id: id.into(),
            title: title.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPassage {
    pub passage: Passage,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Reads a JSONL corpus, one passage per non-blank line.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Passage>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let passage: Passage = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), n + 1), e))?;
        out.push(passage);
    }
    Ok(out)
}
