use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};

use super::{analyze, Index};
use crate::backend::server::wire;
use crate::error::{Error, Result};

const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    normalized: bool,
}

impl EmbeddingVector {
    /// Scales `values` to unit length. An all-zero input stays zero and is
    /// flagged as not normalized.
    pub fn unit(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return EmbeddingVector {
                values: vec![0.0; values.len()],
                normalized: false,
            };
        }
        for v in values.iter_mut() {
            *v /= norm;
        }
        EmbeddingVector {
            values,
            normalized: true,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// `1 - a·b` for unit vectors, in `[0, 2]`.
///
/// A zero vector (text with no known terms) is treated as orthogonal to
/// everything, giving distance 1.
pub fn cosine_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    for v in [a, b] {
        if v.is_zero() {
            continue;
        }
        let norm = v.values.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !v.normalized || (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotNormalized);
        }
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((1.0 - dot).clamp(0.0, 2.0))
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector>;

    fn embed_many(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        texts.iter().map(|t| self.embed(t)).collect()
    }

    /// Recorded in run metadata.
    fn identity(&self) -> String;
}

/// TF-IDF over an index's vocabulary: raw term counts weighted by
/// `ln((1 + N) / (1 + df)) + 1`, then L2-normalized. Terms outside the
/// vocabulary are ignored.
#[derive(Debug, Clone)]
pub struct TfidfEmbedder {
    dims: HashMap<String, usize>,
    idf: Vec<f64>,
}

impl TfidfEmbedder {
    pub fn from_index(index: &Index) -> Self {
        let n = index.num_docs() as f64;
        let terms = index.terms();
        let idf = terms
            .iter()
            .map(|t| ((1.0 + n) / (1.0 + index.doc_freq(t) as f64)).ln() + 1.0)
            .collect();
        let dims = terms
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t.to_string(), i))
            .collect();
        TfidfEmbedder { dims, idf }
    }

    pub fn dim(&self) -> usize {
        self.idf.len()
    }
}

impl Embedder for TfidfEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for term in analyze(text) {
            if let Some(&d) = self.dims.get(&term) {
                *counts.entry(d).or_insert(0.0) += 1.0;
            }
        }
        let mut values = vec![0.0; self.idf.len()];
        for (d, tf) in counts {
            values[d] = tf * self.idf[d];
        }
        Ok(EmbeddingVector::unit(values))
    }

    fn identity(&self) -> String {
        format!("tfidf:dim={}", self.dim())
    }
}

/// Client for `POST /v1/embed`.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    url: String,
    client: Client,
}

impl RemoteEmbedder {
    pub fn new(base_url: &str) -> Result<Self> {
        let client = Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::RemoteUnavailable(e.to_string()))?;
        Ok(RemoteEmbedder {
            url: format!("{}/v1/embed", base_url.trim_end_matches('/')),
            client,
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let mut out = self.embed_many(&[text])?;
        Ok(out.remove(0))
    }

    fn embed_many(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let resp = self
            .client
            .post(&self.url)
            .json(&wire::EmbedRequest {
                texts: texts.iter().map(|t| t.to_string()).collect(),
            })
            .send()
            .map_err(|e| Error::RemoteUnavailable(format!("{}: {e}", self.url)))?;
        if !resp.status().is_success() {
            return Err(Error::RemoteUnavailable(format!(
                "{}: HTTP {}",
                self.url,
                resp.status()
            )));
        }
        let body: wire::EmbedResponse = resp
            .json()
            .map_err(|e| Error::RemoteUnavailable(format!("{}: {e}", self.url)))?;
        if body.vectors.len() != texts.len() {
            return Err(Error::RemoteUnavailable(format!(
                "{}: {} vectors for {} texts",
                self.url,
                body.vectors.len(),
                texts.len()
            )));
        }
        Ok(body.vectors.into_iter().map(EmbeddingVector::unit).collect())
    }

    fn identity(&self) -> String {
        format!("remote:{}", self.url)
    }
}
