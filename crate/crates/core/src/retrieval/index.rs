use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{analyze, Passage, ScoredPassage};
use crate::error::{Error, Result};

/// Bumped whenever the on-disk layout changes.
pub const INDEX_FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const POSTINGS: &str = "postings.json";
const PASSAGES: &str = "passages.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    /// Term-frequency saturation.
    pub k1: f64,
    /// Length normalization.
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1.is_finite() && self.k1 > 0.0) {
            return Err(Error::Config(format!("k1 must be positive, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Config(format!("b must lie in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    params: Bm25Params,
    num_docs: usize,
    avgdl: f64,
    num_terms: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct PostingsFile {
    doc_lengths: Vec<u32>,
    /// term -> [(doc ordinal, term frequency)], ordinals ascending
    terms: BTreeMap<String, Vec<(u32, u32)>>,
}

/// Immutable Okapi BM25 inverted index.
///
/// Layout on disk (one directory):
/// - `manifest.json`: format version, parameters, document count, avgdl
/// - `postings.json`: per-document analyzed lengths and per-term postings
/// - `passages.jsonl`: the passage store in document-ordinal order
#[derive(Debug, Clone)]
pub struct Index {
    params: Bm25Params,
    passages: Vec<Passage>,
    doc_lengths: Vec<u32>,
    avgdl: f64,
    postings: HashMap<String, Vec<(u32, u32)>>,
}

impl Index {
    pub fn build(corpus: impl IntoIterator<Item = Passage>, params: Bm25Params) -> Result<Self> {
        params.validate()?;
        let mut passages = Vec::new();
        let mut seen = HashSet::new();
        let mut doc_lengths = Vec::new();
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        for passage in corpus {
            if passage.text.trim().is_empty() {
                return Err(Error::EmptyPassage(passage.id));
            }
            if !seen.insert(passage.id.clone()) {
                return Err(Error::DuplicatePassageId(passage.id));
            }
            let doc = passages.len() as u32;
            let terms = analyze(&passage.text);
            doc_lengths.push(terms.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in terms {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((doc, count));
            }
            passages.push(passage);
        }
        if passages.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let avgdl = mean_length(&doc_lengths);
        Ok(Index {
            params,
            passages,
            doc_lengths,
            avgdl,
            postings,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn num_docs(&self) -> usize {
        self.passages.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn doc_length(&self, doc: usize) -> u32 {
        self.doc_lengths[doc]
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// Every indexed term in sorted order.
    pub fn terms(&self) -> Vec<&str> {
        let mut terms: Vec<&str> = self.postings.keys().map(String::as_str).collect();
        terms.sort_unstable();
        terms
    }

    pub fn postings(&self, term: &str) -> &[(u32, u32)] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    /// `ln((N - df + 0.5) / (df + 0.5) + 1)`, which is positive for every df.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.num_docs() as f64;
        let df = self.doc_freq(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    fn term_score(&self, idf: f64, tf: u32, doc_len: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * doc_len as f64 / self.avgdl))
    }

    /// Top `k` passages by BM25 over the distinct query terms, highest score
    /// first, ties by passage id. Passages without any query term are never
    /// returned.
    pub fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredPassage>> {
        let terms: BTreeSet<String> = analyze(query).into_iter().collect();
        if terms.is_empty() {
            return Err(Error::EmptyQuery);
        }
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(term);
            for &(doc, tf) in list {
                *scores.entry(doc).or_insert(0.0) +=
                    self.term_score(idf, tf, self.doc_lengths[doc as usize]);
            }
        }
        let mut ranked: Vec<(u32, f64)> = scores.into_iter().filter(|(_, s)| *s > 0.0).collect();
        ranked.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.passages[a.0 as usize].id.cmp(&self.passages[b.0 as usize].id))
        });
        ranked.truncate(k);
        Ok(ranked
            .into_iter()
            .enumerate()
            .map(|(i, (doc, score))| ScoredPassage {
                passage: self.passages[doc as usize].clone(),
                score,
                rank: i + 1,
            })
            .collect())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = Manifest {
            format_version: INDEX_FORMAT_VERSION,
            params: self.params,
            num_docs: self.num_docs(),
            avgdl: self.avgdl,
            num_terms: self.postings.len(),
        };
        write_json(&dir.join(MANIFEST), &manifest)?;
        let postings = PostingsFile {
            doc_lengths: self.doc_lengths.clone(),
            terms: self
                .postings
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        };
        write_json(&dir.join(POSTINGS), &postings)?;
        let path = dir.join(PASSAGES);
        let mut out = std::io::BufWriter::new(
            std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?,
        );
        for p in &self.passages {
            let line = serde_json::to_string(p).map_err(|e| Error::json("passage", e))?;
            writeln!(out, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        out.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest = read_json(&dir.join(MANIFEST))?;
        if manifest.format_version != INDEX_FORMAT_VERSION {
            return Err(Error::IndexFormat(format!(
                "format version {} (expected {INDEX_FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        manifest.params.validate()?;
        let postings: PostingsFile = read_json(&dir.join(POSTINGS))?;
        let passages = super::read_corpus(dir.join(PASSAGES))?;
        if passages.len() != manifest.num_docs || postings.doc_lengths.len() != manifest.num_docs {
            return Err(Error::IndexFormat(format!(
                "manifest declares {} documents, found {} passages and {} lengths",
                manifest.num_docs,
                passages.len(),
                postings.doc_lengths.len()
            )));
        }
        if postings.terms.len() != manifest.num_terms {
            return Err(Error::IndexFormat("term count disagrees with manifest".into()));
        }
        if let Some((term, _)) = postings
            .terms
            .iter()
            .find(|(_, l)| l.iter().any(|&(d, _)| d as usize >= passages.len()))
        {
            return Err(Error::IndexFormat(format!("posting for {term:?} out of range")));
        }
        let avgdl = mean_length(&postings.doc_lengths);
        if avgdl != manifest.avgdl {
            return Err(Error::IndexFormat("avgdl disagrees with document lengths".into()));
        }
        Ok(Index {
            params: manifest.params,
            passages,
            doc_lengths: postings.doc_lengths,
            avgdl,
            postings: postings.terms.into_iter().collect(),
        })
    }
}

fn mean_length(lengths: &[u32]) -> f64 {
    lengths.iter().map(|&l| l as u64).sum::<u64>() as f64 / lengths.len() as f64
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Vec<Passage> {
        vec![
            Passage::new("p1", "", "Paris is the capital of France."),
            Passage::new("p2", "", "Lyon is a city in France with old silk mills."),
            Passage::new("p3", "", "The zeppelin flew over the capital."),
        ]
    }

    #[test]
    fn single_document_statistics() {
        let idx = Index::build([Passage::new("a", "", "one two two three")], Bm25Params::default())
            .unwrap();
        assert_eq!(idx.num_docs(), 1);
        assert_eq!(idx.avgdl(), 4.0);
        assert_eq!(idx.doc_freq("two"), 1);
        assert_eq!(idx.postings("two"), &[(0, 2)]);
    }

    #[test]
    fn rejects_bad_corpora() {
        assert!(matches!(
            Index::build(Vec::new(), Bm25Params::default()),
            Err(Error::EmptyCorpus)
        ));
        let dup = vec![Passage::new("a", "", "x"), Passage::new("a", "", "y")];
        assert!(matches!(
            Index::build(dup, Bm25Params::default()),
            Err(Error::DuplicatePassageId(id)) if id == "a"
        ));
        assert!(matches!(
            Index::build([Passage::new("e", "", "  ")], Bm25Params::default()),
            Err(Error::EmptyPassage(_))
        ));
        assert!(Index::build(corpus(), Bm25Params { k1: 0.0, b: 0.5 }).is_err());
        assert!(Index::build(corpus(), Bm25Params { k1: 1.0, b: 1.5 }).is_err());
    }

    #[test]
    fn search_edge_cases() {
        let idx = Index::build(corpus(), Bm25Params::default()).unwrap();
        assert!(idx.search("quasar nebula", 5).unwrap().is_empty());
        assert!(matches!(idx.search("?!", 5), Err(Error::EmptyQuery)));
        let all = idx.search("capital france", 100).unwrap();
        assert_eq!(all.len(), 3);
        assert_eq!(all[0].passage.id, "p1");
        assert_eq!(all.iter().map(|s| s.rank).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(all.windows(2).all(|w| w[0].score >= w[1].score));
        assert_eq!(idx.search("capital france", 1).unwrap().len(), 1);
    }

    #[test]
    fn idf_is_positive_even_for_ubiquitous_terms() {
        let idx = Index::build(corpus(), Bm25Params::default()).unwrap();
        for term in idx.terms() {
            assert!(idx.idf(term) > 0.0, "{term}");
        }
    }

    #[test]
    fn persisted_index_matches() {
        let idx = Index::build(corpus(), Bm25Params { k1: 0.9, b: 0.4 }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        idx.save(dir.path()).unwrap();
        let back = Index::open(dir.path()).unwrap();
        assert_eq!(back.params(), idx.params());
        assert_eq!(back.avgdl(), idx.avgdl());
        for q in ["capital", "france silk", "the zeppelin", "nothing here"] {
            assert_eq!(back.search(q, 10).unwrap(), idx.search(q, 10).unwrap());
        }
    }

    #[test]
    fn rejects_wrong_format_version() {
        let idx = Index::build(corpus(), Bm25Params::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        idx.save(dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace("\"format_version\":1", "\"format_version\":99")).unwrap();
        assert!(matches!(Index::open(dir.path()), Err(Error::IndexFormat(_))));
    }
}
