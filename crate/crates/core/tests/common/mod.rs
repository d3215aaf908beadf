//! Brute-force oracles and fixtures shared by the integration tests.
//!
//! Every oracle here is written from the formulas alone and shares no code
//! with the library beyond plain data types.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use mcdecode::decoding::{Branch, DecodeLimits};
use mcdecode::{
    decode, BranchPrompts, DecodeStrategy, LanguageModel, Passage, QaRecord, ScriptedModel,
    TokenSequence, VocabInfo,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---- decoding -------------------------------------------------------------

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    z.iter().map(|x| x - lse).collect()
}

/// `p * (p+ / p-)^alpha`, renormalized, evaluated in log space.
pub fn ratio_oracle(z: &[f64], zp: &[f64], zm: &[f64], alpha: f64) -> Vec<f64> {
    let (l, lp, lm) = (log_softmax(z), log_softmax(zp), log_softmax(zm));
    let s: Vec<f64> = (0..z.len()).map(|i| l[i] + alpha * (lp[i] - lm[i])).collect();
    log_softmax(&s).into_iter().map(f64::exp).collect()
}

pub fn random_logits(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn dynamic_alpha_oracle(p: &[f64], pr: &[f64]) -> f64 {
    let c = p.iter().cloned().fold(f64::MIN, f64::max);
    let cr = pr.iter().cloned().fold(f64::MIN, f64::max);
    if c > cr {
        1.0 - c
    } else {
        cr
    }
}

/// A random scripted backend over `vocab` tokens (eos = 0) together with
/// three distinct branch prompts. Every prefix a decode of at most `steps`
/// tokens can reach has its own random entry.
pub struct RandomScript {
    pub model: ScriptedModel,
    pub parametric: Vec<u32>,
    pub relevant: Vec<u32>,
    pub irrelevant: Vec<u32>,
    pub steps: usize,
}

impl RandomScript {
    pub fn new(seed: u64, vocab: usize, steps: usize) -> Self {
        let mut r = rng(seed);
        let info = VocabInfo::new(vocab, 0).unwrap();
        let tokens = (0..vocab).map(|i| format!("<{i}>")).collect();
        let mut model = ScriptedModel::new(info, tokens).unwrap();
        let prompt = |r: &mut ChaCha8Rng, lead: u32| -> Vec<u32> {
            let mut p = vec![lead];
            p.extend((0..3).map(|_| r.gen_range(1..vocab as u32)));
            p
        };
        let parametric = prompt(&mut r, 1);
        let relevant = prompt(&mut r, 2);
        let irrelevant = prompt(&mut r, 3);
        for base in [&parametric, &relevant, &irrelevant] {
            let mut frontier = vec![base.clone()];
            for _ in 0..steps {
                let mut next = Vec::new();
                for prefix in frontier {
                    model.insert(prefix.clone(), random_logits(&mut r, vocab, 4.0)).unwrap();
                    for t in 1..vocab as u32 {
                        let mut p = prefix.clone();
                        p.push(t);
                        next.push(p);
                    }
                }
                frontier = next;
            }
        }
        RandomScript {
            model,
            parametric,
            relevant,
            irrelevant,
            steps,
        }
    }

    pub fn prompts(&self, relevant: &[u32], irrelevant: &[u32]) -> BranchPrompts {
        BranchPrompts::new(self.model.vocab())
            .with(Branch::Parametric, TokenSequence::new(self.parametric.clone()))
            .with(Branch::Relevant, TokenSequence::new(relevant.to_vec()))
            .with(Branch::Irrelevant, TokenSequence::new(irrelevant.to_vec()))
    }

    pub fn run(&self, strategy: DecodeStrategy, relevant: &[u32], irrelevant: &[u32]) -> Vec<u32> {
        let limits = DecodeLimits {
            max_new_tokens: self.steps,
            stop_strings: vec![],
        };
        decode(&strategy, &self.prompts(relevant, irrelevant), &self.model, &limits)
            .unwrap()
            .tokens
            .into_inner()
    }
}

/// Vocabulary {0, 1, eos=2}; every branch sees a fixed vector regardless of
/// what was generated. Returns the first token chosen by ours-fixed at `alpha`.
pub fn two_token_choice(z: [f64; 2], zp: [f64; 2], zm: [f64; 2], alpha: f64) -> u32 {
    let info = VocabInfo::new(3, 2).unwrap();
    let mut m = ScriptedModel::new(info, vec!["A".into(), "B".into(), String::new()]).unwrap();
    let low = -1e3;
    m.insert(vec![0], vec![z[0], z[1], low]).unwrap();
    m.insert(vec![1], vec![zp[0], zp[1], low]).unwrap();
    m.insert(vec![0, 0], vec![zm[0], zm[1], low]).unwrap();
    let prompts = BranchPrompts::new(info)
        .with(Branch::Parametric, TokenSequence::new(vec![0]))
        .with(Branch::Relevant, TokenSequence::new(vec![1]))
        .with(Branch::Irrelevant, TokenSequence::new(vec![0, 0]));
    let limits = DecodeLimits {
        max_new_tokens: 1,
        stop_strings: vec![],
    };
    let strategy = DecodeStrategy::ContrastiveFixed { alpha };
    decode(&strategy, &prompts, &m, &limits).unwrap().tokens.ids()[0]
}

/// Smallest alpha in `[0, hi]` at which the first choice becomes token 1,
/// located by bisection to `tol`.
pub fn bisect_flip(a: f64, b: f64, hi: f64, tol: f64) -> f64 {
    let flipped = |alpha: f64| two_token_choice([a, 0.0], [0.0, b], [a, 0.0], alpha) == 1;
    assert!(!flipped(0.0) && flipped(hi));
    let (mut lo, mut hi) = (0.0f64, hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if flipped(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

// ---- retrieval ------------------------------------------------------------

pub fn oracle_terms(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.to_lowercase().chars() {
        if c.is_alphanumeric() {
            cur.push(c);
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Exhaustive Okapi BM25 over every passage, distinct query terms in sorted
/// order, positive scores only, ranked by score then id.
pub fn bm25_oracle(corpus: &[Passage], query: &str, k: usize, k1: f64, b: f64) -> Vec<(String, f64)> {
    let docs: Vec<Vec<String>> = corpus.iter().map(|p| oracle_terms(&p.text)).collect();
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.len() as f64).sum::<f64>() / n;
    let terms: BTreeSet<String> = oracle_terms(query).into_iter().collect();
    let mut scored: Vec<(String, f64)> = Vec::new();
    for (p, doc) in corpus.iter().zip(&docs) {
        let mut score = 0.0;
        let mut hit = false;
        for t in &terms {
            let tf = doc.iter().filter(|w| *w == t).count() as f64;
            if tf == 0.0 {
                continue;
            }
            hit = true;
            let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            score += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * doc.len() as f64 / avgdl));
        }
        if hit && score > 0.0 {
            scored.push((p.id.clone(), score));
        }
    }
    scored.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
    scored.truncate(k);
    scored
}

/// Sparse TF-IDF vectors, `tf * (ln((1+N)/(1+df)) + 1)`, L2-normalized.
pub struct TfidfOracle {
    n: f64,
    df: BTreeMap<String, usize>,
}

impl TfidfOracle {
    pub fn new(corpus: &[Passage]) -> Self {
        let mut df = BTreeMap::new();
        for p in corpus {
            let uniq: BTreeSet<String> = oracle_terms(&p.text).into_iter().collect();
            for t in uniq {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        TfidfOracle {
            n: corpus.len() as f64,
            df,
        }
    }

    pub fn vector(&self, text: &str) -> BTreeMap<String, f64> {
        let mut tf: BTreeMap<String, f64> = BTreeMap::new();
        for t in oracle_terms(text) {
            if self.df.contains_key(&t) {
                *tf.entry(t).or_insert(0.0) += 1.0;
            }
        }
        let mut v: BTreeMap<String, f64> = tf
            .into_iter()
            .map(|(t, c)| {
                let idf = ((1.0 + self.n) / (1.0 + self.df[&t] as f64)).ln() + 1.0;
                (t, c * idf)
            })
            .collect();
        let norm = v.values().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in v.values_mut() {
                *x /= norm;
            }
        }
        v
    }

    pub fn cosine(&self, a: &str, b: &str) -> f64 {
        let (va, vb) = (self.vector(a), self.vector(b));
        va.iter().map(|(t, x)| x * vb.get(t).unwrap_or(&0.0)).sum()
    }
}

pub const LEXICON: &[&str] = &[
    "river", "stone", "castle", "harbor", "violin", "maple", "orbit", "copper", "lantern", "meadow",
    "falcon", "glacier", "ember", "willow", "quartz", "canyon", "pepper", "signal", "thunder", "velvet",
    "anchor", "bridge", "cedar", "dune", "engine", "fable", "garnet", "hollow", "island", "jasmine",
];

/// Up to `max_docs` passages of 3..=25 lexicon words with occasional
/// punctuation and capitals.
pub fn random_corpus(r: &mut ChaCha8Rng, max_docs: usize, lexicon: usize) -> Vec<Passage> {
    let n = r.gen_range(1..=max_docs);
    (0..n)
        .map(|i| {
            let len = r.gen_range(3..=25);
            let words: Vec<String> = (0..len)
                .map(|_| {
                    let w = LEXICON[r.gen_range(0..lexicon)];
                    match r.gen_range(0..10) {
                        0 => w.to_uppercase(),
                        1 => format!("{w},"),
                        _ => w.to_string(),
                    }
                })
                .collect();
            Passage::new(format!("d{i:03}"), "", words.join(" "))
        })
        .collect()
}

pub fn random_query(r: &mut ChaCha8Rng, lexicon: usize) -> String {
    let len = r.gen_range(1..=4);
    let mut words: Vec<&str> = (0..len).map(|_| LEXICON[r.gen_range(0..lexicon)]).collect();
    if r.gen_bool(0.2) {
        words.push("zzzunknown");
    }
    words.join(" ")
}

// ---- evaluation -----------------------------------------------------------

/// SQuAD normalization written with regexes, as in the reference script.
pub fn normalize_oracle(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_punc: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    let articles = regex::Regex::new(r"\b(a|an|the)\b").unwrap();
    let no_art = articles.replace_all(&no_punc, " ");
    no_art.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// (prediction, answers) pairs for the EM suite, the listed examples first.
pub fn em_vectors() -> Vec<(&'static str, Vec<&'static str>)> {
    vec![
        ("Nanjing", vec!["Nanjing"]),
        ("nanjing.", vec!["Nanjing"]),
        ("Taipei", vec!["Nanjing"]),
        ("The Beatles!", vec!["beatles"]),
        ("", vec![""]),
        ("a  an the", vec![""]),
        ("the the", vec!["a"]),
        ("An Apple", vec!["apple"]),
        ("an apple pie", vec!["apple"]),
        ("Theory", vec!["ory"]),
        ("  New   York  City ", vec!["new york city"]),
        ("U.S.A.", vec!["usa"]),
        ("U.S.A.", vec!["u s a"]),
        ("rock-n-roll", vec!["rocknroll"]),
        ("1,000", vec!["1000"]),
        ("1,000", vec!["1 000"]),
        ("Zürich", vec!["zürich"]),
        ("ÉCOLE", vec!["école"]),
        ("the—x", vec!["—x"]),
        ("Paris", vec!["Lyon", "paris"]),
        ("Paris", vec!["Lyon", "Rome"]),
        ("a\tthe\nan", vec![""]),
        ("cat's", vec!["cats"]),
        ("The Who", vec!["who"]),
        ("apple_the", vec!["apple_the"]),
    ]
}

/// A QA record whose context mentions `entity` `times` times.
pub fn conflict_record(i: usize, entity: &str, times: usize, r: &mut ChaCha8Rng) -> QaRecord {
    let fillers = ["It rained.", "Many people came.", "The road was long.", "Nobody knew why."];
    let mut parts: Vec<String> = Vec::new();
    for k in 0..times {
        parts.push(format!("Report {k} names {entity} here."));
        parts.push(fillers.choose(r).unwrap().to_string());
    }
    let context = parts.join(" ");
    let byte = context.find(entity).unwrap();
    let start = context[..byte].chars().count();
    QaRecord {
        id: format!("c{i:03}"),
        question: format!("Who is mentioned in report {i}?"),
        answers: vec![entity.to_string()],
        gold_context: Some(context),
        entity_popularity: Some(r.gen_range(0..1_000_000)),
        answer_entity_span: Some((start, start + entity.chars().count())),
    }
}

/// `n` records over distinct generated entity names.
pub fn conflict_dataset(seed: u64, n: usize) -> Vec<QaRecord> {
    let mut r = rng(seed);
    let syll = ["ka", "lo", "mi", "ru", "te", "zo", "vi", "na", "pe", "su", "do", "ri"];
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    while out.len() < n {
        let k = r.gen_range(2..=4);
        let mut name: String = (0..k).map(|_| *syll.choose(&mut r).unwrap()).collect();
        name[..1].make_ascii_uppercase();
        if !seen.insert(name.clone()) {
            continue;
        }
        let times = r.gen_range(1..=3);
        out.push(conflict_record(out.len(), &name, times, &mut r));
    }
    out
}

// ---- shipped synthetic world ------------------------------------------------

pub fn synthetic_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic")
}

/// Pipeline over the shipped synthetic world with its shipped run config,
/// the corpus path resolved against the workspace.
pub fn synthetic_pipeline() -> mcdecode::Pipeline {
    use mcdecode::synthetic::{CONFIG_FILE, CORPUS_FILE};
    let dir = synthetic_dir();
    let mut config = mcdecode::RunConfig::load(dir.join(CONFIG_FILE)).unwrap();
    config.backend.spec = format!("ngram:{}", dir.join(CORPUS_FILE).display());
    mcdecode::Pipeline::from_config(config).unwrap()
}

pub fn synthetic_split(file: &str) -> Vec<QaRecord> {
    mcdecode::evaluation::read_dataset(synthetic_dir().join(file)).unwrap()
}
