use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use super::{
    extract_prediction, matched_answer, popularity_bucket, write_atomic, ItemResult, QaRecord,
    ReportFile, RunReport,
};
use crate::backend::{load_backend, LanguageModel, TokenSequence};
use crate::config::{EmbedderKind, RunConfig};
use crate::context::{candidate_pool, derive_seed, select_irrelevant, select_relevant};
use crate::decoding::trace::{write_jsonl, TraceHeader};
use crate::decoding::{decode, Branch, BranchPrompts, DecodeResult, DecodeStrategy};
use crate::error::{Error, Result};
use crate::prompting::{read_shots, select_shots, FewShotExample, PromptMode};
use crate::retrieval::{Embedder, Index, Passage, RemoteEmbedder, TfidfEmbedder};

/// Everything a batch run needs besides the dataset.
pub struct Pipeline {
    pub backend: Arc<dyn LanguageModel>,
    pub index: Option<Index>,
    pub embedder: Option<Arc<dyn Embedder>>,
    /// Demonstrations before selection; `config.num_shots` of them are used.
    pub shots: Vec<FewShotExample>,
    pub config: RunConfig,
}

/// Errors are stored as strings so a failed branch can be shared by every
/// strategy that needs it.
type Shared<T> = std::result::Result<T, String>;

fn shared<T>(r: Result<T>) -> Shared<T> {
    r.map_err(|e| format!("{}: {e}", e.category()))
}

/// One strategy's output from [`Pipeline::ask`].
#[derive(Debug, Clone)]
pub struct Answer {
    pub strategy: DecodeStrategy,
    /// First line of the generation, trimmed.
    pub prediction: String,
    pub result: DecodeResult,
}

/// The contexts used by [`Pipeline::ask`] and each strategy's answer.
#[derive(Debug, Clone)]
pub struct AskOutput {
    pub relevant: Option<Passage>,
    pub irrelevant: Option<Passage>,
    pub answers: Vec<Answer>,
}

impl Pipeline {
    /// Loads the backend, index, embedder, and shots named by `config`.
    pub fn from_config(config: RunConfig) -> Result<Pipeline> {
        config.validate()?;
        let backend = load_backend(&config.backend.spec, &config.backend.ngram)?;
        let index = config.index.as_ref().map(Index::open).transpose()?;
        let embedder: Option<Arc<dyn Embedder>> = match (config.embedder.kind, &index) {
            (EmbedderKind::Remote, _) => {
                let url = config.embedder.url.as_deref().expect("validated");
                Some(Arc::new(RemoteEmbedder::new(url)?))
            }
            (EmbedderKind::Tfidf, Some(index)) => Some(Arc::new(TfidfEmbedder::from_index(index))),
            (EmbedderKind::Tfidf, None) => None,
        };
        let shots = match &config.shots {
            Some(path) => read_shots(path)?,
            None => Vec::new(),
        };
        Ok(Pipeline {
            backend,
            index,
            embedder,
            shots,
            config,
        })
    }

    /// Answers one question under every configured strategy. `relevant` and
    /// `irrelevant` replace the selected contexts when given.
    pub fn ask(&self, question: &str, relevant: Option<&str>, irrelevant: Option<&str>) -> Result<AskOutput> {
        self.config.validate()?;
        let strategies = self.config.parsed_strategies()?;
        let shots = select_shots(&self.shots, self.config.num_shots, self.config.shot_seed);
        let needs = |b: Branch| strategies.iter().any(|s| s.needs(b));
        let gold = relevant.map(|text| Passage::new("ask#relevant", "", text));

        let c_plus = if needs(Branch::Relevant) || (needs(Branch::Irrelevant) && irrelevant.is_none()) {
            Some(select_relevant(question, self.index.as_ref(), gold.as_ref())?)
        } else {
            None
        };
        let c_minus = match (needs(Branch::Irrelevant), irrelevant) {
            (false, _) => None,
            (true, Some(text)) => Some(Passage::new("ask#irrelevant", "", text)),
            (true, None) => {
                let c_plus = c_plus.as_ref().expect("selected above");
                let pool = match (self.config.irrelevant.uses_pool(), self.index.as_ref()) {
                    (true, Some(index)) => candidate_pool(index, question, self.config.pool_size)?,
                    (true, None) => return Err(Error::EmptyPool),
                    (false, _) => Vec::new(),
                };
                Some(select_irrelevant(
                    self.config.irrelevant,
                    c_plus,
                    &pool,
                    self.embedder.as_deref(),
                    derive_seed(self.config.seed, 0),
                )?)
            }
        };

        let mut prompts = BranchPrompts::new(self.backend.vocab());
        if needs(Branch::Parametric) {
            prompts = prompts.with(Branch::Parametric, self.prompt(PromptMode::Closed, question, None, &shots)?);
        }
        for (branch, passage) in [(Branch::Relevant, &c_plus), (Branch::Irrelevant, &c_minus)] {
            if let (true, Some(p)) = (needs(branch), passage) {
                prompts = prompts.with(branch, self.prompt(PromptMode::Open, question, Some(&p.text), &shots)?);
            }
        }
        let answers = strategies
            .into_iter()
            .map(|strategy| {
                let result = decode(&strategy, &prompts, self.backend.as_ref(), &self.config.limits)?;
                Ok(Answer {
                    strategy,
                    prediction: extract_prediction(&result.text).to_string(),
                    result,
                })
            })
            .collect::<Result<_>>()?;
        Ok(AskOutput {
            relevant: c_plus,
            irrelevant: c_minus,
            answers,
        })
    }

    fn gold_passage(record: &QaRecord) -> Option<Passage> {
        record
            .gold_context
            .as_ref()
            .map(|ctx| Passage::new(format!("{}#gold", record.id), "", ctx.clone()))
    }

    fn prompt(&self, mode: PromptMode, question: &str, context: Option<&str>, shots: &[FewShotExample]) -> Result<TokenSequence> {
        let text = self.config.templates.render(mode, question, context, shots)?;
        self.backend.tokenize(&text)
    }

    fn run_item(
        &self,
        ordinal: usize,
        record: &QaRecord,
        strategies: &[DecodeStrategy],
        shots: &[FewShotExample],
    ) -> Vec<ItemResult> {
        let seed = derive_seed(self.config.seed, ordinal as u64);
        let needs = |b: Branch| strategies.iter().any(|s| s.needs(b));
        let gold = Self::gold_passage(record);

        let relevant: Option<Shared<Passage>> = (needs(Branch::Relevant) || needs(Branch::Irrelevant))
            .then(|| shared(select_relevant(&record.question, self.index.as_ref(), gold.as_ref())));
        let irrelevant: Option<Shared<Passage>> = needs(Branch::Irrelevant).then(|| {
            let c_plus = relevant.clone().expect("computed above")?;
            let strategy = self.config.irrelevant;
            let pool = match (strategy.uses_pool(), self.index.as_ref()) {
                (true, Some(index)) => {
                    shared(candidate_pool(index, &record.question, self.config.pool_size))?
                }
                (true, None) => return shared(Err(Error::EmptyPool)),
                (false, _) => Vec::new(),
            };
            shared(select_irrelevant(
                strategy,
                &c_plus,
                &pool,
                self.embedder.as_deref(),
                seed,
            ))
        });

        let parametric_ids = needs(Branch::Parametric)
            .then(|| shared(self.prompt(PromptMode::Closed, &record.question, None, shots)));
        let open_ids = |p: &Option<Shared<Passage>>| {
            p.as_ref().map(|p| {
                let p = p.clone()?;
                shared(self.prompt(PromptMode::Open, &record.question, Some(&p.text), shots))
            })
        };
        let relevant_ids = open_ids(&relevant);
        let irrelevant_ids = open_ids(&irrelevant);

        let bucket = record
            .entity_popularity
            .map(|v| popularity_bucket(v).label());
        let vocab = self.backend.vocab();

        strategies
            .iter()
            .map(|strategy| {
                let outcome = (|| -> Shared<(String, Option<String>)> {
                    let mut prompts = BranchPrompts::new(vocab);
                    for (branch, ids) in [
                        (Branch::Parametric, &parametric_ids),
                        (Branch::Relevant, &relevant_ids),
                        (Branch::Irrelevant, &irrelevant_ids),
                    ] {
                        if strategy.needs(branch) {
                            let ids = ids.clone().expect("computed for needed branch")?;
                            prompts = prompts.with(branch, ids);
                        }
                    }
                    let result = shared(decode(strategy, &prompts, self.backend.as_ref(), &self.config.limits))?;
                    let traces_path = match &self.config.output.traces_dir {
                        Some(dir) => {
                            let path = trace_path(dir, strategy, ordinal, &record.id);
                            let header = TraceHeader::new(strategy, &self.backend.descriptor().identity, &prompts);
                            let mut buf = Vec::new();
                            shared(write_jsonl(&mut buf, &header, &result.traces))?;
                            shared(write_atomic(&path, &buf))?;
                            Some(path.to_string_lossy().into_owned())
                        }
                        None => None,
                    };
                    Ok((result.text, traces_path))
                })();
                match outcome {
                    Ok((text, traces_path)) => {
                        let prediction = extract_prediction(&text).to_string();
                        ItemResult {
                            id: record.id.clone(),
                            matched_answer: matched_answer(&prediction, &record.answers).map(String::from),
                            prediction,
                            traces_path,
                            error: None,
                            bucket: bucket.clone(),
                        }
                    }
                    Err(error) => ItemResult {
                        id: record.id.clone(),
                        prediction: String::new(),
                        matched_answer: None,
                        traces_path: None,
                        error: Some(error),
                        bucket: bucket.clone(),
                    },
                }
            })
            .collect()
    }

    /// Decodes every record under every configured strategy.
    ///
    /// Items run on `config.workers` threads; reports are assembled in dataset
    /// order, so the output does not depend on scheduling.
    pub fn run(&self, dataset: &[QaRecord]) -> Result<Vec<RunReport>> {
        self.config.validate()?;
        let strategies = self.config.parsed_strategies()?;
        let shots = select_shots(&self.shots, self.config.num_shots, self.config.shot_seed);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        let per_item: Vec<Vec<ItemResult>> = pool.install(|| {
            dataset
                .par_iter()
                .enumerate()
                .map(|(i, record)| self.run_item(i, record, &strategies, &shots))
                .collect()
        });
        Ok(strategies
            .iter()
            .enumerate()
            .map(|(s, strategy)| {
                let items = per_item.iter().map(|row| row[s].clone()).collect();
                RunReport::from_items(*strategy, items, self.config.exclude_errored)
            })
            .collect())
    }

    /// Runs and wraps the reports with the resolved config.
    pub fn run_to_file(&self, dataset: &[QaRecord]) -> Result<ReportFile> {
        let reports = self.run(dataset)?;
        Ok(ReportFile {
            config: self.config.clone(),
            backend: self.backend.descriptor().identity.clone(),
            embedder: self.embedder.as_ref().map(|e| e.identity()),
            prediction_rule: "first_line_trimmed".to_string(),
            reports,
        })
    }
}

fn trace_path(dir: &Path, strategy: &DecodeStrategy, ordinal: usize, id: &str) -> PathBuf {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    dir.join(strategy.name()).join(format!("{ordinal:05}-{safe}.jsonl"))
}

/// Convenience wrapper over [`Pipeline::run`].
pub fn run_eval(pipeline: &Pipeline, dataset: &[QaRecord]) -> Result<Vec<RunReport>> {
    pipeline.run(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedModel;

    /// Char-level model that answers "ab" then eos whatever the prompt.
    fn answering_model() -> Arc<dyn LanguageModel> {
        let inner = ScriptedModel::char_level(
            "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 .:?!,'\n",
        )
        .unwrap();
        let a = inner.token_table().id("a").unwrap();
        let b = inner.token_table().id("b").unwrap();
        Arc::new(ScriptedAnswer { inner, a, b })
    }

    struct ScriptedAnswer {
        inner: ScriptedModel,
        a: u32,
        b: u32,
    }

    impl LanguageModel for ScriptedAnswer {
        fn descriptor(&self) -> &crate::backend::BackendDescriptor {
            self.inner.descriptor()
        }
        fn max_context(&self) -> Option<usize> {
            None
        }
        fn tokenize(&self, text: &str) -> Result<TokenSequence> {
            self.inner.tokenize(text)
        }
        fn detokenize(&self, tokens: &[u32]) -> Result<String> {
            self.inner.detokenize(tokens)
        }
        fn next_logits(&self, _prefix: &[u32]) -> Result<crate::backend::LogitVector> {
            unreachable!("step_logits is overridden")
        }
        fn step_logits(&self, _prompt: &[u32], generated: &[u32]) -> Result<crate::backend::LogitVector> {
            let v = self.vocab();
            let next = match generated.len() {
                0 => self.a,
                1 => self.b,
                _ => v.eos_id,
            };
            let mut z = vec![0.0; v.size];
            z[next as usize] = 10.0;
            crate::backend::LogitVector::new(z)
        }
    }

    fn record(id: &str, answers: &[&str]) -> QaRecord {
        QaRecord {
            id: id.into(),
            question: "what?".into(),
            answers: answers.iter().map(|s| s.to_string()).collect(),
            gold_context: Some("some context".into()),
            entity_popularity: Some(500),
            answer_entity_span: None,
        }
    }

    fn pipeline(strategies: &[&str]) -> Pipeline {
        Pipeline {
            backend: answering_model(),
            index: None,
            embedder: None,
            shots: vec![],
            config: RunConfig {
                strategies: strategies.iter().map(|s| s.to_string()).collect(),
                ..Default::default()
            },
        }
    }

    #[test]
    fn certain_answer_scores_one() {
        let p = pipeline(&["reg-closed", "ours-fixed"]);
        let reports = run_eval(&p, &[record("1", &["AB"])]).unwrap();
        assert_eq!(reports.len(), 2);
        for r in &reports {
            assert_eq!(r.em, Some(1.0), "{r:?}");
            assert_eq!(r.items[0].prediction, "ab");
            assert!(r.per_bucket_em.contains_key("10^2\u{2013}10^3"));
        }
    }

    #[test]
    fn empty_dataset_is_flagged() {
        let reports = run_eval(&pipeline(&["reg-closed"]), &[]).unwrap();
        assert_eq!(reports[0].em, None);
        assert_eq!(reports[0].flag.as_deref(), Some("no items"));
    }

    #[test]
    fn missing_context_errors_only_context_strategies() {
        let mut rec = record("1", &["ab"]);
        rec.gold_context = None;
        let reports = run_eval(&pipeline(&["reg-closed", "reg-open"]), &[rec]).unwrap();
        assert_eq!(reports[0].em, Some(1.0));
        assert_eq!(reports[1].em, Some(0.0));
        assert!(reports[1].items[0].error.as_deref().unwrap().contains("retrieval"));
    }

    #[test]
    fn workers_do_not_change_reports() {
        let data: Vec<_> = (0..12).map(|i| record(&i.to_string(), &["ab", "x"])).collect();
        let mut p = pipeline(&["reg-closed", "cad", "ours-dynamic"]);
        let serial = run_eval(&p, &data).unwrap();
        p.config.workers = 4;
        assert_eq!(run_eval(&p, &data).unwrap(), serial);
    }

    #[test]
    fn ask_uses_context_overrides() {
        let p = pipeline(&["reg-closed", "ours-fixed"]);
        let out = p.ask("what?", Some("ctx"), Some("noise")).unwrap();
        assert_eq!(out.relevant.unwrap().text, "ctx");
        assert_eq!(out.irrelevant.unwrap().text, "noise");
        assert_eq!(out.answers.len(), 2);
        assert!(out.answers.iter().all(|a| a.prediction == "ab" && a.result.traces.len() == 3));
        let closed = pipeline(&["reg-closed"]).ask("what?", None, None).unwrap();
        assert!(closed.relevant.is_none());
        assert!(pipeline(&["reg-open"]).ask("what?", None, None).is_err());
    }

    #[test]
    fn traces_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = pipeline(&["ours-fixed"]);
        p.config.output.traces_dir = Some(dir.path().to_path_buf());
        let reports = run_eval(&p, &[record("q/1", &["ab"])]).unwrap();
        let path = reports[0].items[0].traces_path.clone().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let (header, rows) = crate::decoding::trace::read_jsonl(&text).unwrap();
        assert_eq!(header.strategy, "ours-fixed(alpha=1)");
        assert_eq!(rows.len(), 3);
        assert!(path.ends_with("00000-q_1.jsonl"));
    }
}
