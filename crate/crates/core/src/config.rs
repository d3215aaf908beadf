//! Run configuration, loadable from TOML.
//!
//! Every field has a default, so a config file only lists what it changes.
//! The resolved config is embedded verbatim in every report.
//!
//! ```toml
//! seed = 7
//! strategies = ["reg-closed", "ours-fixed"]
//!
//! [backend]
//! spec = "ngram:data/synthetic/stale_corpus.txt"
//! [backend.ngram]
//! order = 7
//! granularity = "word"
//! cache_bonus = 2.0
//!
//! [limits]
//! max_new_tokens = 32
//! stop_strings = ["\n"]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::NgramConfig;
use crate::context::{IrrelevantStrategy, DEFAULT_POOL_SIZE};
use crate::decoding::{DecodeLimits, DecodeStrategy};
use crate::error::{Error, Result};
use crate::prompting::{PromptTemplates, DEFAULT_SHOTS};

/// Environment variable overriding the backend endpoint.
pub const BACKEND_ENV: &str = "MCDECODE_BACKEND";
/// Environment variable overriding the remote embedder endpoint.
pub const EMBEDDER_URL_ENV: &str = "MCDECODE_EMBEDDER_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// `scripted:<file>`, `ngram:<corpus>`, or `remote:<url>`.
    pub spec: String,
    pub ngram: NgramConfig,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            spec: String::new(),
            ngram: NgramConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Tfidf,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub report: Option<PathBuf>,
    /// Directory for per-item JSONL traces; none are written when unset.
    pub traces_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendConfig,
    pub index: Option<PathBuf>,
    pub strategies: Vec<String>,
    /// Overrides the default alpha of `cad` and `ours-fixed`.
    pub alpha: Option<f64>,
    pub irrelevant: IrrelevantStrategy,
    pub pool_size: usize,
    pub embedder: EmbedderConfig,
    pub shots: Option<PathBuf>,
    pub num_shots: usize,
    /// Seeded shot sampling; the first `num_shots` are used when unset.
    pub shot_seed: Option<u64>,
    pub seed: u64,
    pub limits: DecodeLimits,
    pub templates: PromptTemplates,
    pub workers: usize,
    /// Any errored item makes the run fail.
    pub strict: bool,
    /// Leave errored items out of the EM denominator instead of counting them wrong.
    pub exclude_errored: bool,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backend: BackendConfig::default(),
            index: None,
            strategies: vec![
                "reg-closed".into(),
                "reg-open".into(),
                "cad".into(),
                "ours-fixed".into(),
                "ours-dynamic".into(),
            ],
            alpha: None,
            irrelevant: IrrelevantStrategy::default(),
            pool_size: DEFAULT_POOL_SIZE,
            embedder: EmbedderConfig::default(),
            shots: None,
            num_shots: DEFAULT_SHOTS,
            shot_seed: None,
            seed: 0,
            limits: DecodeLimits::default(),
            templates: PromptTemplates::default(),
            workers: 1,
            strict: false,
            exclude_errored: false,
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies endpoint overrides from the environment.
    pub fn apply_env(&mut self) {
        if let Ok(spec) = std::env::var(BACKEND_ENV) {
            if !spec.is_empty() {
                self.backend.spec = spec;
            }
        }
        if let Ok(url) = std::env::var(EMBEDDER_URL_ENV) {
            if !url.is_empty() {
                self.embedder.url = Some(url);
            }
        }
    }

    pub fn parsed_strategies(&self) -> Result<Vec<DecodeStrategy>> {
        self.strategies
            .iter()
            .map(|s| DecodeStrategy::parse_with_alpha(s.trim(), self.alpha))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.parsed_strategies()?;
        self.templates.validate()?;
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.embedder.kind == EmbedderKind::Remote && self.embedder.url.is_none() {
            return Err(Error::Config("remote embedder needs a url".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml(
            r#"
            seed = 9
            strategies = ["reg-closed", "cad"]
            alpha = 0.25
            irrelevant = "most_distant"
            [backend]
            spec = "ngram:corpus.txt"
            [backend.ngram]
            order = 5
            granularity = "word"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.backend.ngram.order, 5);
        assert_eq!(cfg.backend.ngram.cache_bonus, 0.0);
        assert_eq!(cfg.irrelevant, IrrelevantStrategy::MostDistant);
        assert_eq!(cfg.limits, DecodeLimits::default());
        assert_eq!(
            cfg.parsed_strategies().unwrap()[1],
            DecodeStrategy::Cad { alpha: 0.25 }
        );
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(RunConfig::from_toml("sed = 1").is_err());
        let bad = RunConfig {
            strategies: vec!["nope".into()],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
