use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report, grouped by the subsystem that raises it.
#[derive(Debug, Error)]
pub enum Error {
    // --- backends ---
    #[error("remote endpoint unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("prefix of {len} tokens exceeds the backend maximum context of {max}")]
    PrefixTooLong { len: usize, max: usize },
    #[error("vocabulary mismatch: expected size {expected_size} (eos {expected_eos}), got size {got_size} (eos {got_eos})")]
    VocabMismatch {
        expected_size: usize,
        expected_eos: u32,
        got_size: usize,
        got_eos: u32,
    },
    #[error("token id {id} outside vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },
    #[error("text cannot be tokenized: no vocabulary entry matches {0:?}")]
    Untokenizable(String),
    #[error("scripted backend has no entry covering prefix {0:?}")]
    ScriptMiss(Vec<u32>),
    #[error("invalid backend definition: {0}")]
    InvalidBackend(String),
    #[error("logit vector contains a non-finite entry at index {0}")]
    NonFiniteLogit(usize),

    // --- decoding ---
    #[error("logit vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("strategy {strategy} requires the {branch} branch prompt")]
    StrategyBranchMissing {
        strategy: &'static str,
        branch: &'static str,
    },
    #[error("alpha must be finite and non-negative, got {0}")]
    InvalidAlpha(f64),

    // --- retrieval ---
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("duplicate passage id {0:?}")]
    DuplicatePassageId(String),
    #[error("passage {0:?} has empty text")]
    EmptyPassage(String),
    #[error("query has no indexable terms")]
    EmptyQuery,
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("embedding vector is not unit-normalized")]
    NotNormalized,
    #[error("index format error: {0}")]
    IndexFormat(String),

    // --- context selection ---
    #[error("retrieval returned no hit and no gold context was provided")]
    NoRetrievalHit,
    #[error("candidate pool for irrelevant context is empty")]
    EmptyPool,
    #[error("embedder unavailable: {0}")]
    EmbedderUnavailable(String),

    // --- prompting ---
    #[error("open-book prompt requires a context")]
    MissingContext,
    #[error("few-shot example does not match prompt mode: {0}")]
    ShotModeMismatch(String),

    // --- evaluation / reports ---
    #[error("invalid record {id:?}: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("reports cover different item id sets")]
    DatasetMismatch,
    #[error("no valid substitute entity for record {0:?}")]
    PoolTooSmall(String),

    // --- io / formats ---
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Short category label used by the CLI when reporting a failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::RemoteUnavailable(_)
            | Error::PrefixTooLong { .. }
            | Error::VocabMismatch { .. }
            | Error::TokenOutOfRange { .. }
            | Error::Untokenizable(_)
            | Error::ScriptMiss(_)
            | Error::InvalidBackend(_)
            | Error::NonFiniteLogit(_) => "backend",
            Error::LengthMismatch(..)
            | Error::StrategyBranchMissing { .. }
            | Error::InvalidAlpha(_) => "decoding",
            Error::EmptyCorpus
            | Error::DuplicatePassageId(_)
            | Error::EmptyPassage(_)
            | Error::EmptyQuery
            | Error::DimensionMismatch(..)
            | Error::NotNormalized
            | Error::IndexFormat(_) => "retrieval",
            Error::NoRetrievalHit | Error::EmptyPool | Error::EmbedderUnavailable(_) => {
                "context"
            }
            Error::MissingContext | Error::ShotModeMismatch(_) => "prompting",
            Error::InvalidRecord { .. } | Error::DatasetMismatch | Error::PoolTooSmall(_) => {
                "evaluation"
            }
            Error::Io { .. } | Error::Json { .. } | Error::Config(_) => "io",
        }
    }
}
