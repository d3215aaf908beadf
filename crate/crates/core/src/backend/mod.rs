//! Language-model backends.
//!
//! Every backend exposes the same four capabilities: tokenize, detokenize,
//! report its vocabulary, and produce the dense next-token logit vector for a
//! prefix. The decoding engine never looks past this trait.

mod ngram;
mod remote;
mod scripted;
pub mod server;
mod vocab;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use ngram::{Granularity, NgramConfig, NgramModel};
pub use remote::RemoteModel;
pub use scripted::ScriptedModel;
pub use vocab::TokenTable;

use crate::error::{Error, Result};

/// Vocabulary shape shared by every branch of a decode run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabInfo {
    pub size: usize,
    pub eos_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pad_id: Option<u32>,
}

impl VocabInfo {
    pub fn new(size: usize, eos_id: u32) -> Result<Self> {
        let info = VocabInfo {
            size,
            eos_id,
            pad_id: None,
        };
        info.validate()?;
        Ok(info)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::InvalidBackend("vocabulary size must be positive".into()));
        }
        if self.eos_id as usize >= self.size {
            return Err(Error::InvalidBackend(format!(
                "eos_id {} outside vocabulary of size {}",
                self.eos_id, self.size
            )));
        }
        if let Some(pad) = self.pad_id {
            if pad as usize >= self.size {
                return Err(Error::InvalidBackend(format!(
                    "pad_id {pad} outside vocabulary of size {}",
                    self.size
                )));
            }
        }
        Ok(())
    }

    /// Fails with [`Error::VocabMismatch`] unless `other` has the same size and eos id.
    pub fn ensure_same(&self, other: &VocabInfo) -> Result<()> {
        if self.size != other.size || self.eos_id != other.eos_id {
            return Err(Error::VocabMismatch {
                expected_size: self.size,
                expected_eos: self.eos_id,
                got_size: other.size,
                got_eos: other.eos_id,
            });
        }
        Ok(())
    }

    pub fn check_ids(&self, ids: &[u32]) -> Result<()> {
        match ids.iter().find(|&&id| id as usize >= self.size) {
            Some(&id) => Err(Error::TokenOutOfRange {
                id,
                size: self.size,
            }),
            None => Ok(()),
        }
    }
}

/// An ordered list of token ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<u32>);

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        TokenSequence(ids)
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, id: u32) {
        self.0.push(id);
    }

    pub fn into_inner(self) -> Vec<u32> {
        self.0
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(ids: Vec<u32>) -> Self {
        TokenSequence(ids)
    }
}

impl AsRef<[u32]> for TokenSequence {
    fn as_ref(&self) -> &[u32] {
        &self.0
    }
}

/// Raw next-token scores, one finite entry per vocabulary token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    /// Wraps `scores`, rejecting NaN and infinities.
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFiniteLogit(i));
        }
        Ok(LogitVector(scores))
    }

    pub(crate) fn from_finite(scores: Vec<f64>) -> Self {
        debug_assert!(scores.iter().all(|s| s.is_finite()));
        LogitVector(scores)
    }

    pub fn scores(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Scripted,
    Ngram,
    Remote,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Scripted => "scripted",
            BackendKind::Ngram => "ngram",
            BackendKind::Remote => "remote",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub vocab: VocabInfo,
    /// Opaque identity string written into run logs.
    pub identity: String,
}

/// A source of next-token logits.
///
/// Implementations must be safe for concurrent read-only use: several decode
/// runs may query one backend from different threads.
pub trait LanguageModel: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Maximum prefix length accepted by `next_logits`; `None` means unbounded.
    fn max_context(&self) -> Option<usize>;

    fn tokenize(&self, text: &str) -> Result<TokenSequence>;

    fn detokenize(&self, tokens: &[u32]) -> Result<String>;

    fn next_logits(&self, prefix: &[u32]) -> Result<LogitVector>;

    /// Logits for a branch whose prefix is `prompt` followed by `generated`.
    ///
    /// Decoder-only backends see the concatenation; encoder-decoder remotes
    /// send the two halves separately.
    fn step_logits(&self, prompt: &[u32], generated: &[u32]) -> Result<LogitVector> {
        let mut prefix = Vec::with_capacity(prompt.len() + generated.len());
        prefix.extend_from_slice(prompt);
        prefix.extend_from_slice(generated);
        self.next_logits(&prefix)
    }

    fn vocab(&self) -> VocabInfo {
        self.descriptor().vocab
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for Arc<T> {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }
    fn max_context(&self) -> Option<usize> {
        (**self).max_context()
    }
    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        (**self).tokenize(text)
    }
    fn detokenize(&self, tokens: &[u32]) -> Result<String> {
        (**self).detokenize(tokens)
    }
    fn next_logits(&self, prefix: &[u32]) -> Result<LogitVector> {
        (**self).next_logits(prefix)
    }
    fn step_logits(&self, prompt: &[u32], generated: &[u32]) -> Result<LogitVector> {
        (**self).step_logits(prompt, generated)
    }
}

/// Shared precondition checks for local backends.
pub(crate) fn check_prefix(vocab: &VocabInfo, max: Option<usize>, prefix: &[u32]) -> Result<()> {
    if let Some(max) = max {
        if prefix.len() > max {
            return Err(Error::PrefixTooLong {
                len: prefix.len(),
                max,
            });
        }
    }
    vocab.check_ids(prefix)
}

/// Parses a backend spec string: `scripted:<file>`, `ngram:<corpus>`, or
/// `remote:<url>`. N-gram settings other than the corpus come from `ngram`.
pub fn load_backend(spec: &str, ngram: &NgramConfig) -> Result<Arc<dyn LanguageModel>> {
    let (kind, target) = spec
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("backend spec {spec:?} must be <kind>:<target>")))?;
    Ok(match kind {
        "scripted" => Arc::new(ScriptedModel::from_file(target)?),
        "ngram" => {
            let text =
                std::fs::read_to_string(target).map_err(|e| Error::io(target, e))?;
            Arc::new(NgramModel::train(&text, ngram.clone())?)
        }
        "remote" => Arc::new(RemoteModel::connect(target)?),
        other => return Err(Error::Config(format!("unknown backend kind {other:?}"))),
    })
}
