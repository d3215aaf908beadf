use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde_json::{Map, Value};

use super::vocab::TokenTable;
use super::{
    check_prefix, BackendDescriptor, BackendKind, LanguageModel, LogitVector, TokenSequence,
    VocabInfo,
};
use crate::error::{Error, Result};

/// A lookup-table language model.
///
/// Each entry maps a token prefix to a logit vector. A query is answered by
/// the entry whose key is the longest prefix of the query, so the key `[]`
/// acts as a catch-all and the key `[7]` covers every continuation of `[7]`.
///
/// The definition file is a JSON object with `vocab_size`, `eos_id`, and one
/// member per entry keyed by the stringified id list (`"[0, 1]"`). Optional
/// members: `tokens` (surface string per id, used for tokenization by
/// greedy longest match), `unk_id`, `pad_id`, `max_context`.
#[derive(Debug, Clone)]
pub struct ScriptedModel {
    descriptor: BackendDescriptor,
    table: HashMap<Vec<u32>, LogitVector>,
    key_lengths: Vec<usize>,
    tokens: TokenTable,
    max_context: Option<usize>,
}

impl ScriptedModel {
    /// Creates a model whose token surfaces are `tokens` (one per id).
    pub fn new(vocab: VocabInfo, tokens: Vec<String>) -> Result<Self> {
        vocab.validate()?;
        if tokens.len() != vocab.size {
            return Err(Error::InvalidBackend(format!(
                "{} token surfaces for vocabulary of size {}",
                tokens.len(),
                vocab.size
            )));
        }
        Ok(ScriptedModel {
            descriptor: BackendDescriptor {
                kind: BackendKind::Scripted,
                vocab,
                identity: "scripted".into(),
            },
            table: HashMap::new(),
            key_lengths: Vec::new(),
            tokens: TokenTable::new(tokens, None),
            max_context: None,
        })
    }

    /// A model whose vocabulary is the given characters, in order, followed by
    /// an eos token with an empty surface.
    pub fn char_level(chars: &str) -> Result<Self> {
        let mut tokens: Vec<String> = chars.chars().map(String::from).collect();
        let eos = tokens.len() as u32;
        tokens.push(String::new());
        Self::new(VocabInfo::new(tokens.len(), eos)?, tokens)
    }

    /// Adds (or replaces) the entry for `prefix`.
    pub fn insert(&mut self, prefix: Vec<u32>, logits: Vec<f64>) -> Result<&mut Self> {
        let vocab = self.descriptor.vocab;
        vocab.check_ids(&prefix)?;
        if logits.len() != vocab.size {
            return Err(Error::InvalidBackend(format!(
                "entry {prefix:?} has {} logits for vocabulary of size {}",
                logits.len(),
                vocab.size
            )));
        }
        let logits = LogitVector::new(logits)?;
        if !self.key_lengths.contains(&prefix.len()) {
            self.key_lengths.push(prefix.len());
            self.key_lengths.sort_unstable_by(|a, b| b.cmp(a));
        }
        self.table.insert(prefix, logits);
        Ok(self)
    }

    pub fn with_identity(mut self, identity: impl Into<String>) -> Self {
        self.descriptor.identity = identity.into();
        self
    }

    pub fn with_max_context(mut self, max: Option<usize>) -> Self {
        self.max_context = max;
        self
    }

    pub fn token_table(&self) -> &TokenTable {
        &self.tokens
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model = Self::from_json(&text)?;
        Ok(model.with_identity(format!("scripted:{}", path.display())))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::json("scripted backend", e))?;
        let Value::Object(obj) = value else {
            return Err(Error::InvalidBackend("definition must be a JSON object".into()));
        };
        let vocab_size = get_usize(&obj, "vocab_size")?
            .ok_or_else(|| Error::InvalidBackend("missing vocab_size".into()))?;
        let eos_id = get_usize(&obj, "eos_id")?
            .ok_or_else(|| Error::InvalidBackend("missing eos_id".into()))?;
        let vocab = VocabInfo {
            size: vocab_size,
            eos_id: eos_id as u32,
            pad_id: get_usize(&obj, "pad_id")?.map(|p| p as u32),
        };
        vocab.validate()?;
        let tokens = match obj.get("tokens") {
            Some(v) => serde_json::from_value::<Vec<String>>(v.clone())
                .map_err(|e| Error::json("scripted backend tokens", e))?,
            None => (0..vocab_size)
                .map(|i| {
                    if i == eos_id {
                        String::new()
                    } else {
                        format!("<{i}>")
                    }
                })
                .collect(),
        };
        let mut model = Self::new(vocab, tokens)?;
        if let Some(unk) = get_usize(&obj, "unk_id")? {
            vocab.check_ids(&[unk as u32])?;
            model.tokens = TokenTable::new(
                (0..vocab_size)
                    .map(|i| model.tokens.surface(i as u32).unwrap_or("").to_string())
                    .collect(),
                Some(unk as u32),
            );
        }
        model.max_context = get_usize(&obj, "max_context")?;
        for (key, value) in &obj {
            if !key.trim_start().starts_with('[') {
                continue;
            }
            let prefix: Vec<u32> = serde_json::from_str(key)
                .map_err(|e| Error::json(format!("scripted prefix key {key:?}"), e))?;
            let logits: Vec<f64> = serde_json::from_value(value.clone())
                .map_err(|e| Error::json(format!("scripted logits for {key:?}"), e))?;
            model.insert(prefix, logits)?;
        }
        Ok(model)
    }

    /// Serializes back to the definition-file format.
    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        let vocab = self.descriptor.vocab;
        obj.insert("vocab_size".into(), vocab.size.into());
        obj.insert("eos_id".into(), vocab.eos_id.into());
        if let Some(pad) = vocab.pad_id {
            obj.insert("pad_id".into(), pad.into());
        }
        if let Some(max) = self.max_context {
            obj.insert("max_context".into(), max.into());
        }
        let surfaces: Vec<Value> = (0..vocab.size)
            .map(|i| self.tokens.surface(i as u32).unwrap_or("").into())
            .collect();
        obj.insert("tokens".into(), Value::Array(surfaces));
        if let Some(unk) = self.tokens.unk_id() {
            obj.insert("unk_id".into(), unk.into());
        }
        let keys: BTreeSet<&Vec<u32>> = self.table.keys().collect();
        for key in keys {
            let scores = self.table[key].scores().to_vec();
            obj.insert(
                serde_json::to_string(key).expect("id list serializes"),
                serde_json::to_value(scores).expect("finite floats serialize"),
            );
        }
        Value::Object(obj)
    }
}

fn get_usize(obj: &Map<String, Value>, key: &str) -> Result<Option<usize>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(|n| Some(n as usize))
            .ok_or_else(|| Error::InvalidBackend(format!("{key} must be a non-negative integer"))),
    }
}

impl LanguageModel for ScriptedModel {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn max_context(&self) -> Option<usize> {
        self.max_context
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        self.tokens.tokenize_longest(text).map(TokenSequence::new)
    }

    fn detokenize(&self, tokens: &[u32]) -> Result<String> {
        self.descriptor.vocab.check_ids(tokens)?;
        self.tokens.concat(tokens)
    }

    fn next_logits(&self, prefix: &[u32]) -> Result<LogitVector> {
        check_prefix(&self.descriptor.vocab, self.max_context, prefix)?;
        self.key_lengths
            .iter()
            .filter(|&&n| n <= prefix.len())
            .find_map(|&n| self.table.get(&prefix[..n]))
            .cloned()
            .ok_or_else(|| Error::ScriptMiss(prefix.to_vec()))
    }
}
