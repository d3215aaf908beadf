use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::server::wire;
use super::{BackendDescriptor, BackendKind, LanguageModel, LogitVector, TokenSequence, VocabInfo};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_CONTEXT: usize = 4096;

/// Client for a server speaking the logits wire protocol.
///
/// The vocabulary is fixed at connection time from `GET /v1/meta`; any
/// later response disagreeing with it fails with `VocabMismatch`.
#[derive(Debug, Clone)]
pub struct RemoteModel {
    base: String,
    client: Client,
    descriptor: BackendDescriptor,
    max_context: usize,
    encoder_decoder: bool,
}

impl RemoteModel {
    pub fn connect(base_url: &str) -> Result<Self> {
        let base = base_url.trim_end_matches('/').to_string();
        let client = Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::RemoteUnavailable(e.to_string()))?;
        let resp = client
            .get(format!("{base}/v1/meta"))
            .send()
            .map_err(|e| Error::RemoteUnavailable(format!("{base}: {e}")))?;
        let meta: wire::Meta = decode(resp, &base)?;
        let vocab = VocabInfo {
            size: meta.vocab_size,
            eos_id: meta.eos_id,
            pad_id: None,
        };
        vocab
            .validate()
            .map_err(|e| Error::RemoteUnavailable(format!("bad /v1/meta: {e}")))?;
        Ok(RemoteModel {
            descriptor: BackendDescriptor {
                kind: BackendKind::Remote,
                vocab,
                identity: format!("remote:{base}:{}", meta.model_id),
            },
            base,
            client,
            max_context: meta.max_context.unwrap_or(DEFAULT_MAX_CONTEXT),
            encoder_decoder: meta.architecture.as_deref() == Some("encoder-decoder"),
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R> {
        let url = format!("{}{path}", self.base);
        let resp = self
            .client
            .post(&url)
            .json(body)
            .send()
            .map_err(|e| Error::RemoteUnavailable(format!("{url}: {e}")))?;
        decode(resp, &url)
    }

    fn logits(&self, ids: &[u32], decoder_ids: Option<&[u32]>) -> Result<LogitVector> {
        let total = ids.len() + decoder_ids.map_or(0, <[u32]>::len);
        if total > self.max_context {
            return Err(Error::PrefixTooLong {
                len: total,
                max: self.max_context,
            });
        }
        self.descriptor.vocab.check_ids(ids)?;
        if let Some(d) = decoder_ids {
            self.descriptor.vocab.check_ids(d)?;
        }
        let resp: wire::LogitsResponse = self.post(
            "/v1/logits",
            &wire::LogitsRequest {
                ids: ids.to_vec(),
                decoder_ids: decoder_ids.map(<[u32]>::to_vec),
            },
        )?;
        let vocab = self.descriptor.vocab;
        if resp.logits.len() != vocab.size {
            return Err(Error::VocabMismatch {
                expected_size: vocab.size,
                expected_eos: vocab.eos_id,
                got_size: resp.logits.len(),
                got_eos: vocab.eos_id,
            });
        }
        LogitVector::new(resp.logits)
    }
}

fn decode<R: DeserializeOwned>(resp: reqwest::blocking::Response, url: &str) -> Result<R> {
    let status = resp.status();
    if status == StatusCode::PAYLOAD_TOO_LARGE {
        let body: wire::ErrorBody = resp
            .json()
            .map_err(|e| Error::RemoteUnavailable(format!("{url}: {e}")))?;
        return Err(Error::PrefixTooLong {
            len: body.len.unwrap_or(0),
            max: body.max.unwrap_or(0),
        });
    }
    if !status.is_success() {
        let text = resp.text().unwrap_or_default();
        return Err(Error::RemoteUnavailable(format!("{url}: HTTP {status}: {text}")));
    }
    resp.json()
        .map_err(|e| Error::RemoteUnavailable(format!("{url}: malformed response: {e}")))
}

impl LanguageModel for RemoteModel {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn max_context(&self) -> Option<usize> {
        Some(self.max_context)
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        let resp: wire::TokenizeResponse = self.post(
            "/v1/tokenize",
            &wire::TokenizeRequest {
                text: text.to_string(),
            },
        )?;
        Ok(resp.ids.into())
    }

    fn detokenize(&self, tokens: &[u32]) -> Result<String> {
        self.descriptor.vocab.check_ids(tokens)?;
        let resp: wire::DetokenizeResponse = self.post(
            "/v1/detokenize",
            &wire::DetokenizeRequest {
                ids: tokens.to_vec(),
            },
        )?;
        Ok(resp.text)
    }

    fn next_logits(&self, prefix: &[u32]) -> Result<LogitVector> {
        self.logits(prefix, None)
    }

    fn step_logits(&self, prompt: &[u32], generated: &[u32]) -> Result<LogitVector> {
        if self.encoder_decoder {
            self.logits(prompt, Some(generated))
        } else {
            let mut ids = prompt.to_vec();
            ids.extend_from_slice(generated);
            self.logits(&ids, None)
        }
    }
}
