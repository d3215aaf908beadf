//! Multi-input contrastive decoding for retrieval-augmented question answering.
//!
//! Three next-token distributions are queried per step: the question alone
//! (parametric), the question with a relevant passage, and the question with
//! an irrelevant passage. [`decoding::decode`] merges them as
//! `z + alpha * (z_relevant - z_irrelevant)` with a fixed or per-step alpha.
//!
//! The surrounding modules cover what a QA experiment needs: model backends,
//! BM25 retrieval, context selection, prompt rendering, exact-match scoring,
//! and knowledge-conflict set construction.

pub mod backend;
pub mod config;
pub mod conflict;
pub mod context;
pub mod decoding;
pub mod error;
pub mod evaluation;
pub mod prompting;
pub mod retrieval;
pub mod synthetic;

pub use backend::{
    load_backend, LanguageModel, LogitVector, NgramConfig, NgramModel, RemoteModel, ScriptedModel,
    TokenSequence, VocabInfo,
};
pub use config::RunConfig;
pub use conflict::{generate_conflict_set, SubstitutionRecord};
pub use context::{ContextPair, IrrelevantStrategy};
pub use decoding::{decode, BranchPrompts, DecodeLimits, DecodeResult, DecodeStrategy, StepTrace};
pub use error::{Error, Result};
pub use evaluation::{exact_match, normalize_answer, run_eval, Pipeline, QaRecord, RunReport};
pub use prompting::{FewShotExample, PromptMode};
pub use retrieval::{Embedder, Index, Passage, TfidfEmbedder};
