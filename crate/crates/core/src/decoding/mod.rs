//! Greedy decoding over up to three synchronized branches.
//!
//! Each step queries the branches a strategy needs (parametric, relevant
//! context, irrelevant context), merges their logits, and appends the single
//! combined argmax to every branch.

mod math;
pub mod trace;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use math::{
    argmax, combine_cad, combine_contrastive, confidence, dynamic_alpha, ratio_form_probability,
    softmax, top_k,
};

use crate::backend::{LanguageModel, LogitVector, TokenSequence, VocabInfo};
use crate::error::{Error, Result};

pub const DEFAULT_FIXED_ALPHA: f64 = 1.0;
pub const DEFAULT_CAD_ALPHA: f64 = 0.5;
pub const DEFAULT_MAX_NEW_TOKENS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecodeStrategy {
    /// Greedy over the parametric branch alone.
    RegularClosed,
    /// Greedy over the relevant-context branch alone.
    RegularOpen,
    /// `z+ + alpha (z+ - z)`.
    Cad { alpha: f64 },
    /// `z + alpha (z+ - z-)` with a constant alpha.
    ContrastiveFixed { alpha: f64 },
    /// `z + alpha (z+ - z-)` with alpha set per step from branch confidences.
    ContrastiveDynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSchedule {
    Fixed(f64),
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Parametric,
    Relevant,
    Irrelevant,
}

impl Branch {
    fn name(self) -> &'static str {
        match self {
            Branch::Parametric => "parametric",
            Branch::Relevant => "relevant",
            Branch::Irrelevant => "irrelevant",
        }
    }
}

impl DecodeStrategy {
    /// Short name used on the command line and in reports.
    pub fn name(&self) -> &'static str {
        match self {
            DecodeStrategy::RegularClosed => "reg-closed",
            DecodeStrategy::RegularOpen => "reg-open",
            DecodeStrategy::Cad { .. } => "cad",
            DecodeStrategy::ContrastiveFixed { .. } => "ours-fixed",
            DecodeStrategy::ContrastiveDynamic => "ours-dynamic",
        }
    }

    /// Parses a strategy name, giving alpha-carrying strategies `alpha` when
    /// supplied and their defaults otherwise.
    pub fn parse_with_alpha(name: &str, alpha: Option<f64>) -> Result<Self> {
        let strategy = match name {
            "reg-closed" => DecodeStrategy::RegularClosed,
            "reg-open" => DecodeStrategy::RegularOpen,
            "cad" => DecodeStrategy::Cad {
                alpha: alpha.unwrap_or(DEFAULT_CAD_ALPHA),
            },
            "ours-fixed" => DecodeStrategy::ContrastiveFixed {
                alpha: alpha.unwrap_or(DEFAULT_FIXED_ALPHA),
            },
            "ours-dynamic" => DecodeStrategy::ContrastiveDynamic,
            other => return Err(Error::Config(format!("unknown strategy {other:?}"))),
        };
        strategy.validate()?;
        Ok(strategy)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DecodeStrategy::Cad { alpha } | DecodeStrategy::ContrastiveFixed { alpha }
                if !(alpha.is_finite() && alpha >= 0.0) =>
            {
                Err(Error::InvalidAlpha(alpha))
            }
            _ => Ok(()),
        }
    }

    pub fn alpha_schedule(&self) -> AlphaSchedule {
        match *self {
            DecodeStrategy::RegularClosed | DecodeStrategy::RegularOpen => AlphaSchedule::Fixed(0.0),
            DecodeStrategy::Cad { alpha } | DecodeStrategy::ContrastiveFixed { alpha } => {
                AlphaSchedule::Fixed(alpha)
            }
            DecodeStrategy::ContrastiveDynamic => AlphaSchedule::Dynamic,
        }
    }

    pub fn required_branches(&self) -> &'static [Branch] {
        match self {
            DecodeStrategy::RegularClosed => &[Branch::Parametric],
            DecodeStrategy::RegularOpen => &[Branch::Relevant],
            DecodeStrategy::Cad { .. } => &[Branch::Parametric, Branch::Relevant],
            DecodeStrategy::ContrastiveFixed { .. } | DecodeStrategy::ContrastiveDynamic => {
                &[Branch::Parametric, Branch::Relevant, Branch::Irrelevant]
            }
        }
    }

    pub fn needs(&self, branch: Branch) -> bool {
        self.required_branches().contains(&branch)
    }
}

impl fmt::Display for DecodeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeStrategy::Cad { alpha } | DecodeStrategy::ContrastiveFixed { alpha } => {
                write!(f, "{}(alpha={alpha})", self.name())
            }
            _ => f.write_str(self.name()),
        }
    }
}

impl FromStr for DecodeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DecodeStrategy::parse_with_alpha(s, None)
    }
}

/// Tokenized prompts for each branch, all produced by one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchPrompts {
    pub vocab: VocabInfo,
    pub parametric: Option<TokenSequence>,
    pub relevant: Option<TokenSequence>,
    pub irrelevant: Option<TokenSequence>,
}

impl BranchPrompts {
    pub fn new(vocab: VocabInfo) -> Self {
        BranchPrompts {
            vocab,
            parametric: None,
            relevant: None,
            irrelevant: None,
        }
    }

    pub fn with(mut self, branch: Branch, tokens: TokenSequence) -> Self {
        *self.slot(branch) = Some(tokens);
        self
    }

    fn slot(&mut self, branch: Branch) -> &mut Option<TokenSequence> {
        match branch {
            Branch::Parametric => &mut self.parametric,
            Branch::Relevant => &mut self.relevant,
            Branch::Irrelevant => &mut self.irrelevant,
        }
    }

    pub fn get(&self, branch: Branch) -> Option<&TokenSequence> {
        match branch {
            Branch::Parametric => self.parametric.as_ref(),
            Branch::Relevant => self.relevant.as_ref(),
            Branch::Irrelevant => self.irrelevant.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeLimits {
    pub max_new_tokens: usize,
    pub stop_strings: Vec<String>,
}

impl Default for DecodeLimits {
    fn default() -> Self {
        DecodeLimits {
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            stop_strings: vec!["\n".to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step_index: usize,
    pub alpha_used: f64,
    /// Max of the parametric distribution; `None` when the strategy skips it.
    pub confidence_parametric: Option<f64>,
    /// Max of the relevant-context distribution; `None` when not computed.
    pub confidence_relevant: Option<f64>,
    pub chosen_token: u32,
    pub top5_combined: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Eos,
    MaxTokens,
    StopString,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    /// Detokenized continuation, excluding a terminating eos.
    pub text: String,
    /// Every chosen token, including a terminating eos.
    pub tokens: TokenSequence,
    pub traces: Vec<StepTrace>,
    pub stop_reason: StopReason,
}

fn prompt_for<'a>(
    strategy: &DecodeStrategy,
    prompts: &'a BranchPrompts,
    branch: Branch,
) -> Result<Option<&'a [u32]>> {
    if !strategy.needs(branch) {
        return Ok(None);
    }
    prompts
        .get(branch)
        .map(|t| Some(t.ids()))
        .ok_or(Error::StrategyBranchMissing {
            strategy: strategy.name(),
            branch: branch.name(),
        })
}

/// Greedy generation under `strategy`.
pub fn decode(
    strategy: &DecodeStrategy,
    prompts: &BranchPrompts,
    backend: &dyn LanguageModel,
    limits: &DecodeLimits,
) -> Result<DecodeResult> {
    strategy.validate()?;
    let vocab = backend.vocab();
    prompts.vocab.ensure_same(&vocab)?;
    let parametric = prompt_for(strategy, prompts, Branch::Parametric)?;
    let relevant = prompt_for(strategy, prompts, Branch::Relevant)?;
    let irrelevant = prompt_for(strategy, prompts, Branch::Irrelevant)?;
    for p in [parametric, relevant, irrelevant].into_iter().flatten() {
        vocab.check_ids(p)?;
    }

    let query = |prompt: Option<&[u32]>, generated: &[u32]| -> Result<Option<LogitVector>> {
        prompt
            .map(|p| {
                let z = backend.step_logits(p, generated)?;
                if z.len() != vocab.size {
                    return Err(Error::VocabMismatch {
                        expected_size: vocab.size,
                        expected_eos: vocab.eos_id,
                        got_size: z.len(),
                        got_eos: vocab.eos_id,
                    });
                }
                Ok(z)
            })
            .transpose()
    };

    let mut generated: Vec<u32> = Vec::new();
    let mut traces = Vec::new();
    let mut stop_reason = StopReason::MaxTokens;
    let mut text = String::new();

    for step in 0..limits.max_new_tokens {
        let z = query(parametric, &generated)?;
        let z_plus = query(relevant, &generated)?;
        let z_minus = query(irrelevant, &generated)?;

        let p_param = z.as_ref().map(|z| softmax(z.scores()));
        let p_rel = z_plus.as_ref().map(|z| softmax(z.scores()));

        let (combined, alpha_used) = match *strategy {
            DecodeStrategy::RegularClosed => (z.clone().expect("required"), 0.0),
            DecodeStrategy::RegularOpen => (z_plus.clone().expect("required"), 0.0),
            DecodeStrategy::Cad { alpha } => (
                combine_cad(z.as_ref().expect("required"), z_plus.as_ref().expect("required"), alpha)?,
                alpha,
            ),
            DecodeStrategy::ContrastiveFixed { alpha } => (
                combine_contrastive(
                    z.as_ref().expect("required"),
                    z_plus.as_ref().expect("required"),
                    z_minus.as_ref().expect("required"),
                    alpha,
                )?,
                alpha,
            ),
            DecodeStrategy::ContrastiveDynamic => {
                let alpha = dynamic_alpha(
                    p_param.as_deref().expect("required"),
                    p_rel.as_deref().expect("required"),
                );
                (
                    combine_contrastive(
                        z.as_ref().expect("required"),
                        z_plus.as_ref().expect("required"),
                        z_minus.as_ref().expect("required"),
                        alpha,
                    )?,
                    alpha,
                )
            }
        };

        let token = argmax(combined.scores());
        let p_combined = softmax(combined.scores());
        traces.push(StepTrace {
            step_index: step,
            alpha_used,
            confidence_parametric: p_param.as_deref().map(confidence),
            confidence_relevant: p_rel.as_deref().map(confidence),
            chosen_token: token,
            top5_combined: top_k(&p_combined, 5),
        });
        generated.push(token);

        if token == vocab.eos_id {
            stop_reason = StopReason::Eos;
            break;
        }
        if !limits.stop_strings.is_empty() {
            text = backend.detokenize(&generated)?;
            if limits
                .stop_strings
                .iter()
                .any(|s| !s.is_empty() && text.contains(s.as_str()))
            {
                stop_reason = StopReason::StopString;
                break;
            }
        }
    }

    if limits.stop_strings.is_empty() || stop_reason == StopReason::Eos {
        let visible = match generated.last() {
            Some(&t) if t == vocab.eos_id => &generated[..generated.len() - 1],
            _ => &generated[..],
        };
        text = backend.detokenize(visible)?;
    }

    Ok(DecodeResult {
        text,
        tokens: generated.into(),
        traces,
        stop_reason,
    })
}
