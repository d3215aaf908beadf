//! Closed-book and open-book prompt rendering with few-shot demonstrations.

use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CLOSED_TEMPLATE: &str = "Answer the following question. Question: <question> Answer:";
pub const OPEN_TEMPLATE: &str =
    "Answer the question based on the context below. Context: <context> Question: <question> Answer:";
pub const SHOT_SEPARATOR: &str = "\n\n";
pub const DEFAULT_SHOTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Closed,
    Open,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
}

/// Template pair; each template ends where the answer begins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplates {
    pub closed: String,
    pub open: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            closed: CLOSED_TEMPLATE.to_string(),
            open: OPEN_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplates {
    pub fn validate(&self) -> Result<()> {
        if self.closed.contains("<context>") {
            return Err(Error::Config("closed template must not use <context>".into()));
        }
        if !self.open.contains("<context>") {
            return Err(Error::Config("open template must use <context>".into()));
        }
        if !self.closed.contains("<question>") || !self.open.contains("<question>") {
            return Err(Error::Config("templates must use <question>".into()));
        }
        Ok(())
    }

    fn fill(&self, mode: PromptMode, question: &str, context: Option<&str>) -> Result<String> {
        let template = match mode {
            PromptMode::Closed => &self.closed,
            PromptMode::Open => &self.open,
        };
        let context = match mode {
            PromptMode::Open => Some(context.ok_or(Error::MissingContext)?),
            PromptMode::Closed => None,
        };
        Ok(substitute(template, question, context))
    }

    /// Demonstrations first, each completed with its answer and followed by a
    /// blank line, then the target question ending at `Answer: `.
    pub fn render(
        &self,
        mode: PromptMode,
        question: &str,
        context: Option<&str>,
        shots: &[FewShotExample],
    ) -> Result<String> {
        let mut out = String::new();
        for shot in shots {
            let shot_context = match mode {
                PromptMode::Closed => None,
                PromptMode::Open => Some(shot.context.as_deref().ok_or_else(|| {
                    Error::ShotModeMismatch(format!(
                        "open-book demonstration {:?} has no context",
                        shot.question
                    ))
                })?),
            };
            out.push_str(&self.fill(mode, &shot.question, shot_context)?);
            out.push(' ');
            out.push_str(&shot.answer);
            out.push_str(SHOT_SEPARATOR);
        }
        out.push_str(&self.fill(mode, question, context)?);
        out.push(' ');
        Ok(out)
    }
}

/// Single-pass placeholder substitution, so text inserted for one placeholder
/// is never re-scanned for another.
fn substitute(template: &str, question: &str, context: Option<&str>) -> String {
    let mut out = String::with_capacity(template.len() + question.len());
    let mut rest = template;
    while let Some(pos) = rest.find('<') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix("<question>") {
            out.push_str(question);
            rest = after;
        } else if let (Some(after), Some(ctx)) = (tail.strip_prefix("<context>"), context) {
            out.push_str(ctx);
            rest = after;
        } else {
            out.push('<');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    out
}

/// Renders with the default templates.
pub fn render(
    mode: PromptMode,
    question: &str,
    context: Option<&str>,
    shots: &[FewShotExample],
) -> Result<String> {
    PromptTemplates::default().render(mode, question, context, shots)
}

pub fn read_shots(path: impl AsRef<Path>) -> Result<Vec<FewShotExample>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::json(format!("{}:{}", path.display(), n + 1), e))?,
        );
    }
    Ok(out)
}

/// The first `k` shots, or a seeded sample of `k` when `seed` is given.
pub fn select_shots(shots: &[FewShotExample], k: usize, seed: Option<u64>) -> Vec<FewShotExample> {
    match seed {
        None => shots.iter().take(k).cloned().collect(),
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            shots.choose_multiple(&mut rng, k.min(shots.len())).cloned().collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shot(i: usize, ctx: bool) -> FewShotExample {
        FewShotExample {
            question: format!("q{i}?"),
            answer: format!("a{i}"),
            context: ctx.then(|| format!("c{i}")),
        }
    }

    #[test]
    fn zero_shot_templates() {
        assert_eq!(
            render(PromptMode::Closed, "Q?", None, &[]).unwrap(),
            "Answer the following question. Question: Q? Answer: "
        );
        assert_eq!(
            render(PromptMode::Open, "Q?", Some("C"), &[]).unwrap(),
            "Answer the question based on the context below. Context: C Question: Q? Answer: "
        );
    }

    #[test]
    fn five_shots_give_six_answer_slots() {
        let shots: Vec<_> = (0..5).map(|i| shot(i, true)).collect();
        for (mode, ctx) in [(PromptMode::Closed, None), (PromptMode::Open, Some("C"))] {
            let prompt = render(mode, "Q?", ctx, &shots).unwrap();
            assert_eq!(prompt.matches("Answer:").count(), 6);
            assert!(prompt.ends_with("Question: Q? Answer: "));
            assert!(!prompt.ends_with('\n'));
        }
        let closed = render(PromptMode::Closed, "Q?", None, &shots[..1]).unwrap();
        assert_eq!(
            closed,
            "Answer the following question. Question: q0? Answer: a0\n\n\
             Answer the following question. Question: Q? Answer: "
        );
    }

    #[test]
    fn open_mode_errors() {
        assert!(matches!(
            render(PromptMode::Open, "Q?", None, &[]),
            Err(Error::MissingContext)
        ));
        assert!(matches!(
            render(PromptMode::Open, "Q?", Some("C"), &[shot(0, false)]),
            Err(Error::ShotModeMismatch(_))
        ));
    }

    #[test]
    fn placeholders_in_inputs_are_not_expanded() {
        let out = render(PromptMode::Open, "what is <context>?", Some("<question>"), &[]).unwrap();
        assert_eq!(
            out,
            "Answer the question based on the context below. Context: <question> Question: what is <context>? Answer: "
        );
    }

    #[test]
    fn template_validation() {
        assert!(PromptTemplates::default().validate().is_ok());
        let bad = PromptTemplates {
            closed: "<context> <question>".into(),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn shot_selection() {
        let shots: Vec<_> = (0..8).map(|i| shot(i, false)).collect();
        assert_eq!(select_shots(&shots, 5, None), shots[..5].to_vec());
        let a = select_shots(&shots, 5, Some(1));
        assert_eq!(a, select_shots(&shots, 5, Some(1)));
        assert_eq!(a.len(), 5);
        assert_eq!(select_shots(&shots, 20, Some(1)).len(), 8);
    }
}
