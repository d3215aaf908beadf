use std::fmt;

use serde::{Deserialize, Serialize};

/// SQuAD-style answer normalization: lowercase, strip ASCII punctuation,
/// replace the standalone words "a", "an", "the" with a space, collapse
/// whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    remove_articles(&no_punct)
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn remove_articles(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        if matches!(word.as_str(), "a" | "an" | "the") {
            out.push(' ');
        } else {
            out.push_str(word);
        }
        word.clear();
    };
    for c in s.chars() {
        if is_word_char(c) {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            out.push(c);
        }
    }
    flush(&mut word, &mut out);
    out
}

/// True when the normalized prediction equals some normalized answer.
pub fn exact_match(prediction: &str, answers: &[String]) -> bool {
    matched_answer(prediction, answers).is_some()
}

/// The first answer matching `prediction` under normalization.
pub fn matched_answer<'a>(prediction: &str, answers: &'a [String]) -> Option<&'a str> {
    let pred = normalize_answer(prediction);
    answers
        .iter()
        .find(|a| normalize_answer(a) == pred)
        .map(String::as_str)
}

/// The scored answer span: generation up to the first newline, trimmed.
pub fn extract_prediction(generation: &str) -> &str {
    generation.split('\n').next().unwrap_or("").trim()
}

pub const MAX_BUCKET: u8 = 6;

/// Order-of-magnitude bucket of monthly page views:
/// `floor(log10(views + 1))` clamped to `[0, 6]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PopularityBucket(u8);

impl PopularityBucket {
    pub fn index(self) -> u8 {
        self.0
    }

    pub fn label(self) -> String {
        format!("10^{}\u{2013}10^{}", self.0, self.0 + 1)
    }
}

impl fmt::Display for PopularityBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

pub fn popularity_bucket(views: u64) -> PopularityBucket {
    let magnitude = (views as u128 + 1).ilog10();
    PopularityBucket(magnitude.min(MAX_BUCKET as u32) as u8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bucket_boundaries() {
        assert_eq!(popularity_bucket(0).index(), 0);
        assert_eq!(popularity_bucket(8).index(), 0);
        assert_eq!(popularity_bucket(9).index(), 1);
        assert_eq!(popularity_bucket(998).index(), 2);
        assert_eq!(popularity_bucket(999).index(), 3);
        assert_eq!(popularity_bucket(10_000_000).index(), 6);
        assert_eq!(popularity_bucket(u64::MAX).index(), 6);
        assert_eq!(popularity_bucket(50).label(), "10^1\u{2013}10^2");
    }

    #[test]
    fn bucket_matches_float_oracle() {
        for v in (0..200_000u64).step_by(7).chain([999, 9_999, 99_999, 999_999]) {
            let oracle = (((v + 1) as f64).log10().floor() as u8).min(6);
            assert_eq!(popularity_bucket(v).index(), oracle, "views={v}");
        }
    }

    #[test]
    fn prediction_truncates_at_newline() {
        assert_eq!(extract_prediction("  Lyon \nQuestion: next"), "Lyon");
        assert_eq!(extract_prediction(""), "");
        assert_eq!(extract_prediction("\nLyon"), "");
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_answer(&s);
            prop_assert_eq!(normalize_answer(&once), once.clone());
        }

        #[test]
        fn match_survives_equivalent_rewrites(word in "[a-z]{1,8}", punct in "[.,!?;:]{0,3}") {
            let gold = vec![word.clone()];
            let rewritten = format!("The {}{}", word.to_uppercase(), punct);
            prop_assert!(exact_match(&rewritten, &gold));
            prop_assert!(exact_match(&word, &[rewritten]));
        }
    }
}
