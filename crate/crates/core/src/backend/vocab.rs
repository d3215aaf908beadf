use std::collections::HashMap;

use crate::error::{Error, Result};

/// Surface strings for every token id, with a greedy longest-match tokenizer.
#[derive(Debug, Clone)]
pub struct TokenTable {
    surfaces: Vec<String>,
    lookup: HashMap<String, u32>,
    max_chars: usize,
    unk_id: Option<u32>,
}

impl TokenTable {
    /// Builds a table from per-id surfaces. Empty surfaces (e.g. eos) are
    /// never produced by tokenization. The first id with a given surface wins.
    pub fn new(surfaces: Vec<String>, unk_id: Option<u32>) -> Self {
        let mut lookup = HashMap::new();
        let mut max_chars = 0;
        for (id, s) in surfaces.iter().enumerate() {
            if s.is_empty() || Some(id as u32) == unk_id {
                continue;
            }
            max_chars = max_chars.max(s.chars().count());
            lookup.entry(s.clone()).or_insert(id as u32);
        }
        TokenTable {
            surfaces,
            lookup,
            max_chars,
            unk_id,
        }
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn id(&self, surface: &str) -> Option<u32> {
        self.lookup.get(surface).copied()
    }

    pub fn surface(&self, id: u32) -> Option<&str> {
        self.surfaces.get(id as usize).map(String::as_str)
    }

    pub fn unk_id(&self) -> Option<u32> {
        self.unk_id
    }

    /// Greedy longest match from left to right. A character that starts no
    /// known token becomes `unk` when the table has one, otherwise an error.
    pub fn tokenize_longest(&self, text: &str) -> Result<Vec<u32>> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let start = chars[i].0;
            let mut matched = None;
            let longest = self.max_chars.min(chars.len() - i);
            for n in (1..=longest).rev() {
                let end = chars.get(i + n).map_or(text.len(), |c| c.0);
                if let Some(id) = self.id(&text[start..end]) {
                    matched = Some((id, n));
                    break;
                }
            }
            match (matched, self.unk_id) {
                (Some((id, n)), _) => {
                    out.push(id);
                    i += n;
                }
                (None, Some(unk)) => {
                    out.push(unk);
                    i += 1;
                }
                (None, None) => {
                    let end = chars.get(i + 1).map_or(text.len(), |c| c.0);
                    return Err(Error::Untokenizable(text[start..end].to_string()));
                }
            }
        }
        Ok(out)
    }

    pub fn concat(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            out.push_str(self.checked_surface(id)?);
        }
        Ok(out)
    }

    pub(crate) fn checked_surface(&self, id: u32) -> Result<&str> {
        self.surface(id).ok_or(Error::TokenOutOfRange {
            id,
            size: self.surfaces.len(),
        })
    }
}

/// Word-level segmentation: alphanumeric runs, single punctuation characters,
/// and newlines. Other whitespace only separates.
pub(crate) fn split_words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            word_start.get_or_insert(i);
            continue;
        }
        if let Some(s) = word_start.take() {
            out.push(&text[s..i]);
        }
        if c == '\n' || !c.is_whitespace() {
            out.push(&text[i..i + c.len_utf8()]);
        }
    }
    if let Some(s) = word_start {
        out.push(&text[s..]);
    }
    out
}

/// Inverse of [`split_words`] modulo whitespace: tokens are joined by single
/// spaces, and newlines carry no surrounding spaces.
pub(crate) fn join_words<'a>(tokens: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = String::new();
    for t in tokens {
        if t.is_empty() {
            continue;
        }
        if t != "\n" && !out.is_empty() && !out.ends_with('\n') {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}
