//! Prompt construction and the phrase-span tokenizer.
//!
//! Tokenization lowercases the text, splits on whitespace, and emits every
//! non-alphanumeric character as its own token. Tokens from the `Detect:`
//! prefix, the `,` separators, punctuation inside a concept, and `[pad]`
//! fill belong to `non_phrase`; every word token of concept `k` belongs to
//! `spans[k]`. A subword table replaces a word with its listed pieces, all
//! inheriting the word's span.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::GroundingError;

pub const PREFIX: &str = "Detect: ";
pub const SEPARATOR: &str = ", ";
pub const PAD_TOKEN: &str = "[pad]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingPrompt {
    pub text: String,
    pub concepts: Vec<String>,
}

pub fn build_prompt<S: AsRef<str>>(concepts: &[S]) -> Result<GroundingPrompt, GroundingError> {
    if concepts.is_empty() {
        return Err(GroundingError::EmptyConceptSet);
    }
    let mut out = Vec::with_capacity(concepts.len());
    for c in concepts {
        let c = c.as_ref();
        if c.contains(',') {
            return Err(GroundingError::SeparatorInPhrase(c.to_string()));
        }
        if !c.chars().any(char::is_alphanumeric) {
            return Err(GroundingError::EmptyPhrase(c.to_string()));
        }
        out.push(c.to_string());
    }
    Ok(GroundingPrompt {
        text: format!("{PREFIX}{}", out.join(SEPARATOR)),
        concepts: out,
    })
}

/// Word → subword pieces, keyed by the lowercased word.
pub type SubwordTable = BTreeMap<String, Vec<String>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseSpanMap {
    pub tokens: Vec<String>,
    pub spans: Vec<Vec<usize>>,
    pub non_phrase: Vec<usize>,
}

impl PhraseSpanMap {
    /// Spans are sorted; `non_phrase` is every index not in a span.
    pub fn new(tokens: Vec<String>, mut spans: Vec<Vec<usize>>) -> Result<Self, GroundingError> {
        for s in &mut spans {
            s.sort_unstable();
            s.dedup();
        }
        let used: BTreeSet<usize> = spans.iter().flatten().copied().collect();
        let non_phrase = (0..tokens.len()).filter(|j| !used.contains(j)).collect();
        let map = PhraseSpanMap {
            tokens,
            spans,
            non_phrase,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn phrase_count(&self) -> usize {
        self.spans.len()
    }

    /// Spans nonempty, in range, disjoint; spans and `non_phrase` partition `0..M`.
    pub fn validate(&self) -> Result<(), GroundingError> {
        let m = self.tokens.len();
        let mut seen = vec![false; m];
        let mut claim = |j: usize, what: &str| -> Result<(), GroundingError> {
            if j >= m {
                return Err(GroundingError::ShapeMismatch(format!(
                    "{what} index {j} out of range for {m} tokens"
                )));
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(GroundingError::ShapeMismatch(format!("token {j} assigned twice")));
            }
            Ok(())
        };
        for (k, s) in self.spans.iter().enumerate() {
            if s.is_empty() {
                return Err(GroundingError::EmptySpan(k));
            }
            for &j in s {
                claim(j, "span")?;
            }
        }
        for &j in &self.non_phrase {
            claim(j, "non-phrase")?;
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(GroundingError::ShapeMismatch(format!("token {j} is unassigned")));
        }
        Ok(())
    }

    /// Append `[pad]` tokens up to `len`.
    pub fn pad_to(mut self, len: usize) -> Self {
        while self.tokens.len() < len {
            self.non_phrase.push(self.tokens.len());
            self.tokens.push(PAD_TOKEN.to_string());
        }
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("span map serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, GroundingError> {
        let map: PhraseSpanMap =
            serde_json::from_str(text).map_err(|e| GroundingError::ShapeMismatch(e.to_string()))?;
        map.validate()?;
        Ok(map)
    }
}

/// Split into lowercase words and single-character punctuation tokens.
/// The flag marks word tokens.
fn split(text: &str) -> Vec<(String, bool)> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push((std::mem::take(&mut word), true));
        }
        if !ch.is_whitespace() {
            out.push((ch.to_string(), false));
        }
    }
    if !word.is_empty() {
        out.push((word, true));
    }
    out
}

pub fn tokenize_prompt(p: &GroundingPrompt, subwords: Option<&SubwordTable>) -> PhraseSpanMap {
    let mut tokens = Vec::new();
    let mut spans = vec![Vec::new(); p.concepts.len()];
    let mut non_phrase = Vec::new();
    let push_other = |tokens: &mut Vec<String>, non_phrase: &mut Vec<usize>, t: String| {
        non_phrase.push(tokens.len());
        tokens.push(t);
    };
    for (t, _) in split(PREFIX) {
        push_other(&mut tokens, &mut non_phrase, t);
    }
    for (k, concept) in p.concepts.iter().enumerate() {
        if k > 0 {
            for (t, _) in split(SEPARATOR) {
                push_other(&mut tokens, &mut non_phrase, t);
            }
        }
        for (t, is_word) in split(concept) {
            if !is_word {
                push_other(&mut tokens, &mut non_phrase, t);
                continue;
            }
            let pieces = subwords
                .and_then(|table| table.get(&t))
                .filter(|pieces| !pieces.is_empty())
                .cloned()
                .unwrap_or_else(|| vec![t]);
            for piece in pieces {
                spans[k].push(tokens.len());
                tokens.push(piece);
            }
        }
    }
    PhraseSpanMap {
        tokens,
        spans,
        non_phrase,
    }
}
