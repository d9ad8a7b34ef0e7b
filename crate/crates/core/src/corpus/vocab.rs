use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::CorpusError;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const NUM: u32 = 2;
pub const BOS: u32 = 3;
pub const EOS: u32 = 4;

pub const UNK_TOKEN: &str = "UNK";
pub const NUM_TOKEN: &str = "#";
pub const RESERVED: [&str; 5] = ["<pad>", UNK_TOKEN, NUM_TOKEN, "<bos>", "<eos>"];

/// Whitespace split, lowercase, digit-only tokens replaced by `#`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|tok| {
            if tok.chars().all(|c| c.is_ascii_digit()) {
                NUM_TOKEN.to_string()
            } else {
                tok.to_lowercase()
            }
        })
        .collect()
}

/// Token <-> id map with the reserved ids fixed at 0..5.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Keeps the `cap - 5` most frequent tokens (ties ascending
    /// lexicographic); everything else encodes as `UNK`.
    pub fn build<'a, I>(texts: I, cap: usize) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if cap < 6 {
            return Err(CorpusError::VocabCap(cap));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut any = false;
        for text in texts {
            any = true;
            for tok in tokenize(text) {
                if RESERVED.contains(&tok.as_str()) {
                    continue;
                }
                *counts.entry(tok).or_default() += 1;
            }
        }
        if !any {
            return Err(CorpusError::NoTexts);
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(cap - RESERVED.len());

        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect();
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map(String::as_str).unwrap_or(UNK_TOKEN)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = String;

    fn try_from(tokens: Vec<String>) -> Result<Self, String> {
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err("vocabulary must start with the reserved tokens".into());
        }
        let v = Self::from_tokens(tokens);
        if v.index.len() != v.tokens.len() {
            return Err("duplicate vocabulary entries".into());
        }
        Ok(v)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}
