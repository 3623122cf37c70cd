//! Word-level vocabulary with four reserved ids.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{LotError, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Bijection between token strings and ids. Ids 0..4 are always the reserved
/// markers, in the order of [`RESERVED`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabFile", into = "VocabFile")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
}

impl TryFrom<VocabFile> for Vocab {
    type Error = LotError;

    fn try_from(f: VocabFile) -> Result<Self> {
        Vocab::from_tokens(f.tokens)
    }
}

impl From<Vocab> for VocabFile {
    fn from(v: Vocab) -> Self {
        VocabFile { tokens: v.tokens }
    }
}

impl Vocab {
    /// Builds a vocabulary from the full token list, reserved markers first.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() {
            return Err(LotError::config("vocabulary shorter than reserved set"));
        }
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens[i] != *r {
                return Err(LotError::config(format!(
                    "reserved id {i} must be `{r}`, found `{}`",
                    tokens[i]
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(LotError::config(format!("invalid token {t:?}")));
            }
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(LotError::config(format!("duplicate token `{t}`")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Reserved markers followed by `words` (duplicates dropped, first wins).
    pub fn with_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for r in RESERVED {
            v.push(r);
        }
        for w in words {
            v.push(w.as_ref());
        }
        v
    }

    fn push(&mut self, w: &str) {
        if !self.index.contains_key(w) {
            self.index.insert(w.to_string(), self.tokens.len() as TokenId);
            self.tokens.push(w.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Whitespace tokenization; out-of-vocabulary words map to [`UNK`].
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace().map(|w| self.id(w).unwrap_or(UNK)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK as usize]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
