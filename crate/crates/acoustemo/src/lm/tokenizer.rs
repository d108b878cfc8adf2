//! Word-level whitespace tokenizer.
//!
//! Tokens are whitespace-delimited strings; the vocabulary is built from a
//! training corpus with reserved specials up front. Out-of-vocabulary words
//! map to `<unk>`. Ids are assigned by sorted order, so a vocabulary is a
//! pure function of the corpus.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

pub type TokenId = usize;

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
/// Modality-boundary sentinel marking the start of the text block.
pub const TEXT_SENTINEL: &str = "<txt>";

pub const SPECIALS: [&str; 4] = [UNK, BOS, EOS, TEXT_SENTINEL];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, TokenId>,
}

impl Vocab {
    /// Specials first, then the corpus words sorted and deduplicated.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(corpus_lines: I) -> Vocab {
        let mut words = BTreeSet::new();
        for line in corpus_lines {
            for w in line.split_whitespace() {
                if !SPECIALS.contains(&w) {
                    words.insert(w.to_string());
                }
            }
        }
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        Vocab::from_tokens(tokens)
    }

    /// Rebuild from a stored token list (checkpoint load).
    pub fn from_tokens(tokens: Vec<String>) -> Vocab {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn unk_id(&self) -> TokenId {
        0
    }

    /// End token id, when the vocabulary has one (hand-built vocabularies in
    /// tests may omit the specials).
    pub fn eos_id(&self) -> Option<TokenId> {
        self.index.get(EOS).copied()
    }

    pub fn text_sentinel_id(&self) -> TokenId {
        self.index[TEXT_SENTINEL]
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    /// Join tokens with single spaces, skipping specials.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.token(i))
            .filter(|t| !SPECIALS.contains(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
