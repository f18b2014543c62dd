//! Token vocabulary with fixed reserved ids.

use crate::text::{tokenize, MASK_TOKEN};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const CLS: usize = 4;
pub const MASK: usize = 5;
pub const SEP: usize = 6;

const RESERVED: [&str; 7] = [
    "<pad>", "<unk>", "<bos>", "<eos>", "<cls>", MASK_TOKEN, "<sep>",
];

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("max_size {0} is smaller than the {reserved} reserved tokens", reserved = RESERVED.len())]
    TooSmall(usize),
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("vocabulary file: {0}")]
    Format(#[from] serde_json::Error),
}

/// Bijective token <-> id mapping; reserved tokens always occupy ids 0..=6.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Build from the given content tokens (reserved tokens are prepended;
    /// duplicates of reserved surface forms are ignored).
    pub fn new(content: impl IntoIterator<Item = String>) -> Self {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        for t in content {
            if !RESERVED.contains(&t.as_str()) {
                tokens.push(t);
            }
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    /// Rebuilds the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        *self.index.get(token).unwrap_or(&UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Encode raw text; out-of-vocabulary tokens map to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Decode ids back to a space-joined string, skipping structural tokens.
    pub fn decode(&self, ids: &[usize]) -> String {
        let words: Vec<String> = ids
            .iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS | CLS | SEP))
            .filter_map(|&id| self.token(id).map(str::to_string))
            .collect();
        words.join(" ")
    }

    /// FNV-1a fingerprint of the token list; stored in checkpoints so a
    /// model is never silently paired with a different vocabulary.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tokens {
            for &b in t.as_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
            h ^= 0xff;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    pub fn reserved_len() -> usize {
        RESERVED.len()
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), VocabError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, VocabError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut vocab: Vocab = serde_json::from_str(&text)?;
        vocab.reindex();
        Ok(vocab)
    }
}

/// Count token frequencies and keep the `max_size - 7` most frequent,
/// breaking frequency ties lexicographically.
pub fn build_from_counts(
    counts: impl IntoIterator<Item = (String, usize)>,
    max_size: usize,
) -> Result<Vocab, VocabError> {
    if max_size < RESERVED.len() {
        return Err(VocabError::TooSmall(max_size));
    }
    let mut entries: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, _)| !RESERVED.contains(&t.as_str()))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries.truncate(max_size - RESERVED.len());
    Ok(Vocab::new(entries.into_iter().map(|(t, _)| t)))
}
