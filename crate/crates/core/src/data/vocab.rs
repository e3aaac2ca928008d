use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use crate::error::{Error, Result};

pub const UNKNOWN_TOKEN: &str = "<unk>";

/// Token ↔ id map. Id 0 is reserved for unknown and padding; the rest are
/// ordered by descending frequency, then lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<usize>,
    min_frequency: usize,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    counts: Vec<usize>,
    min_frequency: usize,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        Vocabulary::from_parts(r.tokens, r.counts, r.min_frequency)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            tokens: v.tokens,
            counts: v.counts,
            min_frequency: v.min_frequency,
        }
    }
}

impl Vocabulary {
    fn from_parts(tokens: Vec<String>, counts: Vec<usize>, min_frequency: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            tokens,
            counts,
            min_frequency,
            index,
        }
    }

    /// Number of ids, the reserved one included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, id: usize) -> usize {
        self.counts.get(id).copied().unwrap_or(0)
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }
}

/// Union vocabulary over every example of every corpus.
pub fn build_vocab(corpora: &[&Corpus], min_frequency: usize) -> Result<Vocabulary> {
    if corpora.is_empty() || corpora.iter().all(|c| c.is_empty()) {
        return Err(Error::Config("cannot build a vocabulary from no data".into()));
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for corpus in corpora {
        for ex in &corpus.examples {
            for tok in &ex.tokens {
                *freq.entry(tok.as_str()).or_default() += 1;
            }
        }
    }
    let mut kept: Vec<(&str, usize)> = freq
        .into_iter()
        .filter(|&(t, c)| c >= min_frequency.max(1) && t != UNKNOWN_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut tokens = vec![UNKNOWN_TOKEN.to_string()];
    let mut counts = vec![0];
    for (t, c) in kept {
        tokens.push(t.to_string());
        counts.push(c);
    }
    Ok(Vocabulary::from_parts(tokens, counts, min_frequency))
}
