use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::prompting::Boundary;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "<s>";
pub const SEP: &str = "</s>";
pub const MASK: &str = "[MASK]";

/// Word-level vocabulary. Lookups are lowercased; specials come first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub const SPECIALS: [&'static str; 5] = [PAD, UNK, CLS, SEP, MASK];

    /// Specials, then every word seen at least `min_count` times (sorted by
    /// descending frequency, ties alphabetical).
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for w in words {
            *counts.entry(w.to_lowercase()).or_default() += 1;
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count && !Self::SPECIALS.contains(&w.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = Self::SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(w, _)| w))
            .collect::<Vec<_>>();
        Vocab::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn key(token: &str) -> String {
        if Self::SPECIALS.contains(&token) {
            token.to_string()
        } else {
            token.to_lowercase()
        }
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(&Self::key(token)).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.get(token).is_some()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(self.index[UNK])
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn pad_id(&self) -> u32 {
        self.index[PAD]
    }

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < Self::SPECIALS.len()
    }

    pub fn boundary(&self) -> Boundary {
        Boundary {
            cls: CLS.into(),
            sep: SEP.into(),
            mask: MASK.into(),
        }
    }

    /// Stable digest of the token list, used to match checkpoints to
    /// backbones.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0]);
        }
        hex::encode(&h.finalize()[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_and_lookup() {
        let v = Vocab::build("b a b c B".split_whitespace(), 1);
        assert_eq!(v.token(5), "b");
        assert_eq!(v.get("B"), Some(5));
        assert_eq!(v.id("zzz"), v.get(UNK).unwrap());
        assert_eq!(v.get(MASK), Some(4));
        assert!(v.is_special(v.pad_id()));
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
        assert_eq!(Vocab::build("a".split_whitespace(), 2).len(), 5);
    }
}
