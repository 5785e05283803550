//! Tagged sentences, CoNLL column I/O, mention extraction and subsampling.

mod conll;
mod mentions;
mod sampling;
mod summary;
pub mod synth;

pub use conll::{parse_conll, write_conll, TagColumn};
pub use mentions::{extract_mentions, tags_from_mentions};
pub use sampling::{
    cross_type_sample, kshot_sample, mention_counts, KShotConfig, K_GRID, SAMPLING_POLICY,
};
pub use summary::{summarize, DatasetSummary};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A BIO tag. Parsed from `O`, `B-<type>` or `I-<type>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    Outside,
    Begin(String),
    Inside(String),
}

impl Tag {
    pub fn entity_type(&self) -> Option<&str> {
        match self {
            Tag::Outside => None,
            Tag::Begin(t) | Tag::Inside(t) => Some(t),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str("O"),
            Tag::Begin(t) => write!(f, "B-{t}"),
            Tag::Inside(t) => write!(f, "I-{t}"),
        }
    }
}

impl FromStr for Tag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "O" {
            return Ok(Tag::Outside);
        }
        let (prefix, ty) = s
            .split_once('-')
            .ok_or_else(|| "expected `O` or `<prefix>-<type>`".to_string())?;
        if ty.is_empty() {
            return Err("empty entity type".into());
        }
        match prefix {
            "B" => Ok(Tag::Begin(ty.to_string())),
            "I" => Ok(Tag::Inside(ty.to_string())),
            other => Err(format!("unknown tag prefix {other:?}")),
        }
    }
}

impl Serialize for Tag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Tokens with one BIO tag per token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
}

impl TaggedSentence {
    /// Builds a sentence, checking lengths and repairing orphan `I-` tags.
    pub fn new(tokens: Vec<String>, tags: Vec<Tag>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Argument("sentence has no tokens".into()));
        }
        if tokens.len() != tags.len() {
            return Err(Error::Argument(format!(
                "{} tokens but {} tags",
                tokens.len(),
                tags.len()
            )));
        }
        let mut s = TaggedSentence { tokens, tags };
        s.repair();
        Ok(s)
    }

    /// Convenience constructor from `&str` tags, used heavily in tests.
    pub fn from_strs(tokens: &[&str], tags: &[&str]) -> Result<Self> {
        let tags = tags
            .iter()
            .map(|t| t.parse::<Tag>().map_err(Error::Argument))
            .collect::<Result<Vec<_>>>()?;
        Self::new(tokens.iter().map(|t| t.to_string()).collect(), tags)
    }

    /// A sentence with every token tagged `O`.
    pub fn untagged(tokens: Vec<String>) -> Result<Self> {
        let n = tokens.len();
        Self::new(tokens, vec![Tag::Outside; n])
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn mentions(&self) -> Vec<EntityMention> {
        extract_mentions(self)
    }

    /// Word-level label per token: the entity type, or `None` outside entities.
    pub fn word_labels(&self) -> Vec<Option<&str>> {
        self.tags.iter().map(Tag::entity_type).collect()
    }

    pub fn entity_types(&self) -> BTreeSet<String> {
        self.tags
            .iter()
            .filter_map(|t| t.entity_type().map(str::to_string))
            .collect()
    }

    /// IOB1 → IOB2: an `I-X` not continuing an `X` entity becomes `B-X`.
    fn repair(&mut self) {
        let mut prev: Option<String> = None;
        for tag in &mut self.tags {
            if let Tag::Inside(ty) = tag {
                if prev.as_deref() != Some(ty.as_str()) {
                    *tag = Tag::Begin(ty.clone());
                }
            }
            prev = tag.entity_type().map(str::to_string);
        }
    }
}

/// A contiguous entity span `[start, end)` over token indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityMention {
    pub start: usize,
    pub end: usize,
    pub entity_type: String,
    pub surface: String,
}

impl EntityMention {
    pub fn new(
        tokens: &[String],
        start: usize,
        end: usize,
        entity_type: impl Into<String>,
    ) -> Self {
        EntityMention {
            start,
            end,
            entity_type: entity_type.into(),
            surface: tokens[start..end].join(" "),
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Sorted set of entity types appearing in `data`.
pub fn type_inventory(data: &[TaggedSentence]) -> Vec<String> {
    let mut set = BTreeSet::new();
    for s in data {
        set.extend(s.entity_types());
    }
    set.into_iter().collect()
}
