use serde::{Deserialize, Serialize};

use super::split_words;
use crate::error::{Error, Result};

/// Backend boundary symbols substituted into pattern layouts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Boundary {
    pub cls: String,
    pub sep: String,
    pub mask: String,
}

impl Default for Boundary {
    fn default() -> Self {
        Boundary {
            cls: "<s>".into(),
            sep: "</s>".into(),
            mask: "[MASK]".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Hypothesis,
    Premise,
    Mask,
    Sep,
    /// Literal text, spacing included.
    Text(String),
}

/// What a token in a [`MaskedInput`] is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Cls,
    Sep,
    Mask,
    Literal,
    Hypothesis,
    Premise,
    Slot,
}

impl Role {
    /// Content tokens are the ones an MLM objective may hide.
    pub fn is_content(self) -> bool {
        matches!(self, Role::Hypothesis | Role::Premise)
    }
}

/// A rendered prompt with exactly one mask position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedInput {
    pub text: String,
    pub tokens: Vec<String>,
    pub roles: Vec<Role>,
    pub mask_index: usize,
    /// Premise tokens dropped by [`MaskedInput::truncate`].
    pub truncated: usize,
}

impl MaskedInput {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Drops premise tokens from the right until the input fits `max_len`.
    /// Hypothesis, mask and boundaries are never removed.
    pub fn truncate(&mut self, max_len: usize) -> Result<()> {
        while self.tokens.len() > max_len {
            let Some(last) = self.roles.iter().rposition(|r| *r == Role::Premise) else {
                return Err(Error::Argument(format!(
                    "input of {} tokens cannot fit {max_len} without cutting the hypothesis",
                    self.tokens.len()
                )));
            };
            self.tokens.remove(last);
            self.roles.remove(last);
            if last < self.mask_index {
                self.mask_index -= 1;
            }
            self.truncated += 1;
        }
        if self.truncated > 0 {
            log::debug!("truncated {} premise tokens", self.truncated);
        }
        Ok(())
    }

    /// Copy with the mask token replaced by `word`.
    pub fn with_answer(&self, word: &str) -> MaskedInput {
        let mut out = self.clone();
        out.tokens[self.mask_index] = word.to_string();
        out
    }
}

/// One of the four entailment layouts, stored as its literal layout string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternLayout {
    pub id: u8,
    pub layout: String,
    segments: Vec<Segment>,
}

impl PatternLayout {
    pub const LAYOUTS: [&'static str; 4] = [
        "[HYPOTHESIS] ? </s></s> [MASK], [PREMISE] </s>",
        "`` [HYPOTHESIS] '' ? </s></s> [MASK], `` [PREMISE] '' </s>",
        "[HYPOTHESIS] ? </s></s> [MASK]. [PREMISE] </s>",
        "`` [HYPOTHESIS] '' ? </s></s> [MASK]. `` [PREMISE] '' </s>",
    ];

    pub fn builtin(id: u8) -> Result<Self> {
        let layout = Self::LAYOUTS
            .get(usize::from(id).wrapping_sub(1))
            .ok_or_else(|| Error::Config(format!("pattern id must be 1..=4, got {id}")))?;
        Self::parse(id, layout)
    }

    pub fn all() -> Vec<Self> {
        (1..=4).map(|id| Self::builtin(id).unwrap()).collect()
    }

    /// Parses a layout with `[HYPOTHESIS]`, `[PREMISE]`, `[MASK]` and `</s>`
    /// markers; everything else is literal.
    pub fn parse(id: u8, layout: &str) -> Result<Self> {
        const MARKERS: [(&str, Segment); 4] = [
            ("[HYPOTHESIS]", Segment::Hypothesis),
            ("[PREMISE]", Segment::Premise),
            ("[MASK]", Segment::Mask),
            ("</s>", Segment::Sep),
        ];
        let mut segments = Vec::new();
        let mut rest = layout;
        while !rest.is_empty() {
            let next = MARKERS
                .iter()
                .filter_map(|(m, seg)| rest.find(m).map(|pos| (pos, *m, seg)))
                .min_by_key(|(pos, _, _)| *pos);
            match next {
                Some((pos, marker, seg)) => {
                    if pos > 0 {
                        segments.push(Segment::Text(rest[..pos].to_string()));
                    }
                    segments.push(seg.clone());
                    rest = &rest[pos + marker.len()..];
                }
                None => {
                    segments.push(Segment::Text(rest.to_string()));
                    rest = "";
                }
            }
        }
        let count = |s: &Segment| segments.iter().filter(|x| *x == s).count();
        for required in [Segment::Hypothesis, Segment::Premise, Segment::Mask] {
            if count(&required) != 1 {
                return Err(Error::Config(format!(
                    "pattern {layout:?} must contain {required:?} exactly once"
                )));
            }
        }
        Ok(PatternLayout {
            id,
            layout: layout.to_string(),
            segments,
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Renders pre-tokenized parts. Hypothesis tokens carry their own role
    /// (`Hypothesis` or `Slot`); premise tokens are all `Premise`.
    pub fn render(
        &self,
        premise_text: &str,
        premise_tokens: &[String],
        hypothesis_text: &str,
        hypothesis_tokens: &[(String, Role)],
        boundary: &Boundary,
    ) -> MaskedInput {
        let mut text = String::new();
        let mut tokens = vec![boundary.cls.clone()];
        let mut roles = vec![Role::Cls];
        let mut mask_index = 0;
        for seg in &self.segments {
            match seg {
                Segment::Hypothesis => {
                    text.push_str(hypothesis_text);
                    for (t, r) in hypothesis_tokens {
                        tokens.push(t.clone());
                        roles.push(*r);
                    }
                }
                Segment::Premise => {
                    text.push_str(premise_text);
                    tokens.extend(premise_tokens.iter().cloned());
                    roles.extend(std::iter::repeat_n(Role::Premise, premise_tokens.len()));
                }
                Segment::Mask => {
                    text.push_str(&boundary.mask);
                    mask_index = tokens.len();
                    tokens.push(boundary.mask.clone());
                    roles.push(Role::Mask);
                }
                Segment::Sep => {
                    text.push_str(&boundary.sep);
                    tokens.push(boundary.sep.clone());
                    roles.push(Role::Sep);
                }
                Segment::Text(lit) => {
                    text.push_str(lit);
                    for w in lit.split_whitespace() {
                        tokens.push(w.to_string());
                        roles.push(Role::Literal);
                    }
                }
            }
        }
        MaskedInput {
            text,
            tokens,
            roles,
            mask_index,
            truncated: 0,
        }
    }
}

/// String-level entry point: both parts are split into words with
/// [`split_words`].
pub fn apply_pattern(p: &PatternLayout, premise: &str, hypothesis: &str) -> Result<MaskedInput> {
    if premise.trim().is_empty() || hypothesis.trim().is_empty() {
        return Err(Error::Argument(
            "premise and hypothesis must be non-empty".into(),
        ));
    }
    let hyp: Vec<(String, Role)> = split_words(hypothesis)
        .into_iter()
        .map(|w| (w, Role::Hypothesis))
        .collect();
    Ok(p.render(
        premise,
        &split_words(premise),
        hypothesis,
        &hyp,
        &Boundary::default(),
    ))
}
