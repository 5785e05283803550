use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Boundary, HypToken, MaskedInput, PatternLayout, Role, TemplateKind, TemplateSet};
use crate::error::{Error, Result};

/// Learnable prompt slots that stand in for the fixed template words.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SoftPromptSpec {
    /// `None` means one slot per template word, in the template's positions.
    pub slot_count: Option<usize>,
    /// Separate slot families per entity type instead of one shared family.
    pub per_entity_type: bool,
}

/// Which set of slot embeddings a hypothesis uses.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SlotFamily {
    Typed,
    TypedFor(String),
    Null,
}

impl fmt::Display for SlotFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotFamily::Typed => f.write_str("typed"),
            SlotFamily::TypedFor(t) => write!(f, "typed:{t}"),
            SlotFamily::Null => f.write_str("null"),
        }
    }
}

pub fn slot_marker(family: &SlotFamily, index: usize) -> String {
    format!("[SLOT-{family}-{index}]")
}

impl SoftPromptSpec {
    pub fn validate(&self) -> Result<()> {
        if self.slot_count == Some(0) {
            return Err(Error::Config("soft prompt needs at least one slot".into()));
        }
        Ok(())
    }

    pub fn family(&self, kind: TemplateKind, entity_type: Option<&str>) -> SlotFamily {
        match (kind.is_null(), self.per_entity_type, entity_type) {
            (true, _, _) => SlotFamily::Null,
            (false, true, Some(t)) => SlotFamily::TypedFor(t.to_string()),
            _ => SlotFamily::Typed,
        }
    }

    /// Every family needed for `types`, with its slot count under `templates`.
    pub fn families(&self, templates: &TemplateSet, types: &[String]) -> Vec<(SlotFamily, usize)> {
        let typed_len = self
            .slot_count
            .unwrap_or_else(|| templates.get(TemplateKind::Positive).template_len());
        let null_len = self
            .slot_count
            .unwrap_or_else(|| templates.get(TemplateKind::NullOther).template_len());
        let mut out = Vec::new();
        if self.per_entity_type {
            out.extend(
                types
                    .iter()
                    .map(|t| (SlotFamily::TypedFor(t.clone()), typed_len)),
            );
        } else {
            out.push((SlotFamily::Typed, typed_len));
        }
        out.push((SlotFamily::Null, null_len));
        out
    }

    /// Fails if any slot marker is an ordinary vocabulary entry.
    pub fn check_collisions(
        &self,
        templates: &TemplateSet,
        types: &[String],
        in_vocab: impl Fn(&str) -> bool,
    ) -> Result<()> {
        for (family, n) in self.families(templates, types) {
            for i in 0..n {
                let m = slot_marker(&family, i);
                if in_vocab(&m) {
                    return Err(Error::Config(format!(
                        "slot marker {m} collides with a vocabulary token"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Hypothesis tokens with template words replaced by slot markers.
    pub fn hypothesis_tokens(
        &self,
        templates: &TemplateSet,
        kind: TemplateKind,
        candidate: &[String],
        entity_type: Option<&str>,
        type_name: Option<&str>,
    ) -> Vec<(String, Role)> {
        let family = self.family(kind, entity_type);
        let layout = templates.get(kind).tokens(candidate, type_name);
        match self.slot_count {
            None => {
                let mut slot = 0;
                layout
                    .into_iter()
                    .map(|t| match t {
                        HypToken::Template(_) => {
                            slot += 1;
                            (slot_marker(&family, slot - 1), Role::Slot)
                        }
                        other => (other.text().to_string(), Role::Hypothesis),
                    })
                    .collect()
            }
            Some(n) => {
                let mut out: Vec<(String, Role)> = candidate
                    .iter()
                    .map(|c| (c.clone(), Role::Hypothesis))
                    .collect();
                out.extend((0..n).map(|i| (slot_marker(&family, i), Role::Slot)));
                if !kind.is_null() {
                    out.extend(
                        type_name
                            .unwrap_or_default()
                            .split_whitespace()
                            .map(|w| (w.to_string(), Role::Hypothesis)),
                    );
                }
                out
            }
        }
    }
}

/// Soft-prompt counterpart of rendering a hypothesis and applying a pattern.
#[allow(clippy::too_many_arguments)]
pub fn build_soft_input(
    spec: &SoftPromptSpec,
    templates: &TemplateSet,
    pattern: &PatternLayout,
    premise: &[String],
    candidate: &[String],
    kind: TemplateKind,
    entity_type: Option<&str>,
    type_name: Option<&str>,
    boundary: &Boundary,
) -> Result<MaskedInput> {
    spec.validate()?;
    if candidate.is_empty() || premise.is_empty() {
        return Err(Error::Argument(
            "candidate and premise must be non-empty".into(),
        ));
    }
    if !kind.is_null() && type_name.is_none() {
        return Err(Error::Argument(format!(
            "{kind} soft input needs an entity type"
        )));
    }
    let hyp = spec.hypothesis_tokens(templates, kind, candidate, entity_type, type_name);
    let hyp_text = hyp
        .iter()
        .map(|(t, _)| t.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    Ok(pattern.render(&premise.join(" "), premise, &hyp_text, &hyp, boundary))
}
