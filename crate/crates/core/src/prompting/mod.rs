//! Hypothesis templates, entailment patterns, verbalizers and soft prompts.

mod pattern;
mod soft;
mod templates;
mod verbalizer;

pub use pattern::{apply_pattern, Boundary, MaskedInput, PatternLayout, Role, Segment};
pub use soft::{build_soft_input, slot_marker, SlotFamily, SoftPromptSpec};
pub use templates::{
    render_hypothesis, split_words, CandidateMode, HypToken, HypothesisTemplate, TemplateKind,
    TemplateSet, TypeNames,
};
pub use verbalizer::{Answer, Verbalizer};
