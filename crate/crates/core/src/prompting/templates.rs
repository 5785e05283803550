use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Answer;
use crate::error::{Error, Result};

pub const CANDIDATE: &str = "<candidate>";
pub const ENTITY_TYPE: &str = "<entity_type>";

/// The five hypothesis kinds. Each fixes the gold answer polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Positive,
    FalsePositive,
    NonEntity,
    NullCandidate,
    NullOther,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 5] = [
        TemplateKind::Positive,
        TemplateKind::FalsePositive,
        TemplateKind::NonEntity,
        TemplateKind::NullCandidate,
        TemplateKind::NullOther,
    ];

    pub const NEGATIVES: [TemplateKind; 3] = [
        TemplateKind::FalsePositive,
        TemplateKind::NullCandidate,
        TemplateKind::NonEntity,
    ];

    pub fn answer(self) -> Answer {
        match self {
            TemplateKind::Positive | TemplateKind::NullOther => Answer::Entail,
            TemplateKind::FalsePositive | TemplateKind::NonEntity | TemplateKind::NullCandidate => {
                Answer::Contradict
            }
        }
    }

    /// Null kinds use the "is not a name entity" form and take no type.
    pub fn is_null(self) -> bool {
        matches!(self, TemplateKind::NullCandidate | TemplateKind::NullOther)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateKind::Positive => "positive",
            TemplateKind::FalsePositive => "false_positive",
            TemplateKind::NonEntity => "non_entity",
            TemplateKind::NullCandidate => "null_candidate",
            TemplateKind::NullOther => "null_other",
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TemplateKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown template kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateMode {
    #[default]
    Word,
    Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypothesisTemplate {
    pub kind: TemplateKind,
    pub text_form: String,
}

impl HypothesisTemplate {
    pub fn new(kind: TemplateKind, text_form: impl Into<String>) -> Result<Self> {
        let text_form = text_form.into();
        if text_form.matches(CANDIDATE).count() != 1 {
            return Err(Error::Config(format!(
                "template {text_form:?} must contain {CANDIDATE} exactly once"
            )));
        }
        let types = text_form.matches(ENTITY_TYPE).count();
        let expected = usize::from(!kind.is_null());
        if types != expected {
            return Err(Error::Config(format!(
                "{kind} template {text_form:?} must contain {ENTITY_TYPE} {expected} time(s)"
            )));
        }
        Ok(HypothesisTemplate { kind, text_form })
    }

    pub fn gold_answer(&self) -> Answer {
        self.kind.answer()
    }

    /// Word-level token layout with placeholders expanded.
    pub fn tokens(&self, candidate: &[String], type_name: Option<&str>) -> Vec<HypToken> {
        let mut out = Vec::new();
        for word in split_words(&self.text_form) {
            match word.as_str() {
                CANDIDATE => out.extend(candidate.iter().cloned().map(HypToken::Candidate)),
                ENTITY_TYPE => out.extend(
                    type_name
                        .unwrap_or_default()
                        .split_whitespace()
                        .map(|w| HypToken::TypeWord(w.to_string())),
                ),
                _ => out.push(HypToken::Template(word)),
            }
        }
        out
    }

    /// Number of fixed template tokens (everything but the placeholders).
    pub fn template_len(&self) -> usize {
        split_words(&self.text_form)
            .iter()
            .filter(|w| *w != CANDIDATE && *w != ENTITY_TYPE)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HypToken {
    Candidate(String),
    TypeWord(String),
    Template(String),
}

impl HypToken {
    pub fn text(&self) -> &str {
        match self {
            HypToken::Candidate(s) | HypToken::TypeWord(s) | HypToken::Template(s) => s,
        }
    }
}

/// Splits on whitespace and detaches trailing sentence punctuation, so
/// `"entity."` becomes `["entity", "."]`. Pure-punctuation words stay whole.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let core = word.trim_end_matches(['.', ',', '?', '!', ';', ':']);
        if core.is_empty() || core.len() == word.len() {
            out.push(word.to_string());
        } else {
            out.push(core.to_string());
            out.extend(word[core.len()..].chars().map(String::from));
        }
    }
    out
}

/// Substitutes placeholders verbatim. `entity_type` is the natural-language
/// type name and is required for type-bearing kinds.
pub fn render_hypothesis(
    t: &HypothesisTemplate,
    candidate: &str,
    entity_type: Option<&str>,
) -> Result<String> {
    if candidate.trim().is_empty() {
        return Err(Error::Argument("empty candidate".into()));
    }
    let mut out = t.text_form.replace(CANDIDATE, candidate);
    if !t.kind.is_null() {
        let ty = entity_type
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| Error::Argument(format!("{} template needs an entity type", t.kind)))?;
        out = out.replace(ENTITY_TYPE, ty);
    }
    Ok(out)
}

/// The five templates used for one candidate mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub mode: CandidateMode,
    templates: BTreeMap<TemplateKind, HypothesisTemplate>,
}

impl TemplateSet {
    pub const WORD_TYPED: &'static str = "<candidate> is the part of a <entity_type> entity.";
    pub const SPAN_TYPED: &'static str = "<candidate> is an <entity_type> entity.";
    pub const NULL: &'static str = "<candidate> is not a name entity.";

    pub fn for_mode(mode: CandidateMode) -> Self {
        let typed = match mode {
            CandidateMode::Word => Self::WORD_TYPED,
            CandidateMode::Span => Self::SPAN_TYPED,
        };
        Self::custom(mode, typed, Self::NULL).expect("built-in templates are valid")
    }

    /// All three type-bearing kinds share `typed`; both null kinds share `null`.
    pub fn custom(mode: CandidateMode, typed: &str, null: &str) -> Result<Self> {
        let mut templates = BTreeMap::new();
        for kind in TemplateKind::ALL {
            let form = if kind.is_null() { null } else { typed };
            templates.insert(kind, HypothesisTemplate::new(kind, form)?);
        }
        Ok(TemplateSet { mode, templates })
    }

    pub fn get(&self, kind: TemplateKind) -> &HypothesisTemplate {
        &self.templates[&kind]
    }
}

/// Maps tag symbols (`LOC`) to the words used inside hypotheses (`location`).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TypeNames(pub BTreeMap<String, String>);

impl TypeNames {
    pub fn with(mut self, tag: &str, name: &str) -> Self {
        self.0.insert(tag.to_string(), name.to_string());
        self
    }

    /// Configured name, else a built-in default, else the lowercased tag with
    /// separators turned into spaces.
    pub fn name(&self, tag: &str) -> String {
        if let Some(n) = self.0.get(tag) {
            return n.clone();
        }
        let lower = tag.to_lowercase();
        let builtin = match lower.as_str() {
            "per" | "person" => Some("person"),
            "loc" | "location" => Some("location"),
            "org" | "organization" | "organisation" => Some("organization"),
            "misc" | "miscellaneous" | "other" => Some("miscellaneous"),
            _ => None,
        };
        builtin
            .map(str::to_string)
            .unwrap_or_else(|| lower.replace(['_', '-'], " "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_examples() {
        let set = TemplateSet::for_mode(CandidateMode::Word);
        assert_eq!(
            render_hypothesis(set.get(TemplateKind::Positive), "Seoul", Some("location")).unwrap(),
            "Seoul is the part of a location entity."
        );
        assert_eq!(
            render_hypothesis(set.get(TemplateKind::NullCandidate), "Seoul", None).unwrap(),
            "Seoul is not a name entity."
        );
        assert!(matches!(
            render_hypothesis(set.get(TemplateKind::Positive), "", Some("location")),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            render_hypothesis(set.get(TemplateKind::Positive), "Seoul", None),
            Err(Error::Argument(_))
        ));
        let span = TemplateSet::for_mode(CandidateMode::Span);
        assert_eq!(
            render_hypothesis(
                span.get(TemplateKind::Positive),
                "South Korea",
                Some("location")
            )
            .unwrap(),
            "South Korea is an location entity."
        );
    }

    #[test]
    fn placeholder_validation() {
        assert!(
            HypothesisTemplate::new(TemplateKind::Positive, "<candidate> is a thing.").is_err()
        );
        assert!(
            HypothesisTemplate::new(TemplateKind::NullOther, "<candidate> <entity_type>").is_err()
        );
        assert!(HypothesisTemplate::new(
            TemplateKind::Positive,
            "<candidate> <candidate> <entity_type>"
        )
        .is_err());
    }

    #[test]
    fn answer_polarity() {
        use Answer::*;
        let want = [Entail, Contradict, Contradict, Contradict, Entail];
        for (k, a) in TemplateKind::ALL.into_iter().zip(want) {
            assert_eq!(k.answer(), a, "{k}");
        }
    }

    #[test]
    fn token_layout() {
        let set = TemplateSet::for_mode(CandidateMode::Word);
        let t = set.get(TemplateKind::Positive);
        let toks = t.tokens(&["Seoul".to_string()], Some("location"));
        let text: Vec<&str> = toks.iter().map(HypToken::text).collect();
        assert_eq!(
            text,
            ["Seoul", "is", "the", "part", "of", "a", "location", "entity", "."]
        );
        assert_eq!(t.template_len(), 7);
        assert_eq!(set.get(TemplateKind::NullOther).template_len(), 6);
    }

    #[test]
    fn split_words_punctuation() {
        assert_eq!(split_words("a b. ? ''"), ["a", "b", ".", "?", "''"]);
        assert_eq!(
            split_words("Seoul is the capital."),
            ["Seoul", "is", "the", "capital", "."]
        );
    }

    #[test]
    fn type_names() {
        let names = TypeNames::default().with("GENRE", "movie genre");
        assert_eq!(names.name("LOC"), "location");
        assert_eq!(names.name("MISC"), "miscellaneous");
        assert_eq!(names.name("GENRE"), "movie genre");
        assert_eq!(names.name("art-film"), "art film");
    }
}
