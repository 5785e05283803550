use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate_candidates, Candidate, DEFAULT_MAX_SPAN};
use crate::corpus::TaggedSentence;
use crate::error::{Error, Result};
use crate::prompting::{
    render_hypothesis, Answer, CandidateMode, TemplateKind, TemplateSet, TypeNames,
};

/// Where an instance came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub sentence_id: usize,
    pub start: usize,
    pub end: usize,
    pub candidate: String,
    /// Entity type tag used in the hypothesis; `None` for null kinds.
    pub entity_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntailmentInstance {
    pub premise: String,
    pub hypothesis: String,
    pub pattern_id: u8,
    pub answer: Answer,
    pub kind: TemplateKind,
    pub provenance: Provenance,
}

impl EntailmentInstance {
    pub fn premise_tokens(&self) -> Vec<String> {
        self.premise
            .split_whitespace()
            .map(str::to_string)
            .collect()
    }

    pub fn candidate_tokens(&self) -> Vec<String> {
        self.premise
            .split_whitespace()
            .skip(self.provenance.start)
            .take(self.provenance.end - self.provenance.start)
            .map(str::to_string)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Negatives per positive.
    pub neg_ratio: f64,
    pub kind_mix: BTreeMap<TemplateKind, f64>,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            neg_ratio: 1.5,
            kind_mix: TemplateKind::NEGATIVES
                .into_iter()
                .map(|k| (k, 1.0))
                .collect(),
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.neg_ratio.is_finite() && self.neg_ratio >= 0.0) {
            return Err(Error::Config(format!(
                "neg_ratio {} is not a non-negative number",
                self.neg_ratio
            )));
        }
        for (k, w) in &self.kind_mix {
            if !TemplateKind::NEGATIVES.contains(k) {
                return Err(Error::Config(format!("{k} is not a negative kind")));
            }
            if !(w.is_finite() && *w >= 0.0) {
                return Err(Error::Config(format!(
                    "weight for {k} must be non-negative"
                )));
            }
        }
        if self.kind_mix.values().sum::<f64>() <= 0.0 {
            return Err(Error::Config("kind_mix weights sum to zero".into()));
        }
        Ok(())
    }

    pub fn weight(&self, kind: TemplateKind) -> f64 {
        self.kind_mix.get(&kind).copied().unwrap_or(0.0)
    }

    pub fn without(mut self, kind: TemplateKind) -> Self {
        self.kind_mix.insert(kind, 0.0);
        self
    }
}

/// Renders candidates into instances for one template set and pattern.
#[derive(Debug, Clone)]
pub struct InstanceBuilder {
    pub templates: TemplateSet,
    pub type_names: TypeNames,
    pub pattern_id: u8,
    pub max_span_length: usize,
}

impl InstanceBuilder {
    pub fn new(mode: CandidateMode, pattern_id: u8) -> Self {
        InstanceBuilder {
            templates: TemplateSet::for_mode(mode),
            type_names: TypeNames::default(),
            pattern_id,
            max_span_length: DEFAULT_MAX_SPAN,
        }
    }

    pub fn mode(&self) -> CandidateMode {
        self.templates.mode
    }

    pub fn candidates(&self, s: &TaggedSentence) -> Vec<Candidate> {
        generate_candidates(s, self.mode(), self.max_span_length)
    }

    pub fn instance(
        &self,
        s: &TaggedSentence,
        sentence_id: usize,
        c: &Candidate,
        kind: TemplateKind,
        entity_type: Option<&str>,
    ) -> Result<EntailmentInstance> {
        let entity_type = if kind.is_null() { None } else { entity_type };
        let name = entity_type.map(|t| self.type_names.name(t));
        let hypothesis = render_hypothesis(self.templates.get(kind), &c.surface, name.as_deref())?;
        Ok(EntailmentInstance {
            premise: s.text(),
            hypothesis,
            pattern_id: self.pattern_id,
            answer: kind.answer(),
            kind,
            provenance: Provenance {
                sentence_id,
                start: c.start,
                end: c.end,
                candidate: c.surface.clone(),
                entity_type: entity_type.map(str::to_string),
            },
        })
    }

    /// `positive` for every typed candidate, `null_other` for the rest.
    pub fn build_positives(
        &self,
        s: &TaggedSentence,
        sentence_id: usize,
    ) -> Result<Vec<EntailmentInstance>> {
        self.candidates(s)
            .iter()
            .map(|c| match &c.gold_type {
                Some(t) => self.instance(s, sentence_id, c, TemplateKind::Positive, Some(t)),
                None => self.instance(s, sentence_id, c, TemplateKind::NullOther, None),
            })
            .collect()
    }

    /// Draws `round(neg_ratio * positives)` negatives. Kinds that cannot be
    /// built for this sentence (no typed or no untyped candidate) are dropped
    /// from the mix for this sentence only.
    pub fn sample_negatives(
        &self,
        s: &TaggedSentence,
        sentence_id: usize,
        positives: &[EntailmentInstance],
        cfg: &SamplingConfig,
        type_inventory: &[String],
    ) -> Result<Vec<EntailmentInstance>> {
        cfg.validate()?;
        if cfg.weight(TemplateKind::FalsePositive) > 0.0 && type_inventory.len() < 2 {
            return Err(Error::Config(
                "false_positive negatives need at least two entity types".into(),
            ));
        }
        if type_inventory.is_empty() && cfg.weight(TemplateKind::NonEntity) > 0.0 {
            return Err(Error::Config(
                "non_entity negatives need an entity type".into(),
            ));
        }
        let count = (cfg.neg_ratio * positives.len() as f64).round() as usize;
        let candidates = self.candidates(s);
        let typed: Vec<&Candidate> = candidates
            .iter()
            .filter(|c| c.gold_type.is_some())
            .collect();
        let untyped: Vec<&Candidate> = candidates
            .iter()
            .filter(|c| c.gold_type.is_none())
            .collect();

        let feasible = |k: TemplateKind| match k {
            TemplateKind::FalsePositive | TemplateKind::NullCandidate => !typed.is_empty(),
            TemplateKind::NonEntity => !untyped.is_empty(),
            _ => false,
        };
        let kinds: Vec<TemplateKind> = TemplateKind::NEGATIVES
            .into_iter()
            .filter(|&k| feasible(k) && cfg.weight(k) > 0.0)
            .collect();
        if kinds.is_empty() || count == 0 {
            return Ok(Vec::new());
        }
        let dist = WeightedIndex::new(kinds.iter().map(|&k| cfg.weight(k)))
            .map_err(|e| Error::Config(e.to_string()))?;

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(sentence_id as u64);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let kind = kinds[dist.sample(&mut rng)];
            let inst = match kind {
                TemplateKind::FalsePositive => {
                    let c = typed.choose(&mut rng).unwrap();
                    let gold = c.gold_type.as_deref().unwrap();
                    let others: Vec<&String> =
                        type_inventory.iter().filter(|t| *t != gold).collect();
                    let other = others.choose(&mut rng).ok_or_else(|| {
                        Error::Config(format!("no alternative to type {gold} in the inventory"))
                    })?;
                    self.instance(s, sentence_id, c, kind, Some(other))?
                }
                TemplateKind::NullCandidate => {
                    let c = typed.choose(&mut rng).unwrap();
                    self.instance(s, sentence_id, c, kind, None)?
                }
                TemplateKind::NonEntity => {
                    let c = untyped.choose(&mut rng).unwrap();
                    let ty = type_inventory.choose(&mut rng).unwrap();
                    self.instance(s, sentence_id, c, kind, Some(ty))?
                }
                _ => unreachable!("only negative kinds are sampled"),
            };
            out.push(inst);
        }
        Ok(out)
    }

    /// Positives followed by sampled negatives, sentence by sentence in input
    /// order.
    pub fn build(
        &self,
        data: &[TaggedSentence],
        cfg: &SamplingConfig,
        type_inventory: &[String],
    ) -> Result<Vec<EntailmentInstance>> {
        let mut out = Vec::new();
        for (id, s) in data.iter().enumerate() {
            let pos = self.build_positives(s, id)?;
            let neg = self.sample_negatives(s, id, &pos, cfg, type_inventory)?;
            out.extend(pos);
            out.extend(neg);
        }
        Ok(out)
    }
}
