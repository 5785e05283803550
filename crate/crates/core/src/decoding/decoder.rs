use super::{build_emissions_many, labels_to_mentions, viterbi, NullStrategy, TransitionModel};
use crate::corpus::EntityMention;
use crate::error::Result;
use crate::instances::span_candidate_count;
use crate::prompting::TemplateKind;
use crate::registry::Registry;
use crate::scoring::{EntailmentScorer, Query};

pub const SPAN_THRESHOLD: f64 = 0.5;

/// Everything a decoder may need besides the sentences and the scorer.
pub struct DecodeContext<'a> {
    pub types: &'a [String],
    pub transitions: &'a TransitionModel,
    pub tau: f64,
    pub null: &'a dyn NullStrategy,
    pub max_span: usize,
    pub threshold: f64,
}

pub trait Decoder: Send + Sync {
    fn name(&self) -> &'static str;
    fn decode(
        &self,
        sentences: &[&[String]],
        scorer: &dyn EntailmentScorer,
        ctx: &DecodeContext<'_>,
    ) -> Result<Vec<Vec<EntityMention>>>;
}

/// Word mode: emissions, then tau-weighted Viterbi.
pub struct ViterbiDecoder;

impl Decoder for ViterbiDecoder {
    fn name(&self) -> &'static str {
        "viterbi"
    }

    fn decode(
        &self,
        sentences: &[&[String]],
        scorer: &dyn EntailmentScorer,
        ctx: &DecodeContext<'_>,
    ) -> Result<Vec<Vec<EntityMention>>> {
        let ems = build_emissions_many(sentences, scorer, ctx.types, ctx.null)?;
        sentences
            .iter()
            .zip(&ems)
            .map(|(toks, em)| {
                labels_to_mentions(&viterbi(em, ctx.transitions, ctx.tau)?, ctx.types, toks)
            })
            .collect()
    }
}

/// Span mode: every span scored against every type, accepted greedily.
pub struct SpanGreedy;

impl Decoder for SpanGreedy {
    fn name(&self) -> &'static str {
        "span-greedy"
    }

    fn decode(
        &self,
        sentences: &[&[String]],
        scorer: &dyn EntailmentScorer,
        ctx: &DecodeContext<'_>,
    ) -> Result<Vec<Vec<EntityMention>>> {
        let mut out = Vec::with_capacity(sentences.len());
        for toks in sentences {
            let mut queries = Vec::with_capacity(
                span_candidate_count(toks.len(), ctx.max_span) * ctx.types.len(),
            );
            for start in 0..toks.len() {
                for end in start + 1..=(start + ctx.max_span).min(toks.len()) {
                    for t in ctx.types {
                        queries.push(Query {
                            tokens: toks,
                            start,
                            end,
                            kind: TemplateKind::Positive,
                            entity_type: Some(t),
                        });
                    }
                }
            }
            let probs = scorer.entail_probs(&queries)?;
            let scored: Vec<(usize, usize, String, f64)> = queries
                .iter()
                .zip(probs)
                .map(|(q, p)| {
                    (
                        q.start,
                        q.end,
                        q.entity_type.unwrap_or_default().to_string(),
                        p,
                    )
                })
                .collect();
            out.push(span_greedy(&scored, toks, ctx.threshold));
        }
        Ok(out)
    }
}

/// Accepts spans by descending probability while they stay above
/// `threshold` and do not overlap an accepted span.
pub fn span_greedy(
    scored: &[(usize, usize, String, f64)],
    tokens: &[String],
    threshold: f64,
) -> Vec<EntityMention> {
    let mut order: Vec<&(usize, usize, String, f64)> =
        scored.iter().filter(|s| s.3 > threshold).collect();
    order.sort_by(|a, b| {
        b.3.total_cmp(&a.3)
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut taken = vec![false; tokens.len()];
    let mut out = Vec::new();
    for (s, e, t, _) in order {
        if taken[*s..*e].iter().any(|&x| x) {
            continue;
        }
        taken[*s..*e].iter_mut().for_each(|x| *x = true);
        out.push(EntityMention::new(tokens, *s, *e, t.clone()));
    }
    out.sort_by_key(|m| m.start);
    out
}

pub fn decoder_registry() -> Registry<fn() -> Box<dyn Decoder>> {
    Registry::<fn() -> Box<dyn Decoder>>::new("decoder")
        .with("viterbi", || Box::new(ViterbiDecoder))
        .with("span-greedy", || Box::new(SpanGreedy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TaggedSentence;
    use crate::decoding::{estimate_transitions, NullTemplate};

    /// Entails exactly the gold span/type of a fixed sentence.
    /// Answers from the gold tags. Word mode accepts any word inside a gold
    /// mention; span mode accepts only exact gold spans.
    struct Oracle(TaggedSentence, bool);

    impl EntailmentScorer for Oracle {
        fn entail_probs(&self, queries: &[Query<'_>]) -> Result<Vec<f64>> {
            let gold = self.0.mentions();
            let labels = self.0.word_labels();
            Ok(queries
                .iter()
                .map(|q| {
                    let hit = match q.kind {
                        TemplateKind::NullCandidate => labels[q.start].is_none(),
                        _ if !self.1
                            && q.end - q.start == 1
                            && labels[q.start] == q.entity_type =>
                        {
                            true
                        }
                        _ => gold.iter().any(|m| {
                            m.start == q.start
                                && m.end == q.end
                                && Some(m.entity_type.as_str()) == q.entity_type
                        }),
                    };
                    if hit {
                        0.9
                    } else {
                        0.05
                    }
                })
                .collect())
        }
    }

    #[test]
    fn both_decoders_recover_gold() {
        let s = TaggedSentence::from_strs(
            &["kim", "lee", "visited", "new", "york", "."],
            &["B-PER", "I-PER", "O", "B-LOC", "I-LOC", "O"],
        )
        .unwrap();
        let types = vec!["LOC".to_string(), "PER".to_string()];
        let tm = estimate_transitions(std::slice::from_ref(&s), &types).unwrap();
        let ctx = DecodeContext {
            types: &types,
            transitions: &tm,
            tau: 1.0,
            null: &NullTemplate,
            max_span: 3,
            threshold: SPAN_THRESHOLD,
        };
        let reg = decoder_registry();
        for (name, spans) in [("viterbi", false), ("span-greedy", true)] {
            let scorer = Oracle(s.clone(), spans);
            let d = (reg.get(name).unwrap())();
            let got = d.decode(&[&s.tokens], &scorer, &ctx).unwrap();
            assert_eq!(got[0], s.mentions(), "{name}");
        }
    }

    #[test]
    fn greedy_resolves_overlaps() {
        let toks: Vec<String> = "a b c".split(' ').map(String::from).collect();
        let scored = vec![
            (0, 2, "X".to_string(), 0.8),
            (1, 3, "Y".to_string(), 0.9),
            (0, 1, "X".to_string(), 0.7),
            (2, 3, "X".to_string(), 0.4),
        ];
        let got = span_greedy(&scored, &toks, 0.5);
        assert_eq!(
            got.iter().map(|m| (m.start, m.end)).collect::<Vec<_>>(),
            [(0, 1), (1, 3)]
        );
    }
}
