use serde::{Deserialize, Serialize};

use crate::corpus::TaggedSentence;
use crate::prompting::CandidateMode;

pub const DEFAULT_MAX_SPAN: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub mode: CandidateMode,
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub gold_type: Option<String>,
}

/// Word mode: one candidate per token, typed by its tag. Span mode: every
/// span up to `max_span_length` tokens, typed only if it equals a mention.
pub fn generate_candidates(
    s: &TaggedSentence,
    mode: CandidateMode,
    max_span_length: usize,
) -> Vec<Candidate> {
    match mode {
        CandidateMode::Word => s
            .tokens
            .iter()
            .zip(&s.tags)
            .enumerate()
            .map(|(i, (tok, tag))| Candidate {
                mode,
                start: i,
                end: i + 1,
                surface: tok.clone(),
                gold_type: tag.entity_type().map(str::to_string),
            })
            .collect(),
        CandidateMode::Span => {
            let mentions = s.mentions();
            let mut out = Vec::with_capacity(span_candidate_count(s.len(), max_span_length));
            for len in 1..=max_span_length.min(s.len()) {
                for start in 0..=s.len() - len {
                    let end = start + len;
                    let gold_type = mentions
                        .iter()
                        .find(|m| m.start == start && m.end == end)
                        .map(|m| m.entity_type.clone());
                    out.push(Candidate {
                        mode,
                        start,
                        end,
                        surface: s.tokens[start..end].join(" "),
                        gold_type,
                    });
                }
            }
            out
        }
    }
}

/// Closed form of the span-mode candidate count.
pub fn span_candidate_count(len: usize, max_span_length: usize) -> usize {
    (1..=max_span_length.min(len)).map(|k| len - k + 1).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sentence(n: usize) -> TaggedSentence {
        TaggedSentence::untagged((0..n).map(|i| format!("w{i}")).collect()).unwrap()
    }

    #[test]
    fn counts_for_five_words() {
        assert_eq!(
            generate_candidates(&sentence(5), CandidateMode::Word, 8).len(),
            5
        );
        assert_eq!(
            generate_candidates(&sentence(5), CandidateMode::Span, 5).len(),
            15
        );
    }

    #[test]
    fn gold_types() {
        let s = TaggedSentence::from_strs(
            &["Kim", "Jong", "visited", "Seoul"],
            &["B-PER", "I-PER", "O", "B-LOC"],
        )
        .unwrap();
        let words: Vec<_> = generate_candidates(&s, CandidateMode::Word, 1)
            .into_iter()
            .map(|c| c.gold_type)
            .collect();
        assert_eq!(
            words,
            [
                Some("PER".into()),
                Some("PER".into()),
                None,
                Some("LOC".into())
            ]
        );
        let spans = generate_candidates(&s, CandidateMode::Span, 3);
        let typed: Vec<_> = spans
            .iter()
            .filter_map(|c| c.gold_type.as_ref().map(|t| (c.start, c.end, t.as_str())))
            .collect();
        assert_eq!(typed, [(3, 4, "LOC"), (0, 2, "PER")]);
    }

    proptest! {
        #[test]
        fn span_count_matches_double_loop(len in 1usize..40, max in 1usize..12) {
            let mut brute = Vec::new();
            for i in 0..len {
                for j in i + 1..=len {
                    if j - i <= max {
                        brute.push((i, j));
                    }
                }
            }
            let got: std::collections::BTreeSet<_> = generate_candidates(&sentence(len), CandidateMode::Span, max)
                .into_iter()
                .map(|c| (c.start, c.end))
                .collect();
            prop_assert_eq!(got.len(), brute.len());
            prop_assert_eq!(got, brute.into_iter().collect());
            prop_assert_eq!(span_candidate_count(len, max), generate_candidates(&sentence(len), CandidateMode::Span, max).len());
        }
    }
}
