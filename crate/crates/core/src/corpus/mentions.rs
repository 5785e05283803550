use super::{EntityMention, Tag, TaggedSentence};

/// Maximal `B I*` runs of one type. Assumes repaired (IOB2) tags.
pub fn extract_mentions(s: &TaggedSentence) -> Vec<EntityMention> {
    let mut out = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, tag) in s.tags.iter().enumerate() {
        match tag {
            Tag::Inside(ty) if open.map(|(_, t)| t) == Some(ty.as_str()) => {}
            _ => {
                if let Some((start, ty)) = open.take() {
                    out.push(EntityMention::new(&s.tokens, start, i, ty));
                }
                if let Tag::Begin(ty) | Tag::Inside(ty) = tag {
                    open = Some((i, ty));
                }
            }
        }
    }
    if let Some((start, ty)) = open {
        out.push(EntityMention::new(&s.tokens, start, s.len(), ty));
    }
    out
}

/// Inverse of [`extract_mentions`] for non-overlapping mentions.
pub fn tags_from_mentions(mentions: &[EntityMention], len: usize) -> Vec<Tag> {
    let mut tags = vec![Tag::Outside; len];
    for m in mentions {
        tags[m.start] = Tag::Begin(m.entity_type.clone());
        for t in &mut tags[m.start + 1..m.end] {
            *t = Tag::Inside(m.entity_type.clone());
        }
    }
    tags
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use regex::Regex;

    fn sentence(tags: &[&str]) -> TaggedSentence {
        let tokens: Vec<String> = (0..tags.len()).map(|i| format!("w{i}")).collect();
        let toks: Vec<&str> = tokens.iter().map(String::as_str).collect();
        TaggedSentence::from_strs(&toks, tags).unwrap()
    }

    #[test]
    fn all_outside() {
        assert!(extract_mentions(&sentence(&["O", "O", "O"])).is_empty());
    }

    #[test]
    fn two_mentions() {
        let m = extract_mentions(&sentence(&["B-PER", "I-PER", "O", "B-LOC"]));
        let spans: Vec<_> = m
            .iter()
            .map(|m| (m.start, m.end, m.entity_type.as_str()))
            .collect();
        assert_eq!(spans, [(0, 2, "PER"), (3, 4, "LOC")]);
    }

    #[test]
    fn adjacent_begins_split() {
        let m = extract_mentions(&sentence(&["B-PER", "B-PER", "I-PER"]));
        let spans: Vec<_> = m.iter().map(|m| (m.start, m.end)).collect();
        assert_eq!(spans, [(0, 1), (1, 3)]);
    }

    /// Oracle: encode each repaired tag as one character and scan for
    /// maximal `B I*` runs with a regex, independent of the state machine.
    fn regex_oracle(s: &TaggedSentence) -> Vec<(usize, usize, String)> {
        let types = ["A", "B", "C"];
        let mut enc = String::new();
        for t in &s.tags {
            enc.push(match t {
                Tag::Outside => 'o',
                Tag::Begin(ty) => {
                    (b'a' + types.iter().position(|x| x == ty).unwrap() as u8 * 2) as char
                }
                Tag::Inside(ty) => {
                    (b'b' + types.iter().position(|x| x == ty).unwrap() as u8 * 2) as char
                }
            });
        }
        let re = Regex::new("ab*|cd*|ef*").unwrap();
        re.find_iter(&enc)
            .map(|m| {
                let c = enc.as_bytes()[m.start()];
                let ty = types[((c - b'a') / 2) as usize].to_string();
                (m.start(), m.end(), ty)
            })
            .collect()
    }

    fn tag_strategy() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(
            prop::sample::select(vec!["O", "B-A", "I-A", "B-B", "I-B", "B-C", "I-C"]),
            1..30,
        )
        .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #[test]
        fn agrees_with_regex_oracle(tags in tag_strategy()) {
            let t: Vec<&str> = tags.iter().map(String::as_str).collect();
            let s = sentence(&t);
            let got: Vec<_> = extract_mentions(&s)
                .into_iter()
                .map(|m| (m.start, m.end, m.entity_type))
                .collect();
            prop_assert_eq!(got, regex_oracle(&s));
        }

        #[test]
        fn round_trip_is_identity(tags in tag_strategy()) {
            let t: Vec<&str> = tags.iter().map(String::as_str).collect();
            let s = sentence(&t);
            let m = extract_mentions(&s);
            for w in m.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
            }
            prop_assert_eq!(tags_from_mentions(&m, s.len()), s.tags.clone());
        }
    }
}
