//! Procedurally generated tagged corpora.
//!
//! Entity names are opaque pseudo-words drawn from per-type lexicons, so a
//! word-level model can only type them from context or from what it saw
//! during backbone pretraining. Two domains are built in: a news-style
//! world with PER/LOC/ORG/MISC and a movie-query world with
//! ACTOR/DIRECTOR/GENRE/YEAR.

use std::collections::{BTreeMap, HashSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Tag, TaggedSentence};
use crate::prompting::{split_words, Boundary, PatternLayout, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainKind {
    News,
    Movie,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Probability that a sentence is drawn from the entity-free templates.
    pub entity_free_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            entity_free_rate: 0.1,
        }
    }
}

const NEWS_TEMPLATES: &[&str] = &[
    "{PER} visited {LOC} last week .",
    "{ORG} opened a new office in {LOC} .",
    "{PER} joined {ORG} in {LOC} .",
    "the {MISC} delegation met {PER} on monday .",
    "{PER} said the {MISC} market was weak .",
    "shares of {ORG} fell sharply on friday .",
    "talks between {ORG} and {ORG} ended without a deal .",
    "{PER} , a {MISC} writer , lives in {LOC} .",
    "heavy rain fell across {LOC} on sunday .",
    "{PER} told reporters that {ORG} would grow .",
    "a {MISC} film won the top award in {LOC} .",
    "{PER} and {PER} arrived in {LOC} for the summit .",
    "{ORG} said profits rose in {LOC} and {LOC} .",
    "police in {LOC} arrested a {MISC} man .",
    "{PER} resigned as head of {ORG} .",
    "the {MISC} team beat {ORG} in the final .",
    "officials from {LOC} praised {PER} .",
    "{ORG} will buy a stake in {ORG} .",
    "{PER} spoke to reporters on tuesday .",
    "a {MISC} festival drew large crowds .",
];

const NEWS_EMPTY: &[&str] = &[
    "the market closed higher on friday .",
    "prices rose again this week .",
    "the meeting ended without a deal .",
    "officials said talks would resume soon .",
    "rain is expected later on sunday .",
];

const NEWS_KNOWLEDGE: &[(&str, &str)] = &[
    ("PER", "{X} is a person ."),
    ("PER", "the person named {X} spoke ."),
    ("LOC", "{X} is a location ."),
    ("LOC", "the location {X} is far away ."),
    ("ORG", "{X} is an organization ."),
    ("ORG", "the organization {X} has many staff ."),
    ("MISC", "{X} is a miscellaneous name ."),
    ("MISC", "the word {X} is miscellaneous ."),
];

const MOVIE_TEMPLATES: &[&str] = &[
    "show me {GENRE} movies with {ACTOR} .",
    "who directed the {GENRE} film from {YEAR} ?",
    "{DIRECTOR} made a {GENRE} movie in {YEAR} .",
    "list films starring {ACTOR} directed by {DIRECTOR} .",
    "is there a {GENRE} movie with {ACTOR} from {YEAR} ?",
    "find the {YEAR} film by {DIRECTOR} .",
    "what {GENRE} films did {ACTOR} make ?",
    "did {ACTOR} work with {DIRECTOR} ?",
    "play a {GENRE} movie from {YEAR} .",
];

const MOVIE_EMPTY: &[&str] = &[
    "show me something good to watch .",
    "what movies are playing tonight ?",
    "find a film for me .",
];

const MOVIE_KNOWLEDGE: &[(&str, &str)] = &[
    ("ACTOR", "{X} is an actor ."),
    ("ACTOR", "the actor {X} smiled ."),
    ("DIRECTOR", "{X} is a director ."),
    ("DIRECTOR", "the director {X} shouted ."),
    ("GENRE", "{X} is a genre ."),
    ("GENRE", "the genre {X} is popular ."),
    ("YEAR", "{X} is a year ."),
    ("YEAR", "the year {X} was long ."),
];

/// Natural type words used in yes/no knowledge questions.
const NEWS_TYPE_WORDS: &[(&str, &str)] = &[
    ("PER", "person"),
    ("LOC", "location"),
    ("ORG", "organization"),
    ("MISC", "miscellaneous"),
];

const MOVIE_TYPE_WORDS: &[(&str, &str)] = &[
    ("ACTOR", "actor"),
    ("DIRECTOR", "director"),
    ("GENRE", "genre"),
    ("YEAR", "year"),
];

const GENRES: &[&str] = &[
    "comedy",
    "horror",
    "western",
    "thriller",
    "drama",
    "romance",
    "musical",
    "documentary",
    "animated",
    "crime",
    "fantasy",
    "mystery",
];

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kr", "st",
    "tr", "sh", "ch",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

/// A lexicon of entity names per type plus the sentence templates that use
/// them.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    kind: DomainKind,
    names: BTreeMap<String, Vec<Vec<String>>>,
}

impl SynthWorld {
    /// News-style domain with PER/LOC/ORG/MISC.
    pub fn new(seed: u64) -> Self {
        Self::build(DomainKind::News, seed)
    }

    /// Movie-query domain with ACTOR/DIRECTOR/GENRE/YEAR.
    pub fn movie(seed: u64) -> Self {
        Self::build(DomainKind::Movie, seed)
    }

    pub fn build(kind: DomainKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_4a3e);
        let mut used: HashSet<String> = HashSet::new();
        for t in NEWS_TEMPLATES
            .iter()
            .chain(NEWS_EMPTY)
            .chain(MOVIE_TEMPLATES)
            .chain(MOVIE_EMPTY)
        {
            used.extend(t.split_whitespace().map(str::to_string));
        }
        let mut fresh = |rng: &mut ChaCha8Rng, n: usize| -> Vec<String> {
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let syllables = rng.random_range(2..=3);
                let w: String = (0..syllables)
                    .map(|_| {
                        format!(
                            "{}{}",
                            ONSETS.choose(rng).unwrap(),
                            VOWELS.choose(rng).unwrap()
                        )
                    })
                    .collect();
                if used.insert(w.clone()) {
                    out.push(w);
                }
            }
            out
        };
        let single = |v: Vec<String>| v.into_iter().map(|w| vec![w]).collect::<Vec<_>>();
        let pair = |a: &[String], b: &[String]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| vec![x.clone(), y.clone()])
                .collect::<Vec<_>>()
        };

        let mut names = BTreeMap::new();
        match kind {
            DomainKind::News => {
                let first = fresh(&mut rng, 40);
                let last = fresh(&mut rng, 40);
                names.insert("PER".to_string(), pair(&first, &last));
                names.insert("LOC".to_string(), single(fresh(&mut rng, 40)));
                let stems = fresh(&mut rng, 40);
                let suffixes = ["corp", "bank", "group", "union"];
                names.insert(
                    "ORG".to_string(),
                    stems
                        .into_iter()
                        .enumerate()
                        .map(|(i, s)| vec![s, suffixes[i % suffixes.len()].to_string()])
                        .collect(),
                );
                names.insert("MISC".to_string(), single(fresh(&mut rng, 40)));
            }
            DomainKind::Movie => {
                let first = fresh(&mut rng, 30);
                let last = fresh(&mut rng, 30);
                names.insert("ACTOR".to_string(), pair(&first, &last));
                let first = fresh(&mut rng, 30);
                let last = fresh(&mut rng, 30);
                names.insert("DIRECTOR".to_string(), pair(&first, &last));
                names.insert(
                    "GENRE".to_string(),
                    GENRES.iter().map(|g| vec![g.to_string()]).collect(),
                );
                names.insert(
                    "YEAR".to_string(),
                    (1950..2021)
                        .step_by(2)
                        .map(|y| vec![y.to_string()])
                        .collect(),
                );
            }
        }
        SynthWorld { kind, names }
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn types(&self) -> Vec<String> {
        self.names.keys().cloned().collect()
    }

    pub fn names(&self, entity_type: &str) -> &[Vec<String>] {
        &self.names[entity_type]
    }

    fn templates(&self) -> (&'static [&'static str], &'static [&'static str]) {
        match self.kind {
            DomainKind::News => (NEWS_TEMPLATES, NEWS_EMPTY),
            DomainKind::Movie => (MOVIE_TEMPLATES, MOVIE_EMPTY),
        }
    }

    fn knowledge(&self) -> &'static [(&'static str, &'static str)] {
        match self.kind {
            DomainKind::News => NEWS_KNOWLEDGE,
            DomainKind::Movie => MOVIE_KNOWLEDGE,
        }
    }

    /// One tagged sentence.
    pub fn sentence(&self, cfg: &SynthConfig, rng: &mut impl Rng) -> TaggedSentence {
        let (templates, empty) = self.templates();
        let template = if rng.random_bool(cfg.entity_free_rate) {
            empty.choose(rng).unwrap()
        } else {
            templates.choose(rng).unwrap()
        };
        let mut tokens = Vec::new();
        let mut tags = Vec::new();
        for piece in template.split_whitespace() {
            if let Some(ty) = piece.strip_prefix('{').and_then(|p| p.strip_suffix('}')) {
                let name = self.names[ty].choose(rng).unwrap();
                for (j, w) in name.iter().enumerate() {
                    tokens.push(w.clone());
                    tags.push(if j == 0 {
                        Tag::Begin(ty.to_string())
                    } else {
                        Tag::Inside(ty.to_string())
                    });
                }
            } else {
                tokens.push(piece.to_string());
                tags.push(Tag::Outside);
            }
        }
        TaggedSentence::new(tokens, tags).expect("templates are non-empty")
    }

    pub fn corpus(&self, cfg: &SynthConfig, n: usize, seed: u64) -> Vec<TaggedSentence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sentence(cfg, &mut rng)).collect()
    }

    fn type_words(&self) -> &'static [(&'static str, &'static str)] {
        match self.kind {
            DomainKind::News => NEWS_TYPE_WORDS,
            DomainKind::Movie => MOVIE_TYPE_WORDS,
        }
    }

    /// Untagged text for backbone pretraining: corpus-style sentences,
    /// short descriptive sentences tying each name to its type word, and
    /// yes/no questions about those types. Together they stand in for the
    /// background knowledge and entailment ability of a large pretrained
    /// encoder.
    pub fn pretraining_text(&self, n: usize, seed: u64) -> Vec<Vec<String>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = SynthConfig::default();
        let mut out: Vec<Vec<String>> = (0..n)
            .map(|_| self.sentence(&cfg, &mut rng).tokens)
            .collect();
        for (ty, template) in self.knowledge() {
            for name in &self.names[*ty] {
                let mut toks = Vec::new();
                for piece in template.split_whitespace() {
                    if piece == "{X}" {
                        toks.extend(name.iter().cloned());
                    } else {
                        toks.push(piece.to_string());
                    }
                }
                out.push(toks);
            }
        }
        let words = self.type_words();
        let question = |subject: &[String], asked: &str, answer: &str| -> Vec<String> {
            let mut toks = vec!["is".to_string()];
            toks.extend(subject.iter().cloned());
            toks.extend(
                format!("a {asked} ? {answer} .")
                    .split_whitespace()
                    .map(str::to_string),
            );
            toks
        };
        for (i, (ty, word)) in words.iter().enumerate() {
            for name in &self.names[*ty] {
                let other = words[(i + rng.random_range(1..words.len())) % words.len()].1;
                out.push(question(name, word, "yes"));
                out.push(question(name, other, "no"));
                out.push(question(name, "name", "yes"));
                if name.len() > 1 {
                    for part in name {
                        out.push(question(std::slice::from_ref(part), word, "yes"));
                    }
                }
            }
        }
        let (templates, empty) = self.templates();
        let mut plain: Vec<&str> = templates
            .iter()
            .chain(empty)
            .flat_map(|t| t.split_whitespace())
            .filter(|w| !w.starts_with('{'))
            .collect();
        plain.sort_unstable();
        plain.dedup();
        for w in plain {
            out.push(question(&[w.to_string()], "name", "no"));
        }
        out.extend(self.inference_text(n / 2, &mut rng));
        out
    }

    /// Premise/hypothesis pairs rendered through the cloze patterns with the
    /// answer word in the mask slot. Hypotheses are plain statements ("W is a
    /// person .", "W is a name .") about one word of the premise.
    fn inference_text(&self, n: usize, rng: &mut impl Rng) -> Vec<Vec<String>> {
        let words = self.type_words();
        let patterns = PatternLayout::all();
        let boundary = Boundary::default();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let s = self.sentence(&SynthConfig::default(), rng);
            let i = rng.random_range(0..s.len());
            let word = &s.tokens[i];
            let (hyp, answer) = match (s.tags[i].entity_type(), rng.random_range(0..3)) {
                (Some(_), 0) => (format!("{word} is a name ."), "yes"),
                (Some(ty), 1) => {
                    let w = words.iter().find(|(t, _)| *t == ty).map_or(ty, |(_, w)| w);
                    (format!("{word} is a {w} ."), "yes")
                }
                (Some(ty), _) => {
                    let others: Vec<&str> = words
                        .iter()
                        .filter(|(t, _)| *t != ty)
                        .map(|(_, w)| *w)
                        .collect();
                    (
                        format!("{word} is a {} .", others.choose(rng).unwrap()),
                        "no",
                    )
                }
                (None, 0) => (format!("{word} is a name ."), "no"),
                (None, _) => (
                    format!("{word} is a {} .", words.choose(rng).unwrap().1),
                    "no",
                ),
            };
            let hyp_tokens: Vec<(String, Role)> = split_words(&hyp)
                .into_iter()
                .map(|w| (w, Role::Hypothesis))
                .collect();
            let premise = s.tokens.join(" ");
            let p = patterns.choose(rng).unwrap();
            let input = p
                .render(&premise, &s.tokens, &hyp, &hyp_tokens, &boundary)
                .with_answer(answer);
            out.push(input.tokens[1..input.tokens.len() - 1].to_vec());
        }
        out
    }
}
