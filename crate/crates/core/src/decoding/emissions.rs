use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompting::TemplateKind;
use crate::registry::Registry;
use crate::scoring::{EntailmentScorer, Query};

pub const EMISSION_FLOOR: f64 = 1e-12;

/// Row-normalized word × label probabilities; the last column is NULL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionMatrix {
    pub types: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl EmissionMatrix {
    /// Validates raw scores in `[0, 1]`, floors them at [`EMISSION_FLOOR`]
    /// and normalizes every row.
    pub fn from_raw(types: Vec<String>, raw: Vec<Vec<f64>>) -> Result<Self> {
        let width = types.len() + 1;
        let mut rows = Vec::with_capacity(raw.len());
        for (i, row) in raw.into_iter().enumerate() {
            if row.len() != width {
                return Err(Error::Decode(format!(
                    "row {i} has {} entries, expected {width}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Decode(format!("row {i} has a score outside [0, 1]")));
            }
            if row.iter().all(|&p| p == 0.0) {
                return Err(Error::Decode(format!("row {i} is all zero")));
            }
            let floored: Vec<f64> = row.iter().map(|p| p.max(EMISSION_FLOOR)).collect();
            let sum: f64 = floored.iter().sum();
            rows.push(floored.into_iter().map(|p| p / sum).collect());
        }
        Ok(EmissionMatrix { types, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> usize {
        self.types.len() + 1
    }

    pub fn null_index(&self) -> usize {
        self.types.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn get(&self, word: usize, label: usize) -> f64 {
        self.rows[word][label]
    }

    /// Per-word best label, lowest index on ties.
    pub fn argmax(&self) -> Vec<usize> {
        self.rows
            .iter()
            .map(|r| {
                let mut best = 0;
                for (j, &p) in r.iter().enumerate() {
                    if p > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// One JSON record per line: `{"sentence": i, "types": [...], "rows": [[...]]}`.
pub fn write_emissions<W: Write>(ems: &[EmissionMatrix], mut out: W) -> Result<()> {
    for (i, em) in ems.iter().enumerate() {
        let rec = serde_json::json!({ "sentence": i, "types": em.types, "rows": em.rows });
        writeln!(out, "{rec}")?;
    }
    Ok(())
}

/// How the NULL column is obtained.
pub trait NullStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    /// Extra query kind scored per word, if any.
    fn null_query(&self) -> Option<TemplateKind>;
    fn null_score(&self, typed: &[f64], template: Option<f64>) -> f64;
}

/// q(entail) of "<w> is not a name entity."
pub struct NullTemplate;

impl NullStrategy for NullTemplate {
    fn name(&self) -> &'static str {
        "null-template"
    }

    fn null_query(&self) -> Option<TemplateKind> {
        Some(TemplateKind::NullCandidate)
    }

    fn null_score(&self, _typed: &[f64], template: Option<f64>) -> f64 {
        template.unwrap_or(0.0)
    }
}

/// `1 - max_t q(entail | t)`.
pub struct Complement;

impl NullStrategy for Complement {
    fn name(&self) -> &'static str {
        "complement"
    }

    fn null_query(&self) -> Option<TemplateKind> {
        None
    }

    fn null_score(&self, typed: &[f64], _template: Option<f64>) -> f64 {
        1.0 - typed.iter().copied().fold(0.0, f64::max)
    }
}

pub fn null_strategy_registry() -> Registry<fn() -> Box<dyn NullStrategy>> {
    Registry::<fn() -> Box<dyn NullStrategy>>::new("null strategy")
        .with("null-template", || Box::new(NullTemplate))
        .with("complement", || Box::new(Complement))
}

fn word_queries<'a>(
    tokens: &'a [String],
    types: &'a [String],
    null: &dyn NullStrategy,
    word: usize,
) -> Vec<Query<'a>> {
    let mut q: Vec<Query<'a>> = types
        .iter()
        .map(|t| Query {
            tokens,
            start: word,
            end: word + 1,
            kind: TemplateKind::Positive,
            entity_type: Some(t.as_str()),
        })
        .collect();
    if let Some(kind) = null.null_query() {
        q.push(Query {
            tokens,
            start: word,
            end: word + 1,
            kind,
            entity_type: None,
        });
    }
    q
}

fn assemble(
    types: &[String],
    null: &dyn NullStrategy,
    probs: &[f64],
    per_word: usize,
    first_word: usize,
) -> Result<EmissionMatrix> {
    let t = types.len();
    let mut raw = Vec::with_capacity(probs.len() / per_word.max(1));
    for (i, chunk) in probs.chunks(per_word).enumerate() {
        if chunk
            .iter()
            .any(|p| !p.is_finite() || !(0.0..=1.0).contains(p))
        {
            return Err(Error::Scorer {
                word: first_word + i,
                source: Box::new(Error::Decode(
                    "scorer returned an invalid probability".into(),
                )),
            });
        }
        let mut row = chunk[..t].to_vec();
        row.push(null.null_score(&chunk[..t], chunk.get(t).copied()));
        raw.push(row);
    }
    EmissionMatrix::from_raw(types.to_vec(), raw)
}

/// Scores every word against every type (plus the null query) in one
/// scorer call. A failing call is retried word by word to name the word.
pub fn build_emissions(
    tokens: &[String],
    scorer: &dyn EntailmentScorer,
    types: &[String],
    null: &dyn NullStrategy,
) -> Result<EmissionMatrix> {
    let queries: Vec<Query<'_>> = (0..tokens.len())
        .flat_map(|i| word_queries(tokens, types, null, i))
        .collect();
    let per_word = types.len() + usize::from(null.null_query().is_some());
    match scorer.entail_probs(&queries) {
        Ok(p) if p.len() == queries.len() => assemble(types, null, &p, per_word, 0),
        Ok(p) => Err(Error::Decode(format!(
            "scorer returned {} scores for {} queries",
            p.len(),
            queries.len()
        ))),
        Err(_) => {
            for i in 0..tokens.len() {
                scorer
                    .entail_probs(&word_queries(tokens, types, null, i))
                    .map_err(|e| Error::Scorer {
                        word: i,
                        source: Box::new(e),
                    })?;
            }
            Err(Error::Decode(
                "scorer failed on the full sentence but not on any single word".into(),
            ))
        }
    }
}

/// [`build_emissions`] for many sentences, batching across sentences.
pub fn build_emissions_many(
    sentences: &[&[String]],
    scorer: &dyn EntailmentScorer,
    types: &[String],
    null: &dyn NullStrategy,
) -> Result<Vec<EmissionMatrix>> {
    let per_word = types.len() + usize::from(null.null_query().is_some());
    let mut out = Vec::with_capacity(sentences.len());
    // group sentences so one scorer call sees a few thousand queries
    let mut start = 0;
    while start < sentences.len() {
        let mut end = start;
        let mut n = 0;
        while end < sentences.len() && (n == 0 || n + sentences[end].len() * per_word <= 2048) {
            n += sentences[end].len() * per_word;
            end += 1;
        }
        let group = &sentences[start..end];
        let queries: Vec<Query<'_>> = group
            .iter()
            .flat_map(|toks| (0..toks.len()).flat_map(move |i| word_queries(toks, types, null, i)))
            .collect();
        match scorer.entail_probs(&queries) {
            Ok(p) if p.len() == queries.len() => {
                let mut at = 0;
                for toks in group {
                    let len = toks.len() * per_word;
                    out.push(assemble(types, null, &p[at..at + len], per_word, 0)?);
                    at += len;
                }
            }
            _ => {
                for toks in group {
                    out.push(build_emissions(toks, scorer, types, null)?);
                }
            }
        }
        start = end;
    }
    Ok(out)
}
