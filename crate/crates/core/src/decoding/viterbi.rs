use serde::{Deserialize, Serialize};

use super::{
    decoder_registry, null_strategy_registry, DecodeContext, EmissionMatrix, TransitionModel,
};
use crate::corpus::{EntityMention, TaggedSentence};
use crate::error::{Error, Result};
use crate::evaluation::{score_predictions, EvalReport};
use crate::scoring::EntailmentScorer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub tau: f64,
    pub grid: Vec<f64>,
    /// Registered decoder name: `viterbi` (word mode) or `span-greedy`.
    pub decoder: String,
    /// Registered NULL-column strategy: `null-template` or `complement`.
    pub null_strategy: String,
    pub max_span: usize,
    pub threshold: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            tau: 1.0,
            grid: tau_grid(),
            decoder: "viterbi".into(),
            null_strategy: "null-template".into(),
            max_span: crate::instances::DEFAULT_MAX_SPAN,
            threshold: super::SPAN_THRESHOLD,
        }
    }
}

impl DecodeConfig {
    /// Mentions for every sentence, with `tm` supplying the label order.
    pub fn decode(
        &self,
        scorer: &dyn EntailmentScorer,
        sentences: &[&[String]],
        tm: &TransitionModel,
    ) -> Result<Vec<Vec<EntityMention>>> {
        self.validate()?;
        let decoder = (decoder_registry().get(&self.decoder)?)();
        let null = (null_strategy_registry().get(&self.null_strategy)?)();
        let ctx = DecodeContext {
            types: &tm.types,
            transitions: tm,
            tau: self.tau,
            null: null.as_ref(),
            max_span: self.max_span,
            threshold: self.threshold,
        };
        decoder.decode(sentences, scorer, &ctx)
    }

    /// Decodes tagged sentences and scores the result against their tags.
    pub fn evaluate(
        &self,
        scorer: &dyn EntailmentScorer,
        gold: &[TaggedSentence],
        tm: &TransitionModel,
    ) -> Result<EvalReport> {
        let toks: Vec<&[String]> = gold.iter().map(|s| s.tokens.as_slice()).collect();
        score_predictions(gold, &self.decode(scorer, &toks, tm)?)
    }

    pub fn validate(&self) -> Result<()> {
        decoder_registry().get(&self.decoder)?;
        null_strategy_registry().get(&self.null_strategy)?;
        if self.max_span == 0 {
            return Err(Error::Config("max_span must be positive".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::Config("tau grid is empty".into()));
        }
        if let Some(t) = std::iter::once(&self.tau)
            .chain(&self.grid)
            .find(|t| !(0.0..=1.0).contains(*t))
        {
            return Err(Error::Config(format!("tau {t} is outside [0, 1]")));
        }
        Ok(())
    }
}

/// `0.00, 0.05, ..., 1.00`.
pub fn tau_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

fn check(em: &EmissionMatrix, tm: &TransitionModel) -> Result<()> {
    if em.labels() != tm.labels() {
        return Err(Error::Decode(format!(
            "emissions have {} labels, transitions {}",
            em.labels(),
            tm.labels()
        )));
    }
    if let Some(i) = em
        .rows()
        .iter()
        .position(|r| r.iter().any(|&p| !(p > 0.0) || !p.is_finite()))
    {
        return Err(Error::Decode(format!(
            "emission row {i} has a non-positive entry"
        )));
    }
    Ok(())
}

/// `sum_i log em(i, y_i) + tau * log trans(y_{i-1}, y_i)`, with the start
/// vector standing in for the transition at `i = 0`.
pub fn path_score(em: &EmissionMatrix, tm: &TransitionModel, tau: f64, path: &[usize]) -> f64 {
    path.iter()
        .enumerate()
        .map(|(i, &y)| {
            let t = if i == 0 {
                tm.start[y]
            } else {
                tm.trans[path[i - 1]][y]
            };
            em.get(i, y).ln() + tau * t.ln()
        })
        .sum()
}

/// Best label path. Ties prefer the lower label index, both for the
/// backpointer and the final label.
pub fn viterbi(em: &EmissionMatrix, tm: &TransitionModel, tau: f64) -> Result<Vec<usize>> {
    check(em, tm)?;
    let n = em.labels();
    let len = em.len();
    if len == 0 {
        return Ok(Vec::new());
    }
    let log_trans: Vec<Vec<f64>> = tm
        .trans
        .iter()
        .map(|r| r.iter().map(|p| tau * p.ln()).collect())
        .collect();
    let mut score: Vec<f64> = (0..n)
        .map(|y| em.get(0, y).ln() + tau * tm.start[y].ln())
        .collect();
    let mut back = vec![vec![0usize; n]; len];
    for i in 1..len {
        let mut next = vec![f64::NEG_INFINITY; n];
        for y in 0..n {
            let mut best = 0;
            let mut best_s = f64::NEG_INFINITY;
            for (prev, &s) in score.iter().enumerate() {
                let cand = s + log_trans[prev][y];
                if cand > best_s {
                    best_s = cand;
                    best = prev;
                }
            }
            next[y] = best_s + em.get(i, y).ln();
            back[i][y] = best;
        }
        score = next;
    }
    let mut last = 0;
    for y in 1..n {
        if score[y] > score[last] {
            last = y;
        }
    }
    let mut path = vec![last; len];
    for i in (1..len).rev() {
        path[i - 1] = back[i][path[i]];
    }
    Ok(path)
}

/// Maximal runs of one non-NULL label become mentions.
pub fn labels_to_mentions(
    labels: &[usize],
    types: &[String],
    tokens: &[String],
) -> Result<Vec<EntityMention>> {
    if labels.len() != tokens.len() {
        return Err(Error::Argument(format!(
            "{} labels for {} tokens",
            labels.len(),
            tokens.len()
        )));
    }
    let mut out = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        let l = labels[i];
        let mut j = i + 1;
        while j < labels.len() && labels[j] == l {
            j += 1;
        }
        if let Some(t) = types.get(l) {
            out.push(EntityMention::new(tokens, i, j, t.clone()));
        }
        i = j;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSweep {
    pub tau: f64,
    pub f1: f64,
    /// `(tau, dev F1)` for every grid value, in grid order.
    pub curve: Vec<(f64, f64)>,
}

/// Grid value with the best dev F1; ties go to the smaller tau.
pub fn select_tau(
    dev: &[TaggedSentence],
    emissions: &[EmissionMatrix],
    tm: &TransitionModel,
    grid: &[f64],
) -> Result<TauSweep> {
    if dev.is_empty() || grid.is_empty() {
        return Err(Error::Argument(
            "tau selection needs dev sentences and a grid".into(),
        ));
    }
    if dev.len() != emissions.len() {
        return Err(Error::Argument(
            "one emission matrix per dev sentence is required".into(),
        ));
    }
    let mut curve = Vec::with_capacity(grid.len());
    for &tau in grid {
        let pred = dev
            .iter()
            .zip(emissions)
            .map(|(s, em)| labels_to_mentions(&viterbi(em, tm, tau)?, &tm.types, &s.tokens))
            .collect::<Result<Vec<_>>>()?;
        curve.push((tau, score_predictions(dev, &pred)?.f1));
    }
    let mut best = curve[0];
    for &(tau, f1) in &curve[1..] {
        if f1 > best.1 || (f1 == best.1 && tau < best.0) {
            best = (tau, f1);
        }
    }
    Ok(TauSweep {
        tau: best.0,
        f1: best.1,
        curve,
    })
}
