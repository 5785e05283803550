//! Entity-level scoring and the ablation harness.

mod ablation;

pub use ablation::{
    run_ablation, AblationCell, AblationPlan, AblationTable, CellOutcome, Setting, Toggle,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{EntityMention, TaggedSentence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.gold)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }

    fn add(&mut self, other: Counts) {
        self.gold += other.gold;
        self.predicted += other.predicted;
        self.correct += other.correct;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
}

impl From<Counts> for TypeScore {
    fn from(c: Counts) -> Self {
        TypeScore {
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            counts: c,
        }
    }
}

/// Micro-averaged totals plus a per-type breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
    pub per_type: BTreeMap<String, TypeScore>,
}

impl EvalReport {
    pub fn from_counts(per_type: BTreeMap<String, Counts>) -> Self {
        let mut total = Counts::default();
        for c in per_type.values() {
            total.add(*c);
        }
        EvalReport {
            precision: total.precision(),
            recall: total.recall(),
            f1: total.f1(),
            counts: total,
            per_type: per_type.into_iter().map(|(t, c)| (t, c.into())).collect(),
        }
    }

    /// Per-type macro-average of F1.
    pub fn macro_f1(&self) -> f64 {
        if self.per_type.is_empty() {
            return 0.0;
        }
        self.per_type.values().map(|s| s.f1).sum::<f64>() / self.per_type.len() as f64
    }

    /// Plain-text table: one row per type, then the overall row.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>9} {:>9} {:>9} {:>6} {:>6} {:>6}",
            "type", "precision", "recall", "f1", "gold", "pred", "corr"
        );
        let mut row = |name: &str, p: f64, r: f64, f: f64, c: &Counts| {
            let _ = writeln!(
                out,
                "{name:<16} {:>9.4} {:>9.4} {:>9.4} {:>6} {:>6} {:>6}",
                p, r, f, c.gold, c.predicted, c.correct
            );
        };
        for (t, s) in &self.per_type {
            row(t, s.precision, s.recall, s.f1, &s.counts);
        }
        row(
            "overall",
            self.precision,
            self.recall,
            self.f1,
            &self.counts,
        );
        out
    }
}

/// Exact-match scoring: a prediction is correct iff span and type agree.
/// Duplicate predictions count once.
pub fn score_predictions(
    gold: &[TaggedSentence],
    pred: &[Vec<EntityMention>],
) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::Argument(format!(
            "{} gold sentences but {} prediction lists",
            gold.len(),
            pred.len()
        )));
    }
    let mut per_type: BTreeMap<String, Counts> = BTreeMap::new();
    for (s, p) in gold.iter().zip(pred) {
        let key = |m: &EntityMention| (m.start, m.end, m.entity_type.clone());
        let g: BTreeSet<_> = s.mentions().iter().map(key).collect();
        let p: BTreeSet<_> = p.iter().map(key).collect();
        if let Some(bad) = p.iter().find(|(st, en, _)| st >= en || *en > s.len()) {
            return Err(Error::Argument(format!(
                "predicted span [{}, {}) outside a {}-token sentence",
                bad.0,
                bad.1,
                s.len()
            )));
        }
        for m in &g {
            per_type.entry(m.2.clone()).or_default().gold += 1;
        }
        for m in &p {
            let c = per_type.entry(m.2.clone()).or_default();
            c.predicted += 1;
            if g.contains(m) {
                c.correct += 1;
            }
        }
    }
    Ok(EvalReport::from_counts(per_type))
}
