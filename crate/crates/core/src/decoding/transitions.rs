use serde::{Deserialize, Serialize};

use crate::corpus::TaggedSentence;
use crate::error::{Error, Result};

/// Word-level label bigrams; label `types.len()` is NULL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    pub types: Vec<String>,
    pub trans: Vec<Vec<f64>>,
    pub start: Vec<f64>,
}

impl TransitionModel {
    pub fn labels(&self) -> usize {
        self.types.len() + 1
    }

    /// Label index of a word label; unknown types map to NULL.
    pub fn index(&self, label: Option<&str>) -> usize {
        label
            .and_then(|t| self.types.iter().position(|x| x == t))
            .unwrap_or(self.types.len())
    }
}

/// Add-one smoothed counts, normalized per row. The start vector is
/// smoothed the same way.
pub fn estimate_transitions(train: &[TaggedSentence], types: &[String]) -> Result<TransitionModel> {
    if train.is_empty() {
        return Err(Error::Argument(
            "transition estimation needs training sentences".into(),
        ));
    }
    let n = types.len() + 1;
    let mut model = TransitionModel {
        types: types.to_vec(),
        trans: vec![vec![1.0; n]; n],
        start: vec![1.0; n],
    };
    for s in train {
        let labels: Vec<usize> = s
            .word_labels()
            .into_iter()
            .map(|l| model.index(l))
            .collect();
        if let Some(&first) = labels.first() {
            model.start[first] += 1.0;
        }
        for w in labels.windows(2) {
            model.trans[w[0]][w[1]] += 1.0;
        }
    }
    let norm = |row: &mut Vec<f64>| {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
    };
    model.trans.iter_mut().for_each(norm);
    norm(&mut model.start);
    Ok(model)
}
