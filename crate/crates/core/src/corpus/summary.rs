use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::TaggedSentence;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub sentence_count: BTreeMap<String, usize>,
    pub type_inventory: BTreeSet<String>,
    pub token_count: usize,
    pub mentions_per_type: BTreeMap<String, usize>,
}

impl DatasetSummary {
    pub fn total_mentions(&self) -> usize {
        self.mentions_per_type.values().sum()
    }
}

/// Counts over named splits, e.g. `[("train", &train), ("dev", &dev)]`.
pub fn summarize(splits: &[(&str, &[TaggedSentence])]) -> DatasetSummary {
    let mut summary = DatasetSummary::default();
    for (name, data) in splits {
        *summary.sentence_count.entry(name.to_string()).or_default() += data.len();
        for s in *data {
            summary.token_count += s.len();
            for m in s.mentions() {
                summary.type_inventory.insert(m.entity_type.clone());
                *summary.mentions_per_type.entry(m.entity_type).or_default() += 1;
            }
        }
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::{SynthConfig, SynthWorld};

    #[test]
    fn mention_totals_agree() {
        let world = SynthWorld::new(3);
        let data = world.corpus(&SynthConfig::default(), 50, 9);
        let summary = summarize(&[("train", &data[..30]), ("test", &data[30..])]);
        let direct: usize = data.iter().map(|s| s.mentions().len()).sum();
        assert_eq!(summary.total_mentions(), direct);
        assert_eq!(summary.sentence_count["train"], 30);
        assert_eq!(summary.type_inventory.len(), 4);
        let json = serde_json::to_string(&summary).unwrap();
        assert_eq!(
            serde_json::from_str::<DatasetSummary>(&json).unwrap(),
            summary
        );
    }
}
