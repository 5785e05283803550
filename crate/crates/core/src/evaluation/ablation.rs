use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Toggle {
    DropNullNegatives,
    DropFpNegatives,
    DropNonentNegatives,
    DisableLabelConditioning,
    SoftMode,
    DiscreteMode,
}

impl Toggle {
    pub const ALL: [Toggle; 6] = [
        Toggle::DropNullNegatives,
        Toggle::DropFpNegatives,
        Toggle::DropNonentNegatives,
        Toggle::DisableLabelConditioning,
        Toggle::SoftMode,
        Toggle::DiscreteMode,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Toggle::DropNullNegatives => "drop_null_negatives",
            Toggle::DropFpNegatives => "drop_fp_negatives",
            Toggle::DropNonentNegatives => "drop_nonent_negatives",
            Toggle::DisableLabelConditioning => "disable_label_conditioning",
            Toggle::SoftMode => "soft_mode",
            Toggle::DiscreteMode => "discrete_mode",
        }
    }
}

impl fmt::Display for Toggle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Toggle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Toggle::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown ablation toggle {s:?}")))
    }
}

/// The reference configuration, or the reference with one toggle applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setting {
    Full,
    Toggled(Toggle),
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setting::Full => f.write_str("full"),
            Setting::Toggled(t) => t.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationPlan {
    pub toggles: Vec<Toggle>,
    pub patterns: Vec<u8>,
    pub k_values: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Whether the reference run uses soft prompts; decides which of the
    /// two mode toggles duplicates it.
    pub reference_soft: bool,
}

impl Default for AblationPlan {
    fn default() -> Self {
        AblationPlan {
            toggles: Vec::new(),
            patterns: vec![1],
            k_values: vec![10],
            seeds: vec![0],
            reference_soft: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AblationCell {
    pub pattern: u8,
    pub setting: Setting,
    pub k: usize,
    pub seed: u64,
}

impl AblationPlan {
    pub fn validate(&self) -> Result<()> {
        if self.patterns.is_empty() || self.k_values.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config(
                "ablation plan needs patterns, K values and seeds".into(),
            ));
        }
        if let Some(p) = self.patterns.iter().find(|p| !(1..=4).contains(*p)) {
            return Err(Error::Config(format!("pattern {p} is not one of 1-4")));
        }
        Ok(())
    }

    /// `full` plus one setting per toggle; a mode toggle equal to the
    /// reference mode adds nothing.
    pub fn settings(&self) -> Vec<Setting> {
        let mut out = vec![Setting::Full];
        for &t in &self.toggles {
            let redundant = matches!(
                (t, self.reference_soft),
                (Toggle::SoftMode, true) | (Toggle::DiscreteMode, false)
            );
            let s = Setting::Toggled(t);
            if !redundant && !out.contains(&s) {
                out.push(s);
            }
        }
        out
    }

    pub fn cells(&self) -> Result<Vec<AblationCell>> {
        self.validate()?;
        let mut out = Vec::new();
        for &pattern in &self.patterns {
            for setting in self.settings() {
                for &k in &self.k_values {
                    for &seed in &self.seeds {
                        out.push(AblationCell {
                            pattern,
                            setting,
                            k,
                            seed,
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub cell: AblationCell,
    pub f1: Option<f64>,
    /// Dev F1 at each evaluation step, for learning curves.
    pub curve: Vec<(usize, f64)>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub outcomes: Vec<CellOutcome>,
}

impl AblationTable {
    /// Mean F1 over seeds and K for every (pattern, setting) that produced one.
    pub fn summary(&self) -> BTreeMap<(u8, Setting), f64> {
        let mut acc: BTreeMap<(u8, Setting), (f64, usize)> = BTreeMap::new();
        for o in &self.outcomes {
            if let Some(f) = o.f1 {
                let e = acc.entry((o.cell.pattern, o.cell.setting)).or_default();
                e.0 += f;
                e.1 += 1;
            }
        }
        acc.into_iter()
            .map(|(k, (s, n))| (k, s / n as f64))
            .collect()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("pattern\tsetting\tk\tseed\tf1\tnote\n");
        for o in &self.outcomes {
            let f1 = o.f1.map_or_else(|| "-".to_string(), |f| format!("{f:.4}"));
            let note = o.error.as_deref().unwrap_or("");
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{f1}\t{note}",
                o.cell.pattern, o.cell.setting, o.cell.k, o.cell.seed
            );
        }
        out
    }
}

/// Runs every cell; a failing cell is recorded and the rest continue.
pub fn run_ablation(
    plan: &AblationPlan,
    mut run: impl FnMut(&AblationCell) -> Result<(f64, Vec<(usize, f64)>)>,
) -> Result<AblationTable> {
    let mut outcomes = Vec::new();
    for cell in plan.cells()? {
        let outcome = match run(&cell) {
            Ok((f1, curve)) => CellOutcome {
                cell,
                f1: Some(f1),
                curve,
                error: None,
            },
            Err(e) => {
                log::warn!("ablation cell {cell:?} failed: {e}");
                CellOutcome {
                    cell,
                    f1: None,
                    curve: Vec::new(),
                    error: Some(e.to_string()),
                }
            }
        };
        outcomes.push(outcome);
    }
    Ok(AblationTable { outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expansion() {
        let plan = AblationPlan::default();
        assert_eq!(plan.cells().unwrap().len(), 1);
        let plan = AblationPlan {
            toggles: vec![Toggle::SoftMode, Toggle::DiscreteMode],
            ..AblationPlan::default()
        };
        assert_eq!(
            plan.settings(),
            [Setting::Full, Setting::Toggled(Toggle::SoftMode)]
        );
        let plan = AblationPlan {
            patterns: vec![1, 2, 3, 4],
            ..AblationPlan::default()
        };
        assert_eq!(plan.cells().unwrap().len(), 4);
        assert!(AblationPlan {
            patterns: vec![5],
            ..AblationPlan::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn failures_are_recorded() {
        let plan = AblationPlan {
            toggles: vec![Toggle::DropNullNegatives],
            seeds: vec![0, 1],
            ..AblationPlan::default()
        };
        let table = run_ablation(&plan, |c| match c.seed {
            0 => Ok((0.5, vec![(0, 0.5)])),
            _ => Err(Error::Argument("boom".into())),
        })
        .unwrap();
        assert_eq!(table.outcomes.len(), 4);
        assert_eq!(
            table.outcomes.iter().filter(|o| o.error.is_some()).count(),
            2
        );
        assert_eq!(table.summary()[&(1, Setting::Full)], 0.5);
        assert!("drop_null_negatives".parse::<Toggle>().is_ok());
    }
}
