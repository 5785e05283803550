use super::{run_pipeline, PipelineConfig, Splits, TrainOptions};
use crate::corpus::{kshot_sample, KShotConfig, TaggedSentence};
use crate::error::{Error, Result};
use crate::evaluation::{run_ablation, AblationCell, AblationPlan, AblationTable, Setting, Toggle};
use crate::prompting::TemplateKind;
use crate::scoring::backend::MaskedLm;

impl PipelineConfig {
    /// The configuration of one ablation cell: pattern, seeds and the
    /// cell's toggle applied on top of `self`.
    pub fn for_cell(&self, cell: &AblationCell) -> PipelineConfig {
        let mut cfg = self.clone();
        cfg.pattern_id = cell.pattern;
        cfg.train.seed = cell.seed;
        cfg.sampling.seed = cell.seed;
        if let Setting::Toggled(t) = cell.setting {
            match t {
                Toggle::DropNullNegatives => {
                    cfg.sampling = cfg.sampling.without(TemplateKind::NullCandidate)
                }
                Toggle::DropFpNegatives => {
                    cfg.sampling = cfg.sampling.without(TemplateKind::FalsePositive)
                }
                Toggle::DropNonentNegatives => {
                    cfg.sampling = cfg.sampling.without(TemplateKind::NonEntity)
                }
                Toggle::DisableLabelConditioning => cfg.train.label_conditioning = false,
                Toggle::SoftMode => cfg.soft = Some(self.soft.clone().unwrap_or_default()),
                Toggle::DiscreteMode => cfg.soft = None,
            }
        }
        cfg
    }
}

/// Where ablation cells draw their data: K-shot training sets are sampled
/// from `pool` with the cell's seed; `dev` and `test` are fixed.
#[derive(Debug, Clone, Copy)]
pub struct AblationData<'a> {
    pub pool: &'a [TaggedSentence],
    pub dev: &'a [TaggedSentence],
    pub test: &'a [TaggedSentence],
}

/// Trains and scores every cell of `plan`. A cell's score is its test F1,
/// or its best dev F1 when there is no test split.
pub fn ablate(
    backbone: &dyn MaskedLm,
    data: AblationData<'_>,
    base: &PipelineConfig,
    plan: &AblationPlan,
) -> Result<AblationTable> {
    let reference = AblationPlan {
        reference_soft: base.soft.is_some(),
        ..plan.clone()
    };
    run_ablation(&reference, |cell| {
        let cfg = base.for_cell(cell);
        let train = kshot_sample(data.pool, &KShotConfig::new(cell.k, cell.seed))?;
        let mut opts = TrainOptions::default();
        opts.lineage.k = Some(cell.k);
        opts.lineage
            .notes
            .insert("setting".into(), cell.setting.to_string());
        let out = run_pipeline(
            backbone,
            Splits {
                train: &train,
                dev: data.dev,
                test: data.test,
            },
            &cfg,
            &opts,
        )?;
        let curve = out.record.evals.iter().map(|e| (e.step, e.score)).collect();
        let f1 = match (&out.test, out.record.best_score) {
            (Some(r), _) => r.f1,
            (None, Some(best)) => best,
            (None, None) => {
                return Err(Error::Argument(
                    "ablation cell has neither dev nor test data".into(),
                ))
            }
        };
        Ok((f1, curve))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toggles_change_only_their_field() {
        let base = PipelineConfig::default();
        let cell = |setting| AblationCell {
            pattern: 3,
            setting,
            k: 10,
            seed: 7,
        };
        let full = base.for_cell(&cell(Setting::Full));
        assert_eq!(
            (full.pattern_id, full.train.seed, full.sampling.seed),
            (3, 7, 7)
        );

        let dropped = base.for_cell(&cell(Setting::Toggled(Toggle::DropNullNegatives)));
        assert_eq!(dropped.sampling.weight(TemplateKind::NullCandidate), 0.0);
        assert_eq!(
            PipelineConfig {
                sampling: full.sampling.clone(),
                ..dropped.clone()
            },
            full
        );

        let soft = base.for_cell(&cell(Setting::Toggled(Toggle::SoftMode)));
        assert!(soft.soft.is_some());
        assert!(
            !base
                .for_cell(&cell(Setting::Toggled(Toggle::DisableLabelConditioning)))
                .train
                .label_conditioning
        );
    }
}
