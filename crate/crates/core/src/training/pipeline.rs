use serde::{Deserialize, Serialize};

use super::{train_entailment, EntailDev, RunRecord, TrainConfig, TrainOptions};
use crate::corpus::{type_inventory, TaggedSentence};
use crate::decoding::{
    build_emissions_many, estimate_transitions, null_strategy_registry, select_tau, DecodeConfig,
    TauSweep, TransitionModel,
};
use crate::error::{Error, Result};
use crate::evaluation::EvalReport;
use crate::instances::{EntailmentInstance, InstanceBuilder, SamplingConfig};
use crate::prompting::{CandidateMode, SoftPromptSpec, TypeNames, Verbalizer};
use crate::scoring::backend::{clone_backend, MaskedLm};
use crate::scoring::{PromptModel, PromptSetup, SoftmaxScope};

/// Everything that shapes one entailment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub pattern_id: u8,
    pub mode: CandidateMode,
    pub verbalizer: Verbalizer,
    pub soft: Option<SoftPromptSpec>,
    pub type_names: TypeNames,
    pub scope: SoftmaxScope,
    pub max_span: usize,
    pub sampling: SamplingConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    /// Pick tau on dev after training instead of using `decode.tau`.
    pub select_tau: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            pattern_id: 1,
            mode: CandidateMode::Word,
            verbalizer: Verbalizer::default(),
            soft: None,
            type_names: TypeNames::default(),
            scope: SoftmaxScope::Verbalizer,
            max_span: crate::instances::DEFAULT_MAX_SPAN,
            sampling: SamplingConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            select_tau: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampling.validate()?;
        self.train.validate()?;
        self.decode.validate()?;
        if let Some(s) = &self.soft {
            s.validate()?;
        }
        let span_decoder = self.decode.decoder == "span-greedy";
        if span_decoder != (self.mode == CandidateMode::Span) {
            return Err(Error::Config(format!(
                "decoder {} does not fit {:?} candidates",
                self.decode.decoder, self.mode
            )));
        }
        Ok(())
    }

    pub fn setup(&self, entity_types: Vec<String>) -> PromptSetup {
        PromptSetup {
            pattern_id: self.pattern_id,
            mode: self.mode,
            verbalizer: self.verbalizer.clone(),
            soft: self.soft.clone(),
            type_names: self.type_names.clone(),
            entity_types,
            scope: self.scope,
            max_seq_len: self.train.max_seq_len,
        }
    }

    pub fn builder(&self) -> InstanceBuilder {
        let mut b = InstanceBuilder::new(self.mode, self.pattern_id);
        b.type_names = self.type_names.clone();
        b.max_span_length = self.max_span;
        b
    }

    pub fn instances(
        &self,
        train: &[TaggedSentence],
        types: &[String],
    ) -> Result<Vec<EntailmentInstance>> {
        self.builder().build(train, &self.sampling, types)
    }
}

/// Data splits of one domain.
#[derive(Debug, Clone, Copy)]
pub struct Splits<'a> {
    pub train: &'a [TaggedSentence],
    pub dev: &'a [TaggedSentence],
    pub test: &'a [TaggedSentence],
}

pub struct PipelineOutcome {
    pub model: PromptModel,
    pub record: RunRecord,
    pub transitions: TransitionModel,
    pub tau: f64,
    pub tau_sweep: Option<TauSweep>,
    pub test: Option<EvalReport>,
    pub instances: usize,
}

/// Tau chosen on dev for the model's current weights.
pub fn sweep_tau(
    model: &PromptModel,
    dev: &[TaggedSentence],
    tm: &TransitionModel,
    decode: &DecodeConfig,
) -> Result<TauSweep> {
    let null = (null_strategy_registry().get(&decode.null_strategy)?)();
    let toks: Vec<&[String]> = dev.iter().map(|s| s.tokens.as_slice()).collect();
    let ems = build_emissions_many(&toks, model, &tm.types, null.as_ref())?;
    select_tau(dev, &ems, tm, &decode.grid)
}

/// Trains an existing model on `splits`, re-estimating transitions from
/// `splits.train`, then picks tau and scores the test split.
pub fn fit(
    model: PromptModel,
    splits: Splits<'_>,
    cfg: &PipelineConfig,
    opts: &TrainOptions,
) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let types = model.setup().entity_types.clone();
    let instances = cfg.instances(splits.train, &types)?;
    let tm = estimate_transitions(splits.train, &types)?;
    let mut opts = opts.clone();
    opts.lineage.train_sentences = splits.train.len();
    opts.lineage.examples = instances.len();
    opts.lineage.sampler_seed.get_or_insert(cfg.sampling.seed);
    let dev = EntailDev {
        sentences: splits.dev,
        transitions: &tm,
        decode: &cfg.decode,
    };
    let record = train_entailment(&model, &instances, &cfg.train, Some(dev), &opts)?;
    let word_mode = cfg.decode.decoder == "viterbi";
    let tau_sweep = match (cfg.select_tau && word_mode, splits.dev.is_empty()) {
        (true, false) => Some(sweep_tau(&model, splits.dev, &tm, &cfg.decode)?),
        _ => None,
    };
    let tau = tau_sweep.as_ref().map_or(cfg.decode.tau, |s| s.tau);
    let decode = DecodeConfig {
        tau,
        ..cfg.decode.clone()
    };
    let test = match splits.test.is_empty() {
        true => None,
        false => Some(decode.evaluate(&model, splits.test, &tm)?),
    };
    Ok(PipelineOutcome {
        model,
        record,
        transitions: tm,
        tau,
        tau_sweep,
        test,
        instances: instances.len(),
    })
}

/// Builds a prompt model on a copy of `backbone` and runs [`fit`].
pub fn run_pipeline(
    backbone: &dyn MaskedLm,
    splits: Splits<'_>,
    cfg: &PipelineConfig,
    opts: &TrainOptions,
) -> Result<PipelineOutcome> {
    let types = type_inventory(splits.train);
    if types.is_empty() {
        return Err(Error::Argument(
            "training data has no entity mentions".into(),
        ));
    }
    let model = PromptModel::new(clone_backend(backbone)?, cfg.setup(types))?;
    fit(model, splits, cfg, opts)
}

pub struct TransferOutcome {
    pub rich: PipelineOutcome,
    pub low: PipelineOutcome,
}

/// Rich-domain training, then continued training on the low-resource
/// domain with every parameter carried over.
pub fn transfer_pipeline(
    backbone: &dyn MaskedLm,
    rich: Splits<'_>,
    low: Splits<'_>,
    rich_cfg: &PipelineConfig,
    low_cfg: &PipelineConfig,
    opts: &TrainOptions,
) -> Result<TransferOutcome> {
    let mut rich_opts = opts.clone();
    rich_opts.checkpoint_dir = opts.checkpoint_dir.as_ref().map(|d| d.join("rich"));
    let mut first = run_pipeline(backbone, rich, rich_cfg, &rich_opts)?;
    let low_types = type_inventory(low.train);
    let carried = first
        .model
        .try_clone()?
        .retarget(low_types, low_cfg.type_names.clone())?;
    let mut low_opts = opts.clone();
    low_opts.checkpoint_dir = opts.checkpoint_dir.as_ref().map(|d| d.join("low"));
    low_opts
        .lineage
        .notes
        .insert("stage".into(), "transfer".into());
    let second = fit(carried, low, low_cfg, &low_opts)?;
    first
        .record
        .lineage
        .notes
        .insert("stage".into(), "rich".into());
    Ok(TransferOutcome {
        rich: first,
        low: second,
    })
}
