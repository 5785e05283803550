//! Masked-LM scoring of entailment prompts and the training losses.

pub mod backend;
mod losses;
mod mlm;
mod objective;
mod scorer;
mod soft_params;
mod vocab;

pub use backend::{ForwardCtx, MaskedLm};
pub use losses::{
    baseline_loss, decoupled_label_loss, decoupled_label_loss_grad, logsumexp, pet_loss,
    pet_loss_grad, softmax, token_cross_entropy, verbalizer_softmax, BaselineLoss, LinearHead,
    SoftmaxScope, VerbalizerDistribution, VerbalizerIds,
};
pub use mlm::{
    choose_mlm_positions, label_conditioned_mlm_loss, mask_for_mlm, mean_token_loss, mlm_count,
    LcMlmOutcome, MlmExample,
};
pub use objective::{objective_registry, Decoupled, Objective, Pet};
pub use scorer::{PromptModel, PromptSetup, SOFT_FILE};
pub use soft_params::SoftPromptParameters;
pub use vocab::Vocab;

use crate::error::Result;
use crate::prompting::TemplateKind;

/// One hypothesis about one candidate in one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Query<'a> {
    pub tokens: &'a [String],
    pub start: usize,
    pub end: usize,
    pub kind: TemplateKind,
    /// Entity type tag; ignored for null kinds.
    pub entity_type: Option<&'a str>,
}

/// Anything that can put a probability on "the hypothesis holds".
pub trait EntailmentScorer {
    fn entail_probs(&self, queries: &[Query<'_>]) -> Result<Vec<f64>>;
}
