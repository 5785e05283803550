//! Optimization: the entailment objective, the token-classification
//! baseline, backbone pretraining, and the end-to-end pipelines.

mod ablation;
mod baseline;
mod config;
mod entail;
mod optim;
mod pipeline;
mod pretrain;
mod runner;

pub use ablation::{ablate, AblationData};
pub use baseline::{train_baseline, BaselineTagger};
pub use config::{TrainConfig, BATCH_GRID, LR_GRID, WEIGHT_DECAY_GRID};
pub use entail::{first_step_gradients, train_entailment, EntailDev};
pub use optim::{grad_norm, AdamW};
pub use pipeline::{
    fit, run_pipeline, sweep_tau, transfer_pipeline, PipelineConfig, PipelineOutcome, Splits,
    TransferOutcome,
};
pub use pretrain::{backbone_vocab, pretrain_backbone};
pub use runner::{EvalPoint, Lineage, RunRecord, TrainOptions};
