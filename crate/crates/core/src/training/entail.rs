use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::runner::{run, Task};
use super::{RunRecord, TrainConfig, TrainOptions};
use crate::corpus::TaggedSentence;
use crate::decoding::{DecodeConfig, TransitionModel};
use crate::error::{Error, Result};
use crate::instances::EntailmentInstance;
use crate::prompting::{Answer, MaskedInput};
use crate::scoring::backend::cpu;
use crate::scoring::{
    mask_for_mlm, mean_token_loss, objective_registry, ForwardCtx, Objective, PromptModel,
};

const MLM_SALT: u64 = 0x5eed_0f_3a5c;

/// What the entailment trainer evaluates against.
pub struct EntailDev<'a> {
    pub sentences: &'a [TaggedSentence],
    pub transitions: &'a TransitionModel,
    pub decode: &'a DecodeConfig,
}

struct EntailTask<'a> {
    model: &'a PromptModel,
    examples: Vec<(MaskedInput, Answer)>,
    objective: Box<dyn Objective>,
    cfg: &'a TrainConfig,
    dev: Option<EntailDev<'a>>,
}

fn to_rows(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    Ok(t.detach().to_dtype(DType::F64)?.to_vec2::<f64>()?)
}

fn grad_tensor(rows: Vec<Vec<f64>>, width: usize) -> Result<Tensor> {
    let n = rows.len();
    let flat: Vec<f32> = rows.into_iter().flatten().map(|x| x as f32).collect();
    Ok(Tensor::from_vec(flat, (n, width), &cpu())?)
}

impl EntailTask<'_> {
    /// Label loss plus, when enabled, label-conditioned MLM; returns the
    /// scalar loss and the surrogate whose gradient is the true gradient.
    fn losses(
        &self,
        idx: &[usize],
        denom: f64,
        step: usize,
        ctx: &mut ForwardCtx,
    ) -> Result<(f64, Tensor)> {
        let ids = self.model.verbalizer_ids();
        let inputs: Vec<MaskedInput> = idx.iter().map(|&i| self.examples[i].0.clone()).collect();
        let logits = self.model.mask_logits(&inputs, ctx)?;
        let width = logits.dim(1)?;
        let mut loss = 0.0;
        let mut grads = Vec::with_capacity(idx.len());
        for (row, &i) in to_rows(&logits)?.iter().zip(idx) {
            let (l, g) = self.objective.label_loss(row, &ids, self.examples[i].1)?;
            loss += l / denom;
            grads.push(g.into_iter().map(|x| x / denom).collect());
        }
        let mut surrogate = (logits * grad_tensor(grads, width)?)?.sum_all()?;

        if self.cfg.label_conditioning {
            let vocab = self.model.backend().vocab();
            let verbalizer = &self.model.setup().verbalizer;
            let mut masked = Vec::new();
            for &i in idx {
                let (input, answer) = &self.examples[i];
                let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ MLM_SALT);
                rng.set_stream(((step as u64) << 32) | i as u64);
                let answered = input.with_answer(verbalizer.word(*answer));
                if let Some(ex) = mask_for_mlm(&answered, vocab, self.cfg.mask_rate, &mut rng) {
                    masked.push(ex);
                }
            }
            if !masked.is_empty() {
                let inputs: Vec<MaskedInput> = masked.iter().map(|e| e.input.clone()).collect();
                let positions: Vec<Vec<usize>> =
                    masked.iter().map(|e| e.positions.clone()).collect();
                let logits = self.model.logits_at(&inputs, &positions, ctx)?;
                let rows = to_rows(&logits)?;
                let mut grads = Vec::with_capacity(rows.len());
                let mut at = 0;
                for ex in &masked {
                    let n = ex.positions.len();
                    let (l, g) = mean_token_loss(&rows[at..at + n], &ex.targets);
                    loss += l / denom;
                    grads.extend(
                        g.into_iter()
                            .map(|r| r.into_iter().map(|x| x / denom).collect::<Vec<_>>()),
                    );
                    at += n;
                }
                surrogate = (surrogate + (logits * grad_tensor(grads, width)?)?.sum_all()?)?;
            }
        }
        Ok((loss, surrogate))
    }
}

impl Task for EntailTask<'_> {
    fn len(&self) -> usize {
        self.examples.len()
    }

    fn vars(&self) -> Vec<(String, Var)> {
        self.model.trainable()
    }

    fn micro_step(
        &self,
        idx: &[usize],
        denom: f64,
        step: usize,
        ctx: &mut ForwardCtx,
    ) -> Result<(f64, Option<GradStore>)> {
        let (loss, surrogate) = self.losses(idx, denom, step, ctx)?;
        if !loss.is_finite() {
            return Ok((loss, None));
        }
        Ok((loss, Some(surrogate.backward()?)))
    }

    fn evaluate(&self) -> Result<Option<f64>> {
        match &self.dev {
            Some(dev) if !dev.sentences.is_empty() => Ok(Some(
                dev.decode
                    .evaluate(self.model, dev.sentences, dev.transitions)?
                    .f1,
            )),
            _ => Ok(None),
        }
    }

    fn save_model(&self, dir: &Path) -> Result<()> {
        self.model.save(dir)
    }
}

fn task<'a>(
    model: &'a PromptModel,
    instances: &[EntailmentInstance],
    cfg: &'a TrainConfig,
    dev: Option<EntailDev<'a>>,
) -> Result<EntailTask<'a>> {
    if instances.is_empty() {
        return Err(Error::Argument("no training instances".into()));
    }
    let examples = instances
        .iter()
        .map(|inst| Ok((model.instance_input(inst)?, inst.answer)))
        .collect::<Result<Vec<_>>>()?;
    let objective = (objective_registry().get(&cfg.objective)?)();
    Ok(EntailTask {
        model,
        examples,
        objective,
        cfg,
        dev,
    })
}

/// Fine-tunes `model` in place on entailment instances and leaves it at the
/// best dev checkpoint.
pub fn train_entailment(
    model: &PromptModel,
    instances: &[EntailmentInstance],
    cfg: &TrainConfig,
    dev: Option<EntailDev<'_>>,
    opts: &TrainOptions,
) -> Result<RunRecord> {
    let t = task(model, instances, cfg, dev)?;
    run(&t, cfg, opts, "dev_f1")
}

/// Loss and gradients of the first optimizer step without updating the
/// model, with dropout disabled.
pub fn first_step_gradients(
    model: &PromptModel,
    instances: &[EntailmentInstance],
    cfg: &TrainConfig,
) -> Result<(f64, std::collections::HashMap<String, Tensor>)> {
    let cfg = TrainConfig {
        dropout: 0.0,
        ..cfg.clone()
    };
    let t = task(model, instances, &cfg, None)?;
    let vars = t.vars();
    let n = t.len();
    super::runner::step_gradients(&t, &cfg, &mut |g| g % n, 0, &vars)
}
