use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::runner::{run, Task};
use super::{RunRecord, TrainConfig, TrainOptions};
use crate::error::{Error, Result};
use crate::prompting::{
    split_words, CandidateMode, PatternLayout, Segment, TemplateKind, TemplateSet, TypeNames,
    Verbalizer,
};
use crate::scoring::backend::{cpu, encode_id_batch, save_backbone, MaskedLm};
use crate::scoring::{mean_token_loss, mlm_count, ForwardCtx, Vocab};

/// Vocabulary covering `text` plus every word a prompt can introduce:
/// template words, pattern literals, type names and common verbalizers.
pub fn backbone_vocab(text: &[Vec<String>], types: &[String], names: &TypeNames) -> Vocab {
    let mut extra: Vec<String> = Vec::new();
    for mode in [CandidateMode::Word, CandidateMode::Span] {
        let set = TemplateSet::for_mode(mode);
        for kind in TemplateKind::ALL {
            extra.extend(split_words(&set.get(kind).text_form));
        }
    }
    for p in PatternLayout::all() {
        for seg in p.segments() {
            if let Segment::Text(t) = seg {
                extra.extend(t.split_whitespace().map(String::from));
            }
        }
    }
    for t in types {
        extra.extend(names.name(t).split_whitespace().map(String::from));
    }
    for v in [Verbalizer::yes_no(), Verbalizer::true_false()] {
        extra.push(v.entail);
        extra.push(v.contradict);
    }
    let words = text
        .iter()
        .flatten()
        .map(String::as_str)
        .chain(extra.iter().map(String::as_str));
    Vocab::build(words, 1)
}

struct Masked {
    ids: Vec<u32>,
    positions: Vec<usize>,
    targets: Vec<usize>,
}

/// Hides `ceil(rate * n)` word positions: 80% become `[MASK]`, 10% a random
/// word, 10% stay.
fn mask_sequence(
    seq: &[u32],
    vocab: &Vocab,
    rate: f64,
    rng: &mut impl Rng,
    always_mask: bool,
) -> Masked {
    let content = seq.len().saturating_sub(2);
    let n = mlm_count(rate, content).max(usize::from(content > 0));
    let mut positions: Vec<usize> = rand::seq::index::sample(rng, content, n)
        .into_iter()
        .map(|p| p + 1)
        .collect();
    positions.sort_unstable();
    let mask = vocab.id(&vocab.boundary().mask);
    let first_word = crate::scoring::Vocab::SPECIALS.len() as u32;
    let mut ids = seq.to_vec();
    for &p in &positions {
        let r: f64 = if always_mask { 0.0 } else { rng.random() };
        if r < 0.8 {
            ids[p] = mask;
        } else if r < 0.9 && (vocab.len() as u32) > first_word {
            ids[p] = rng.random_range(first_word..vocab.len() as u32);
        }
    }
    let targets = positions.iter().map(|&p| seq[p] as usize).collect();
    Masked {
        ids,
        positions,
        targets,
    }
}

struct MlmTask<'a> {
    model: &'a dyn MaskedLm,
    train: Vec<Vec<u32>>,
    held_out: Vec<Vec<u32>>,
    cfg: &'a TrainConfig,
}

impl MlmTask<'_> {
    fn logits(&self, batch: &[Masked], ctx: &mut ForwardCtx) -> Result<Tensor> {
        let seqs: Vec<Vec<u32>> = batch.iter().map(|m| m.ids.clone()).collect();
        let (hidden, len) = encode_id_batch(self.model, &seqs, ctx)?;
        let d = self.model.hidden_size();
        let idx: Vec<u32> = batch
            .iter()
            .enumerate()
            .flat_map(|(r, m)| m.positions.iter().map(move |&p| (r * len + p) as u32))
            .collect();
        let idx = Tensor::from_vec(idx.clone(), idx.len(), &cpu())?;
        let rows = hidden
            .reshape((batch.len() * len, d))?
            .index_select(&idx, 0)?;
        self.model.mlm_logits(&rows)
    }
}

impl Task for MlmTask<'_> {
    fn len(&self) -> usize {
        self.train.len()
    }

    fn vars(&self) -> Vec<(String, Var)> {
        self.model
            .params()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    fn micro_step(
        &self,
        idx: &[usize],
        denom: f64,
        step: usize,
        ctx: &mut ForwardCtx,
    ) -> Result<(f64, Option<GradStore>)> {
        let vocab = self.model.vocab();
        let batch: Vec<Masked> = idx
            .iter()
            .map(|&i| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
                rng.set_stream(((step as u64) << 32) | i as u64);
                mask_sequence(&self.train[i], vocab, self.cfg.mask_rate, &mut rng, false)
            })
            .filter(|m| !m.positions.is_empty())
            .collect();
        if batch.is_empty() {
            return Ok((0.0, None));
        }
        let logits = self.logits(&batch, ctx)?;
        let width = logits.dim(1)?;
        let rows = logits.detach().to_dtype(DType::F64)?.to_vec2::<f64>()?;
        let mut loss = 0.0;
        let mut grads: Vec<f32> = Vec::with_capacity(rows.len() * width);
        let mut at = 0;
        for m in &batch {
            let n = m.positions.len();
            let (l, g) = mean_token_loss(&rows[at..at + n], &m.targets);
            loss += l / denom;
            grads.extend(g.into_iter().flatten().map(|x| (x / denom) as f32));
            at += n;
        }
        let g = Tensor::from_vec(grads, (rows.len(), width), &cpu())?;
        Ok((loss, Some((logits * g)?.sum_all()?.backward()?)))
    }

    /// Masked-token accuracy on held-out text with fixed masks.
    fn evaluate(&self) -> Result<Option<f64>> {
        if self.held_out.is_empty() {
            return Ok(None);
        }
        let vocab = self.model.vocab();
        let (mut hits, mut total) = (0usize, 0usize);
        for (c, chunk) in self.held_out.chunks(64).enumerate() {
            let batch: Vec<Masked> = chunk
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(0);
                    rng.set_stream((c * 64 + i) as u64);
                    mask_sequence(s, vocab, self.cfg.mask_rate, &mut rng, true)
                })
                .filter(|m| !m.positions.is_empty())
                .collect();
            if batch.is_empty() {
                continue;
            }
            let rows = self
                .logits(&batch, &mut ForwardCtx::eval())?
                .detach()
                .to_dtype(DType::F64)?
                .to_vec2::<f64>()?;
            let targets = batch.iter().flat_map(|m| m.targets.iter().copied());
            for (row, t) in rows.iter().zip(targets) {
                let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                hits += usize::from(best == t);
                total += 1;
            }
        }
        Ok((total > 0).then(|| hits as f64 / total as f64))
    }

    fn save_model(&self, dir: &Path) -> Result<()> {
        save_backbone(self.model, dir)
    }
}

/// Masked-language-model training of a backbone on word sequences. The
/// dev metric is held-out masked-token accuracy.
pub fn pretrain_backbone(
    model: &dyn MaskedLm,
    text: &[Vec<String>],
    held_out: &[Vec<String>],
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<RunRecord> {
    let vocab = model.vocab();
    let b = vocab.boundary();
    let limit = model.max_len();
    let encode = |s: &Vec<String>| -> Vec<u32> {
        std::iter::once(vocab.id(&b.cls))
            .chain(s.iter().take(limit - 2).map(|w| vocab.id(w)))
            .chain(std::iter::once(vocab.id(&b.sep)))
            .collect()
    };
    let train: Vec<Vec<u32>> = text.iter().filter(|s| !s.is_empty()).map(encode).collect();
    if train.is_empty() {
        return Err(Error::Argument("no pretraining text".into()));
    }
    let task = MlmTask {
        model,
        train,
        held_out: held_out
            .iter()
            .filter(|s| !s.is_empty())
            .map(encode)
            .collect(),
        cfg,
    };
    run(&task, cfg, opts, "mlm_accuracy")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_covers_prompt_words() {
        let text = vec![vec!["kim".to_string(), "smiles".to_string()]];
        let v = backbone_vocab(&text, &["LOC".to_string()], &TypeNames::default());
        for w in [
            "kim", "is", "the", "part", "entity", "not", "name", "location", "yes", "no", "?", ",",
            "``", "''", ".",
        ] {
            assert!(v.contains(w), "{w}");
        }
    }

    #[test]
    fn masking_counts_and_targets() {
        let v = Vocab::build(["a", "b", "c"], 1);
        let seq: Vec<u32> = vec![2, 5, 6, 7, 5, 6, 3];
        let m = mask_sequence(&seq, &v, 0.15, &mut ChaCha8Rng::seed_from_u64(1), true);
        assert_eq!(m.positions.len(), 1);
        let p = m.positions[0];
        assert!((1..6).contains(&p));
        assert_eq!(m.ids[p], v.id("[MASK]"));
        assert_eq!(m.targets, [seq[p] as usize]);
    }
}
