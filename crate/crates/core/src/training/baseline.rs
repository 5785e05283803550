use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::runner::{run, Task};
use super::{RunRecord, TrainConfig, TrainOptions};
use crate::corpus::{EntityMention, Tag, TaggedSentence};
use crate::error::{Error, Result};
use crate::evaluation::{score_predictions, EvalReport};
use crate::scoring::backend::{self, cpu, encode_id_batch, MaskedLm, ParamStore};
use crate::scoring::{baseline_loss, ForwardCtx, LinearHead};

const HEAD_FILE: &str = "head.safetensors";
const LABELS_FILE: &str = "labels.json";
const BACKBONE_DIR: &str = "backbone";

/// Token classifier: a linear BIO head on the backbone's word states.
pub struct BaselineTagger {
    backend: Box<dyn MaskedLm>,
    head: ParamStore,
    pub labels: Vec<String>,
}

impl BaselineTagger {
    pub fn new(backend: Box<dyn MaskedLm>, types: &[String], seed: u64) -> Result<Self> {
        let mut labels = vec!["O".to_string()];
        for t in types {
            labels.push(format!("B-{t}"));
            labels.push(format!("I-{t}"));
        }
        let mut head = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        head.normal(
            "cls.w",
            &[labels.len(), backend.hidden_size()],
            0.02,
            &mut rng,
        )?;
        head.constant("cls.b", &[labels.len()], 0.0)?;
        Ok(BaselineTagger {
            backend,
            head,
            labels,
        })
    }

    pub fn backend(&self) -> &dyn MaskedLm {
        self.backend.as_ref()
    }

    fn linear_head(&self) -> Result<LinearHead> {
        Ok(LinearHead {
            weight: self
                .head
                .get("cls.w")?
                .to_dtype(DType::F64)?
                .to_vec2::<f64>()?,
            bias: self
                .head
                .get("cls.b")?
                .to_dtype(DType::F64)?
                .to_vec1::<f64>()?,
        })
    }

    /// States of the first words of each sentence that fit, stacked.
    fn word_states(
        &self,
        sentences: &[&[String]],
        ctx: &mut ForwardCtx,
    ) -> Result<(Tensor, Vec<usize>)> {
        let vocab = self.backend.vocab();
        let b = vocab.boundary();
        let keep: Vec<usize> = sentences
            .iter()
            .map(|s| s.len().min(self.backend.max_len() - 2))
            .collect();
        let seqs: Vec<Vec<u32>> = sentences
            .iter()
            .zip(&keep)
            .map(|(s, &k)| {
                std::iter::once(vocab.id(&b.cls))
                    .chain(s[..k].iter().map(|w| vocab.id(w)))
                    .chain(std::iter::once(vocab.id(&b.sep)))
                    .collect()
            })
            .collect();
        let (hidden, len) = encode_id_batch(self.backend.as_ref(), &seqs, ctx)?;
        let d = self.backend.hidden_size();
        let idx: Vec<u32> = keep
            .iter()
            .enumerate()
            .flat_map(|(r, &k)| (0..k).map(move |j| (r * len + 1 + j) as u32))
            .collect();
        let idx = Tensor::from_vec(idx.clone(), idx.len(), &cpu())?;
        let rows = hidden
            .reshape((sentences.len() * len, d))?
            .index_select(&idx, 0)?;
        Ok((rows, keep))
    }

    pub fn predict(&self, sentences: &[&[String]]) -> Result<Vec<Vec<EntityMention>>> {
        let head = self.linear_head()?;
        let mut out = Vec::with_capacity(sentences.len());
        for chunk in sentences.chunks(32) {
            let (rows, keep) = self.word_states(chunk, &mut ForwardCtx::eval())?;
            let reps = rows.detach().to_dtype(DType::F64)?.to_vec2::<f64>()?;
            let mut at = 0;
            for (s, &k) in chunk.iter().zip(&keep) {
                let mut tags = Vec::with_capacity(s.len());
                for r in &reps[at..at + k] {
                    let logits = head.logits(r);
                    let best =
                        (0..logits.len()).fold(0, |b, j| if logits[j] > logits[b] { j } else { b });
                    tags.push(self.labels[best].parse::<Tag>().map_err(Error::Argument)?);
                }
                at += k;
                tags.resize(s.len(), Tag::Outside);
                out.push(TaggedSentence::new(s.to_vec(), tags)?.mentions());
            }
        }
        Ok(out)
    }

    pub fn evaluate(&self, gold: &[TaggedSentence]) -> Result<EvalReport> {
        let toks: Vec<&[String]> = gold.iter().map(|s| s.tokens.as_slice()).collect();
        score_predictions(gold, &self.predict(&toks)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        backend::save_backbone(self.backend.as_ref(), &dir.join(BACKBONE_DIR))?;
        self.head.save(&dir.join(HEAD_FILE))?;
        std::fs::write(dir.join(LABELS_FILE), serde_json::to_string(&self.labels)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let labels: Vec<String> = serde_json::from_str(&std::fs::read_to_string(
            dir.join(LABELS_FILE),
        )?)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.join(LABELS_FILE).display())))?;
        let types: Vec<String> = labels
            .iter()
            .filter_map(|l| l.strip_prefix("B-").map(String::from))
            .collect();
        let tagger =
            BaselineTagger::new(backend::load_backbone(&dir.join(BACKBONE_DIR))?, &types, 0)?;
        if tagger.labels != labels {
            return Err(Error::Checkpoint(
                "label inventory does not match the saved head".into(),
            ));
        }
        tagger.head.load_into(&dir.join(HEAD_FILE))?;
        Ok(tagger)
    }
}

struct BaselineTask<'a> {
    tagger: &'a BaselineTagger,
    examples: Vec<(Vec<String>, Vec<usize>)>,
    dev: &'a [TaggedSentence],
}

impl Task for BaselineTask<'_> {
    fn len(&self) -> usize {
        self.examples.len()
    }

    fn vars(&self) -> Vec<(String, Var)> {
        self.tagger
            .backend
            .params()
            .iter()
            .chain(self.tagger.head.iter())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    fn micro_step(
        &self,
        idx: &[usize],
        denom: f64,
        _step: usize,
        ctx: &mut ForwardCtx,
    ) -> Result<(f64, Option<GradStore>)> {
        let sents: Vec<&[String]> = idx.iter().map(|&i| self.examples[i].0.as_slice()).collect();
        let (rows, keep) = self.tagger.word_states(&sents, ctx)?;
        let gold: Vec<usize> = idx
            .iter()
            .zip(&keep)
            .flat_map(|(&i, &k)| self.examples[i].1[..k].iter().copied())
            .collect();
        let reps = rows.detach().to_dtype(DType::F64)?.to_vec2::<f64>()?;
        let bl = baseline_loss(&reps, &gold, &self.tagger.linear_head()?)?;
        let scaled = |m: Vec<Vec<f64>>| -> Result<Tensor> {
            let (r, c) = (m.len(), m.first().map_or(0, Vec::len));
            let flat: Vec<f32> = m
                .into_iter()
                .flatten()
                .map(|x| (x / denom) as f32)
                .collect();
            Ok(Tensor::from_vec(flat, (r, c), &cpu())?)
        };
        let g_b: Vec<f32> = bl.grad_bias.iter().map(|x| (x / denom) as f32).collect();
        let g_b = Tensor::from_vec(g_b, self.tagger.labels.len(), &cpu())?;
        let surrogate = ((rows * scaled(bl.grad_reps)?)?.sum_all()?
            + (self.tagger.head.get("cls.w")? * scaled(bl.grad_weight)?)?.sum_all()?)?;
        let surrogate = (surrogate + (self.tagger.head.get("cls.b")? * g_b)?.sum_all()?)?;
        Ok((bl.loss / denom, Some(surrogate.backward()?)))
    }

    fn evaluate(&self) -> Result<Option<f64>> {
        if self.dev.is_empty() {
            return Ok(None);
        }
        Ok(Some(self.tagger.evaluate(self.dev)?.f1))
    }

    fn save_model(&self, dir: &Path) -> Result<()> {
        self.tagger.save(dir)
    }
}

/// Fine-tunes backbone and head with the token-level cross-entropy.
pub fn train_baseline(
    tagger: &BaselineTagger,
    train: &[TaggedSentence],
    dev: &[TaggedSentence],
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<RunRecord> {
    let examples = train
        .iter()
        .map(|s| {
            let gold = s
                .tags
                .iter()
                .map(|t| {
                    let name = t.to_string();
                    label_index(&tagger.labels, &name)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((s.tokens.clone(), gold))
        })
        .collect::<Result<Vec<_>>>()?;
    let task = BaselineTask {
        tagger,
        examples,
        dev,
    };
    run(&task, cfg, opts, "dev_f1")
}

fn label_index(labels: &[String], tag: &str) -> Result<usize> {
    labels
        .iter()
        .position(|l| l == tag)
        .ok_or_else(|| Error::Argument(format!("tag {tag} is outside the tagger's label set")))
}
