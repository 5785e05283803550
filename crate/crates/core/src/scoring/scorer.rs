use std::path::Path;

use candle_core::{DType, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::backend::{self, cpu, ForwardCtx, MaskedLm};
use super::soft_params::SoftPromptParameters;
use super::{
    verbalizer_softmax, EntailmentScorer, Query, SoftmaxScope, VerbalizerDistribution,
    VerbalizerIds,
};
use crate::error::{Error, Result};
use crate::instances::EntailmentInstance;
use crate::prompting::{
    build_soft_input, render_hypothesis, Boundary, CandidateMode, MaskedInput, PatternLayout, Role,
    SoftPromptSpec, TemplateSet, TypeNames, Verbalizer,
};

pub const SETUP_FILE: &str = "prompt.json";
pub const SOFT_FILE: &str = "soft.safetensors";
const BACKBONE_DIR: &str = "backbone";

/// Everything about the prompt side of a model except its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSetup {
    pub pattern_id: u8,
    pub mode: CandidateMode,
    pub verbalizer: Verbalizer,
    pub soft: Option<SoftPromptSpec>,
    pub type_names: TypeNames,
    /// Tag inventory; fixes the soft-prompt families and decoding columns.
    pub entity_types: Vec<String>,
    pub scope: SoftmaxScope,
    pub max_seq_len: usize,
}

impl PromptSetup {
    pub fn new(entity_types: Vec<String>) -> Self {
        PromptSetup {
            pattern_id: 1,
            mode: CandidateMode::Word,
            verbalizer: Verbalizer::default(),
            soft: None,
            type_names: TypeNames::default(),
            entity_types,
            scope: SoftmaxScope::Verbalizer,
            max_seq_len: 256,
        }
    }
}

/// A masked LM plus a prompt: the entailment scorer that gets fine-tuned.
pub struct PromptModel {
    backend: Box<dyn MaskedLm>,
    setup: PromptSetup,
    pattern: PatternLayout,
    templates: TemplateSet,
    ids: VerbalizerIds,
    boundary: Boundary,
    soft: Option<SoftPromptParameters>,
    pub eval_batch: usize,
}

struct Encoded {
    embeds: Tensor,
    attention: Tensor,
    len: usize,
}

impl PromptModel {
    pub fn new(backend: Box<dyn MaskedLm>, setup: PromptSetup) -> Result<Self> {
        let vocab = backend.vocab();
        let id = |w: &str| {
            vocab.get(w).map(|i| i as usize).ok_or_else(|| {
                Error::Config(format!(
                    "verbalizer word {w:?} is not in the backbone vocabulary"
                ))
            })
        };
        let ids = VerbalizerIds {
            entail: id(&setup.verbalizer.entail)?,
            contradict: id(&setup.verbalizer.contradict)?,
        };
        if setup.max_seq_len < 8 {
            return Err(Error::Config("max_seq_len must be at least 8".into()));
        }
        let pattern = PatternLayout::builtin(setup.pattern_id)?;
        let templates = TemplateSet::for_mode(setup.mode);
        let boundary = vocab.boundary();
        let soft = match &setup.soft {
            Some(spec) => Some(SoftPromptParameters::init(
                spec,
                &templates,
                &setup.entity_types,
                backend.as_ref(),
            )?),
            None => None,
        };
        Ok(PromptModel {
            backend,
            setup,
            pattern,
            templates,
            ids,
            boundary,
            soft,
            eval_batch: 64,
        })
    }

    pub fn backend(&self) -> &dyn MaskedLm {
        self.backend.as_ref()
    }

    pub fn setup(&self) -> &PromptSetup {
        &self.setup
    }

    pub fn verbalizer_ids(&self) -> VerbalizerIds {
        self.ids
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn soft(&self) -> Option<&SoftPromptParameters> {
        self.soft.as_ref()
    }

    fn limit(&self) -> usize {
        self.setup.max_seq_len.min(self.backend.max_len())
    }

    /// The rendered and truncated model input for one query.
    pub fn input(&self, q: &Query<'_>) -> Result<MaskedInput> {
        if q.start >= q.end || q.end > q.tokens.len() {
            return Err(Error::Argument(format!(
                "candidate [{}, {}) outside a {}-token sentence",
                q.start,
                q.end,
                q.tokens.len()
            )));
        }
        let candidate = &q.tokens[q.start..q.end];
        let entity_type = if q.kind.is_null() {
            None
        } else {
            q.entity_type
        };
        let name = entity_type.map(|t| self.setup.type_names.name(t));
        let mut input = match &self.setup.soft {
            Some(spec) => build_soft_input(
                spec,
                &self.templates,
                &self.pattern,
                q.tokens,
                candidate,
                q.kind,
                entity_type,
                name.as_deref(),
                &self.boundary,
            )?,
            None => {
                let template = self.templates.get(q.kind);
                let text = render_hypothesis(template, &candidate.join(" "), name.as_deref())?;
                let hyp: Vec<(String, Role)> = template
                    .tokens(candidate, name.as_deref())
                    .into_iter()
                    .map(|t| (t.text().to_string(), Role::Hypothesis))
                    .collect();
                self.pattern
                    .render(&q.tokens.join(" "), q.tokens, &text, &hyp, &self.boundary)
            }
        };
        input.truncate(self.limit())?;
        Ok(input)
    }

    pub fn instance_input(&self, inst: &EntailmentInstance) -> Result<MaskedInput> {
        let tokens = inst.premise_tokens();
        let p = &inst.provenance;
        self.input(&Query {
            tokens: &tokens,
            start: p.start,
            end: p.end,
            kind: inst.kind,
            entity_type: p.entity_type.as_deref(),
        })
    }

    /// Every trainable variable: backbone weights, then the soft table.
    pub fn trainable(&self) -> Vec<(String, Var)> {
        let mut out: Vec<(String, Var)> = self
            .backend
            .params()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        if let Some(soft) = &self.soft {
            out.extend(soft.params().iter().map(|(k, v)| (k.clone(), v.clone())));
        }
        out
    }

    fn encode_inputs(&self, inputs: &[MaskedInput]) -> Result<Encoded> {
        let vocab = self.backend.vocab();
        let len = inputs.iter().map(MaskedInput::len).max().unwrap_or(0);
        if inputs.is_empty() || len == 0 {
            return Err(Error::Argument("empty batch".into()));
        }
        let b = inputs.len();
        let pad = vocab.pad_id();
        let mut ids = vec![pad; b * len];
        let mut attention = vec![0f32; b * len];
        let mut slot_rows = vec![0u32; b * len];
        let mut slot_mask = vec![0f32; b * len];
        for (r, input) in inputs.iter().enumerate() {
            let rows = match &self.soft {
                Some(soft) => soft.rows_for(&input.tokens, |i| input.roles[i] == Role::Slot)?,
                None if input.roles.contains(&Role::Slot) => {
                    return Err(Error::Argument(
                        "slot tokens given to a discrete-prompt model".into(),
                    ))
                }
                None => vec![None; input.len()],
            };
            for (i, tok) in input.tokens.iter().enumerate() {
                let at = r * len + i;
                ids[at] = vocab.id(tok);
                attention[at] = 1.0;
                if let Some(row) = rows[i] {
                    slot_rows[at] = row;
                    slot_mask[at] = 1.0;
                }
            }
        }
        let dev = cpu();
        let ids = Tensor::from_vec(ids, (b, len), &dev)?;
        let mut embeds = self.backend.embed_ids(&ids)?;
        if let Some(soft) = &self.soft {
            let d = self.backend.hidden_size();
            let rows = Tensor::from_vec(slot_rows, b * len, &dev)?;
            let soft_embeds = soft.table()?.index_select(&rows, 0)?.reshape((b, len, d))?;
            let m = Tensor::from_vec(slot_mask, (b, len, 1), &dev)?;
            let keep = (1.0 - &m)?;
            embeds = (embeds.broadcast_mul(&keep)? + soft_embeds.broadcast_mul(&m)?)?;
        }
        Ok(Encoded {
            embeds,
            attention: Tensor::from_vec(attention, (b, len), &dev)?,
            len,
        })
    }

    /// Vocabulary logits at the given positions of each input, stacked in
    /// order: shape `(sum of positions, V)`.
    pub fn logits_at(
        &self,
        inputs: &[MaskedInput],
        positions: &[Vec<usize>],
        ctx: &mut ForwardCtx,
    ) -> Result<Tensor> {
        let enc = self.encode_inputs(inputs)?;
        let hidden = self.backend.encode(&enc.embeds, &enc.attention, ctx)?;
        let (b, len, d) = hidden.dims3()?;
        let flat: Vec<u32> = positions
            .iter()
            .enumerate()
            .flat_map(|(r, ps)| ps.iter().map(move |&p| (r * enc.len + p) as u32))
            .collect();
        let idx = Tensor::from_vec(flat.clone(), flat.len(), &cpu())?;
        let rows = hidden.reshape((b * len, d))?.index_select(&idx, 0)?;
        self.backend.mlm_logits(&rows)
    }

    /// `(B, V)` logits at each input's mask position.
    pub fn mask_logits(&self, inputs: &[MaskedInput], ctx: &mut ForwardCtx) -> Result<Tensor> {
        let positions: Vec<Vec<usize>> = inputs.iter().map(|i| vec![i.mask_index]).collect();
        self.logits_at(inputs, &positions, ctx)
    }

    /// Verbalizer distributions without dropout, in `eval_batch` chunks.
    pub fn score_inputs(&self, inputs: &[MaskedInput]) -> Result<Vec<VerbalizerDistribution>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(self.eval_batch.max(1)) {
            let logits = self.mask_logits(chunk, &mut ForwardCtx::eval())?.detach();
            for row in logits.to_dtype(DType::F64)?.to_vec2::<f64>()? {
                out.push(verbalizer_softmax(&row, &self.ids, self.setup.scope)?);
            }
        }
        Ok(out)
    }

    /// Writes `prompt.json`, the backbone and, for soft prompts, the slot table.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join(SETUP_FILE),
            serde_json::to_string_pretty(&self.setup)?,
        )?;
        backend::save_backbone(self.backend.as_ref(), &dir.join(BACKBONE_DIR))?;
        if let Some(soft) = &self.soft {
            soft.params().save(&dir.join(SOFT_FILE))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SETUP_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let setup: PromptSetup = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let model = PromptModel::new(backend::load_backbone(&dir.join(BACKBONE_DIR))?, setup)?;
        if let Some(soft) = &model.soft {
            soft.params().load_into(&dir.join(SOFT_FILE))?;
        }
        Ok(model)
    }

    /// The same weights under a new type inventory. Soft-prompt rows whose
    /// marker survives are carried over; new ones are initialized afresh.
    pub fn retarget(self, entity_types: Vec<String>, type_names: TypeNames) -> Result<Self> {
        let setup = PromptSetup {
            entity_types,
            type_names,
            ..self.setup
        };
        let eval_batch = self.eval_batch;
        let old = self.soft;
        let mut model = PromptModel::new(self.backend, setup)?;
        if let (Some(old), Some(new)) = (&old, &model.soft) {
            new.copy_rows_from(old)?;
        }
        model.eval_batch = eval_batch;
        Ok(model)
    }

    /// Deep copy sharing no variables with `self`.
    pub fn try_clone(&self) -> Result<Self> {
        let mut copy = PromptModel::new(
            backend::clone_backend(self.backend.as_ref())?,
            self.setup.clone(),
        )?;
        if let (Some(mine), Some(theirs)) = (&self.soft, &copy.soft) {
            theirs.params().restore(&mine.params().snapshot()?)?;
        }
        copy.eval_batch = self.eval_batch;
        Ok(copy)
    }
}

impl EntailmentScorer for PromptModel {
    fn entail_probs(&self, queries: &[Query<'_>]) -> Result<Vec<f64>> {
        let inputs = queries
            .iter()
            .map(|q| self.input(q))
            .collect::<Result<Vec<_>>>()?;
        Ok(self
            .score_inputs(&inputs)?
            .into_iter()
            .map(|d| d.entail)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::TemplateKind;
    use crate::scoring::backend::{TinyTransformer, TransformerConfig};
    use crate::scoring::Vocab;

    fn backbone() -> Box<dyn MaskedLm> {
        let words = "seoul is the part of a location person entity . not name yes no in lives kim";
        let vocab = Vocab::build(words.split_whitespace(), 1);
        let cfg = TransformerConfig {
            hidden: 16,
            layers: 1,
            heads: 2,
            ffn: 32,
            max_len: 64,
            ..TransformerConfig::default()
        };
        Box::new(TinyTransformer::new(vocab, cfg, 3).unwrap())
    }

    fn sentence() -> Vec<String> {
        "kim lives in seoul ."
            .split_whitespace()
            .map(String::from)
            .collect()
    }

    fn queries(tokens: &[String]) -> Vec<Query<'_>> {
        vec![
            Query {
                tokens,
                start: 3,
                end: 4,
                kind: TemplateKind::Positive,
                entity_type: Some("LOC"),
            },
            Query {
                tokens,
                start: 0,
                end: 1,
                kind: TemplateKind::FalsePositive,
                entity_type: Some("LOC"),
            },
            Query {
                tokens,
                start: 2,
                end: 3,
                kind: TemplateKind::NullOther,
                entity_type: None,
            },
        ]
    }

    #[test]
    fn probabilities_are_valid() {
        let setup = PromptSetup::new(vec!["LOC".into(), "PER".into()]);
        let model = PromptModel::new(backbone(), setup).unwrap();
        let toks = sentence();
        let p = model.entail_probs(&queries(&toks)).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
        let input = model.input(&queries(&toks)[0]).unwrap();
        assert_eq!(
            input.text,
            "seoul is the part of a location entity. ? </s></s> [MASK], kim lives in seoul . </s>"
        );
    }

    #[test]
    fn missing_verbalizer_word_is_a_config_error() {
        let mut setup = PromptSetup::new(vec!["LOC".into()]);
        setup.verbalizer = Verbalizer::true_false();
        assert!(matches!(
            PromptModel::new(backbone(), setup),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn soft_prompt_at_initialization_matches_discrete() {
        let types = vec!["LOC".to_string(), "PER".to_string()];
        let discrete = PromptModel::new(backbone(), PromptSetup::new(types.clone())).unwrap();
        for per_type in [false, true] {
            let mut setup = PromptSetup::new(types.clone());
            setup.soft = Some(SoftPromptSpec {
                slot_count: None,
                per_entity_type: per_type,
            });
            let soft = PromptModel::new(backbone(), setup).unwrap();
            let toks = sentence();
            let q = queries(&toks);
            assert_eq!(
                discrete.entail_probs(&q).unwrap(),
                soft.entail_probs(&q).unwrap()
            );
        }
    }

    #[test]
    fn save_load_and_clone_preserve_scores() {
        let dir = tempfile::tempdir().unwrap();
        let mut setup = PromptSetup::new(vec!["LOC".into()]);
        setup.soft = Some(SoftPromptSpec {
            slot_count: Some(3),
            per_entity_type: false,
        });
        let model = PromptModel::new(backbone(), setup).unwrap();
        model.save(dir.path()).unwrap();
        let back = PromptModel::load(dir.path()).unwrap();
        let toks = sentence();
        let q = queries(&toks);
        let expected = model.entail_probs(&q).unwrap();
        assert_eq!(expected, back.entail_probs(&q).unwrap());
        assert_eq!(
            expected,
            model.try_clone().unwrap().entail_probs(&q).unwrap()
        );
    }

    #[test]
    fn long_premise_is_truncated() {
        let mut setup = PromptSetup::new(vec!["LOC".into()]);
        setup.max_seq_len = 20;
        let model = PromptModel::new(backbone(), setup).unwrap();
        let toks: Vec<String> = std::iter::repeat_n("kim".to_string(), 40).collect();
        let q = Query {
            tokens: &toks,
            start: 0,
            end: 1,
            kind: TemplateKind::Positive,
            entity_type: Some("LOC"),
        };
        let input = model.input(&q).unwrap();
        assert_eq!(input.len(), 20);
        assert!(input.truncated > 0);
        assert_eq!(model.entail_probs(&[q]).unwrap().len(), 1);
    }
}
