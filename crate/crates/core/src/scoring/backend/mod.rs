//! Masked-language-model backends.

mod params;
mod transformer;

pub use params::ParamStore;
pub use transformer::{TinyTransformer, TransformerConfig};

use std::path::Path;

use candle_core::{Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::scoring::Vocab;

/// Dropout state for one forward pass. Evaluation passes carry no
/// generator and apply no dropout.
pub struct ForwardCtx {
    rng: Option<ChaCha8Rng>,
    rate: Option<f32>,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        ForwardCtx {
            rng: None,
            rate: None,
        }
    }

    pub fn train(seed: u64) -> Self {
        ForwardCtx {
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            rate: None,
        }
    }

    /// Overrides the backbone's own dropout probability.
    pub fn with_rate(mut self, p: f32) -> Self {
        self.rate = Some(p);
        self
    }

    pub fn is_train(&self) -> bool {
        self.rng.is_some()
    }

    pub fn dropout(&mut self, x: &Tensor, p: f32) -> Result<Tensor> {
        let p = self.rate.unwrap_or(p);
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x.clone());
        };
        if p <= 0.0 {
            return Ok(x.clone());
        }
        let scale = 1.0 / (1.0 - p);
        let mask: Vec<f32> = (0..x.elem_count())
            .map(|_| if rng.random::<f32>() < p { 0.0 } else { scale })
            .collect();
        let mask = Tensor::from_vec(mask, x.dims(), x.device())?;
        Ok((x * mask)?)
    }
}

/// A masked LM exposing token-level logits.
pub trait MaskedLm: Send + Sync {
    fn kind(&self) -> &'static str;
    fn vocab(&self) -> &Vocab;
    fn hidden_size(&self) -> usize;
    fn max_len(&self) -> usize;
    fn params(&self) -> &ParamStore;
    fn config_json(&self) -> serde_json::Value;

    /// `(.., L)` ids → `(.., L, hidden)` input embeddings.
    fn embed_ids(&self, ids: &Tensor) -> Result<Tensor>;

    /// `(B, L, hidden)` embeddings and `(B, L)` attention mask (1 = real
    /// token) → contextual states.
    fn encode(&self, embeds: &Tensor, attention: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor>;

    /// `(N, hidden)` states → `(N, |V|)` vocabulary logits.
    fn mlm_logits(&self, rows: &Tensor) -> Result<Tensor>;
}

/// Builds an untrained instance of a backend kind; weights are loaded
/// afterwards.
pub type BackendFactory = fn(Vocab, &serde_json::Value, u64) -> Result<Box<dyn MaskedLm>>;

pub fn backend_registry() -> Registry<BackendFactory> {
    Registry::new("backend").with(TinyTransformer::KIND, |vocab, cfg, seed| {
        let cfg: TransformerConfig = serde_json::from_value(cfg.clone())?;
        Ok(Box::new(TinyTransformer::new(vocab, cfg, seed)?))
    })
}

pub fn new_backend(
    kind: &str,
    vocab: Vocab,
    config: &serde_json::Value,
    seed: u64,
) -> Result<Box<dyn MaskedLm>> {
    (backend_registry().get(kind)?)(vocab, config, seed)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackboneManifest {
    pub kind: String,
    pub config: serde_json::Value,
    pub vocab: Vocab,
}

impl BackboneManifest {
    pub fn of(model: &dyn MaskedLm) -> Self {
        BackboneManifest {
            kind: model.kind().to_string(),
            config: model.config_json(),
            vocab: model.vocab().clone(),
        }
    }

    /// Identity of the architecture and vocabulary, ignoring weights.
    pub fn fingerprint(&self) -> String {
        format!("{}:{}:{}", self.kind, self.vocab.fingerprint(), self.config)
    }
}

pub const BACKBONE_FILE: &str = "backbone.json";
pub const WEIGHTS_FILE: &str = "weights.safetensors";

/// Writes `backbone.json` and `weights.safetensors` into `dir`.
pub fn save_backbone(model: &dyn MaskedLm, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = BackboneManifest::of(model);
    std::fs::write(dir.join(BACKBONE_FILE), serde_json::to_string(&manifest)?)?;
    model.params().save(&dir.join(WEIGHTS_FILE))
}

pub fn read_manifest(dir: &Path) -> Result<BackboneManifest> {
    let path = dir.join(BACKBONE_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load_backbone(dir: &Path) -> Result<Box<dyn MaskedLm>> {
    let manifest = read_manifest(dir)?;
    let model = new_backend(&manifest.kind, manifest.vocab, &manifest.config, 0)?;
    model.params().load_into(&dir.join(WEIGHTS_FILE))?;
    Ok(model)
}

/// Deep copy through a save-free snapshot.
pub fn clone_backend(model: &dyn MaskedLm) -> Result<Box<dyn MaskedLm>> {
    let manifest = BackboneManifest::of(model);
    let copy = new_backend(&manifest.kind, manifest.vocab, &manifest.config, 0)?;
    copy.params().restore(&model.params().snapshot()?)?;
    Ok(copy)
}

/// Pads id sequences, embeds and encodes them: `(B, L, d)` states and `L`.
pub fn encode_id_batch(
    model: &dyn MaskedLm,
    seqs: &[Vec<u32>],
    ctx: &mut ForwardCtx,
) -> Result<(Tensor, usize)> {
    let len = seqs.iter().map(Vec::len).max().unwrap_or(0);
    if len == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    let pad = model.vocab().pad_id();
    let mut ids = vec![pad; seqs.len() * len];
    let mut attention = vec![0f32; seqs.len() * len];
    for (r, s) in seqs.iter().enumerate() {
        ids[r * len..r * len + s.len()].copy_from_slice(s);
        attention[r * len..r * len + s.len()]
            .iter_mut()
            .for_each(|a| *a = 1.0);
    }
    let ids = Tensor::from_vec(ids, (seqs.len(), len), &cpu())?;
    let attention = Tensor::from_vec(attention, (seqs.len(), len), &cpu())?;
    let hidden = model.encode(&model.embed_ids(&ids)?, &attention, ctx)?;
    Ok((hidden, len))
}

pub fn cpu() -> Device {
    Device::Cpu
}
