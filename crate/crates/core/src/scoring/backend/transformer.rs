use candle_core::{DType, Tensor, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ForwardCtx, MaskedLm, ParamStore};
use crate::error::{Error, Result};
use crate::scoring::Vocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_len: usize,
    pub dropout: f32,
    pub init_std: f64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            hidden: 64,
            layers: 2,
            heads: 4,
            ffn: 256,
            max_len: 256,
            dropout: 0.1,
            init_std: 0.05,
        }
    }
}

/// A small post-LayerNorm transformer encoder with a tied MLM head.
#[derive(Debug, Clone)]
pub struct TinyTransformer {
    cfg: TransformerConfig,
    vocab: Vocab,
    params: ParamStore,
}

fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
    Ok(normed.broadcast_mul(gain)?.broadcast_add(bias)?)
}

fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(x.broadcast_matmul(w)?.broadcast_add(b)?)
}

fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

impl TinyTransformer {
    pub const KIND: &'static str = "tiny-transformer";

    pub fn new(vocab: Vocab, cfg: TransformerConfig, seed: u64) -> Result<Self> {
        if cfg.hidden % cfg.heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                cfg.hidden, cfg.heads
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let (d, f, std) = (cfg.hidden, cfg.ffn, cfg.init_std);
        p.normal("tok_emb", &[vocab.len(), d], std, &mut rng)?;
        p.normal("pos_emb", &[cfg.max_len, d], std, &mut rng)?;
        p.constant("emb_ln.g", &[d], 1.0)?;
        p.constant("emb_ln.b", &[d], 0.0)?;
        for l in 0..cfg.layers {
            for w in ["q", "k", "v", "o"] {
                p.normal(&format!("l{l}.{w}.w"), &[d, d], std, &mut rng)?;
                p.constant(&format!("l{l}.{w}.b"), &[d], 0.0)?;
            }
            p.normal(&format!("l{l}.ff1.w"), &[d, f], std, &mut rng)?;
            p.constant(&format!("l{l}.ff1.b"), &[f], 0.0)?;
            p.normal(&format!("l{l}.ff2.w"), &[f, d], std, &mut rng)?;
            p.constant(&format!("l{l}.ff2.b"), &[d], 0.0)?;
            for n in ["ln1", "ln2"] {
                p.constant(&format!("l{l}.{n}.g"), &[d], 1.0)?;
                p.constant(&format!("l{l}.{n}.b"), &[d], 0.0)?;
            }
        }
        p.normal("head.w", &[d, d], std, &mut rng)?;
        p.constant("head.b", &[d], 0.0)?;
        p.constant("head.ln.g", &[d], 1.0)?;
        p.constant("head.ln.b", &[d], 0.0)?;
        p.constant("head.out_b", &[vocab.len()], 0.0)?;
        Ok(TinyTransformer {
            cfg,
            vocab,
            params: p,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.cfg
    }

    fn p(&self, name: &str) -> Result<&Tensor> {
        self.params.get(name)
    }

    fn attention(
        &self,
        l: usize,
        x: &Tensor,
        bias: &Tensor,
        ctx: &mut ForwardCtx,
    ) -> Result<Tensor> {
        let (b, len, d) = x.dims3()?;
        let h = self.cfg.heads;
        let dh = d / h;
        let split = |t: Tensor| -> Result<Tensor> {
            Ok(t.reshape((b, len, h, dh))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(linear(
            x,
            self.p(&format!("l{l}.q.w"))?,
            self.p(&format!("l{l}.q.b"))?,
        )?)?;
        let k = split(linear(
            x,
            self.p(&format!("l{l}.k.w"))?,
            self.p(&format!("l{l}.k.b"))?,
        )?)?;
        let v = split(linear(
            x,
            self.p(&format!("l{l}.v.w"))?,
            self.p(&format!("l{l}.v.b"))?,
        )?)?;
        let scores =
            (q.matmul(&k.t()?.contiguous()?)? / (dh as f64).sqrt())?.broadcast_add(bias)?;
        let probs = ctx.dropout(&softmax_last(&scores)?, self.cfg.dropout)?;
        let out = probs
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, len, d))?;
        linear(
            &out,
            self.p(&format!("l{l}.o.w"))?,
            self.p(&format!("l{l}.o.b"))?,
        )
    }
}

impl MaskedLm for TinyTransformer {
    fn kind(&self) -> &'static str {
        Self::KIND
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn hidden_size(&self) -> usize {
        self.cfg.hidden
    }

    fn max_len(&self) -> usize {
        self.cfg.max_len
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.cfg).expect("config serializes")
    }

    fn embed_ids(&self, ids: &Tensor) -> Result<Tensor> {
        let shape = ids.dims().to_vec();
        let flat = ids.flatten_all()?;
        let rows = self.p("tok_emb")?.index_select(&flat, 0)?;
        let mut out_shape = shape;
        out_shape.push(self.cfg.hidden);
        Ok(rows.reshape(out_shape)?)
    }

    fn encode(&self, embeds: &Tensor, attention: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let (b, len, _) = embeds.dims3()?;
        if len > self.cfg.max_len {
            return Err(Error::Argument(format!(
                "sequence of {len} tokens exceeds the backbone limit of {}",
                self.cfg.max_len
            )));
        }
        let pos = self.p("pos_emb")?.narrow(0, 0, len)?;
        let mut x = layer_norm(
            &embeds.broadcast_add(&pos)?,
            self.p("emb_ln.g")?,
            self.p("emb_ln.b")?,
        )?;
        x = ctx.dropout(&x, self.cfg.dropout)?;
        // (B, 1, 1, L): 0 for real tokens, -1e9 for padding
        let bias = ((attention.to_dtype(DType::F32)? - 1.0)? * 1e9)?.reshape((b, 1, 1, len))?;
        for l in 0..self.cfg.layers {
            let a = self.attention(l, &x, &bias, ctx)?;
            let a = ctx.dropout(&a, self.cfg.dropout)?;
            x = layer_norm(
                &(x + a)?,
                self.p(&format!("l{l}.ln1.g"))?,
                self.p(&format!("l{l}.ln1.b"))?,
            )?;
            let hidden = linear(
                &x,
                self.p(&format!("l{l}.ff1.w"))?,
                self.p(&format!("l{l}.ff1.b"))?,
            )?
            .gelu_erf()?;
            let ff = linear(
                &hidden,
                self.p(&format!("l{l}.ff2.w"))?,
                self.p(&format!("l{l}.ff2.b"))?,
            )?;
            let ff = ctx.dropout(&ff, self.cfg.dropout)?;
            x = layer_norm(
                &(x + ff)?,
                self.p(&format!("l{l}.ln2.g"))?,
                self.p(&format!("l{l}.ln2.b"))?,
            )?;
        }
        Ok(x)
    }

    fn mlm_logits(&self, rows: &Tensor) -> Result<Tensor> {
        let h = linear(rows, self.p("head.w")?, self.p("head.b")?)?.gelu_erf()?;
        let h = layer_norm(&h, self.p("head.ln.g")?, self.p("head.ln.b")?)?;
        let emb_t = self.p("tok_emb")?.t()?;
        Ok(h.broadcast_matmul(&emb_t)?
            .broadcast_add(self.p("head.out_b")?)?)
    }
}
