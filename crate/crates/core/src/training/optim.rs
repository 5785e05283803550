use std::collections::HashMap;
use std::path::Path;

use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::backend::cpu;

/// Adam with decoupled weight decay. Decay applies to matrices only, not
/// to biases and layer-norm gains.
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: usize,
    moments: HashMap<String, (Tensor, Tensor)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: usize,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: HashMap::new(),
        }
    }
}

impl AdamW {
    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn step(
        &mut self,
        vars: &[(String, Var)],
        grads: &HashMap<String, Tensor>,
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, var) in vars {
            // Gradients and moments must not keep the autograd graph alive
            // across steps.
            let Some(g) = grads.get(name).map(Tensor::detach) else {
                continue;
            };
            let (m, v) = match self.moments.remove(name) {
                Some(mv) => mv,
                None => (g.zeros_like()?, g.zeros_like()?),
            };
            let m = ((m * self.beta1)? + (&g * (1.0 - self.beta1))?)?.detach();
            let v = ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?.detach();
            let denom = ((&v / c2)?.sqrt()? + self.eps)?;
            let mut update = ((&m / c1)? / denom)?;
            let current = var.as_tensor().detach();
            if weight_decay > 0.0 && var.rank() >= 2 {
                update = (update + (&current * weight_decay)?)?;
            }
            var.set(&(current - (update * lr)?)?)?;
            self.moments.insert(name.clone(), (m, v));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = HashMap::new();
        for (name, (m, v)) in &self.moments {
            tensors.insert(format!("m.{name}"), m.clone());
            tensors.insert(format!("v.{name}"), v.clone());
        }
        candle_core::safetensors::save(&tensors, path)?;
        let header = Header {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            t: self.t,
        };
        std::fs::write(path.with_extension("json"), serde_json::to_string(&header)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let fail =
            |e: String| Error::Checkpoint(format!("optimizer state {}: {e}", path.display()));
        let header: Header = serde_json::from_str(
            &std::fs::read_to_string(path.with_extension("json"))
                .map_err(|e| fail(e.to_string()))?,
        )
        .map_err(|e| fail(e.to_string()))?;
        let tensors =
            candle_core::safetensors::load(path, &cpu()).map_err(|e| fail(e.to_string()))?;
        let mut moments: HashMap<String, (Option<Tensor>, Option<Tensor>)> = HashMap::new();
        for (key, t) in tensors {
            let (kind, name) = key
                .split_once('.')
                .ok_or_else(|| fail(format!("bad key {key}")))?;
            let e = moments.entry(name.to_string()).or_default();
            match kind {
                "m" => e.0 = Some(t),
                "v" => e.1 = Some(t),
                _ => return Err(fail(format!("bad key {key}"))),
            }
        }
        let moments = moments
            .into_iter()
            .map(|(k, mv)| match mv {
                (Some(m), Some(v)) => Ok((k, (m, v))),
                _ => Err(fail(format!("incomplete moments for {k}"))),
            })
            .collect::<Result<_>>()?;
        Ok(AdamW {
            beta1: header.beta1,
            beta2: header.beta2,
            eps: header.eps,
            t: header.t,
            moments,
        })
    }
}

/// Global L2 norm of a gradient set.
pub fn grad_norm(grads: &HashMap<String, Tensor>) -> Result<f64> {
    let mut total = 0.0f64;
    for g in grads.values() {
        total += g.sqr()?.sum_all()?.to_scalar::<f32>()? as f64;
    }
    Ok(total.sqrt())
}
