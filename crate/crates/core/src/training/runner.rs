use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{grad_norm, AdamW};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::scoring::backend::cpu;
use crate::scoring::ForwardCtx;

/// A trainable objective over a fixed list of examples.
pub(crate) trait Task {
    fn len(&self) -> usize;
    fn vars(&self) -> Vec<(String, Var)>;
    /// Loss over `idx` divided by `denom`, and its gradients. `None` when the
    /// examples contribute nothing.
    fn micro_step(
        &self,
        idx: &[usize],
        denom: f64,
        step: usize,
        ctx: &mut ForwardCtx,
    ) -> Result<(f64, Option<GradStore>)>;
    /// Dev score, higher is better; `None` without dev data.
    fn evaluate(&self) -> Result<Option<f64>>;
    /// Writes the model in its loadable format.
    fn save_model(&self, dir: &Path) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Lineage {
    pub k: Option<usize>,
    pub sampler_seed: Option<u64>,
    pub train_sentences: usize,
    pub examples: usize,
    pub notes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub score: f64,
    /// Mean training loss since the previous evaluation.
    pub train_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub metric: String,
    pub evals: Vec<EvalPoint>,
    pub best_step: usize,
    pub best_score: Option<f64>,
    pub best_checkpoint: Option<PathBuf>,
    pub steps_run: usize,
    pub stopped_early: bool,
    pub wall_clock_secs: f64,
    pub lineage: Lineage,
    pub losses: Vec<f64>,
}

impl RunRecord {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where `last/` and `best/` checkpoints go; nothing is written if unset.
    pub checkpoint_dir: Option<PathBuf>,
    /// Continue from `checkpoint_dir/last` when it exists.
    pub resume: bool,
    pub lineage: Lineage,
}

#[derive(Serialize, Deserialize)]
struct ResumeState {
    step: usize,
    evals: Vec<EvalPoint>,
    losses: Vec<f64>,
    best_step: usize,
    best_score: Option<f64>,
    bad_evals: usize,
    config: TrainConfig,
}

const LAST: &str = "last";
const BEST: &str = "best";
const VARS_FILE: &str = "vars.safetensors";
const OPT_FILE: &str = "optimizer.safetensors";
const STATE_FILE: &str = "state.json";

fn snapshot(vars: &[(String, Var)]) -> Result<HashMap<String, Tensor>> {
    vars.iter()
        .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
        .collect()
}

fn restore(vars: &[(String, Var)], values: &HashMap<String, Tensor>) -> Result<()> {
    for (k, v) in vars {
        let t = values
            .get(k)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks {k}")))?;
        if t.dims() != v.dims() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {k}: {:?} vs {:?}",
                t.dims(),
                v.dims()
            )));
        }
        v.set(t)?;
    }
    Ok(())
}

fn load_vars(path: &Path) -> Result<HashMap<String, Tensor>> {
    candle_core::safetensors::load(path, &cpu())
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Example order: each epoch is a fresh seeded permutation, so the batch
/// at any step is known without replaying earlier steps.
struct Order {
    n: usize,
    seed: u64,
    cache: HashMap<usize, Vec<usize>>,
}

impl Order {
    fn at(&mut self, g: usize) -> usize {
        let (epoch, pos) = (g / self.n, g % self.n);
        let seed = self.seed;
        let n = self.n;
        self.cache.retain(|&e, _| e + 1 >= epoch);
        self.cache.entry(epoch).or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(epoch as u64);
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut rng);
            p
        })[pos]
    }
}

pub(crate) fn step_seed(seed: u64, step: usize, micro: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((step as u64) << 20) ^ micro as u64
}

/// Adds every var's gradient from `gs` into `acc`.
pub(crate) fn accumulate(
    acc: &mut HashMap<String, Tensor>,
    vars: &[(String, Var)],
    gs: &GradStore,
) -> Result<()> {
    for (name, var) in vars {
        if let Some(g) = gs.get(var.as_tensor()).map(Tensor::detach) {
            let sum = match acc.remove(name) {
                Some(prev) => (prev + &g)?,
                None => g,
            };
            acc.insert(name.clone(), sum);
        }
    }
    Ok(())
}

/// Gradient of one optimizer step, without applying it.
pub(crate) fn step_gradients<T: Task>(
    task: &T,
    cfg: &TrainConfig,
    order: &mut impl FnMut(usize) -> usize,
    step: usize,
    vars: &[(String, Var)],
) -> Result<(f64, HashMap<String, Tensor>)> {
    let denom = (cfg.batch_size * cfg.grad_accum) as f64;
    let mut grads = HashMap::new();
    let mut loss = 0.0;
    for micro in 0..cfg.grad_accum {
        let base = (step * cfg.grad_accum + micro) * cfg.batch_size;
        let idx: Vec<usize> = (base..base + cfg.batch_size).map(&mut *order).collect();
        let mut ctx =
            ForwardCtx::train(step_seed(cfg.seed, step, micro)).with_rate(cfg.dropout as f32);
        let (l, gs) = task.micro_step(&idx, denom, step, &mut ctx)?;
        if !l.is_finite() {
            return Err(Error::Diverged { step, loss: l });
        }
        loss += l;
        if let Some(gs) = gs {
            accumulate(&mut grads, vars, &gs)?;
        }
    }
    Ok((loss, grads))
}

fn save_best<T: Task>(task: &T, dir: Option<&Path>, vars: &HashMap<String, Tensor>) -> Result<()> {
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
        task.save_model(dir)?;
        candle_core::safetensors::save(vars, dir.join(VARS_FILE))?;
    }
    Ok(())
}

pub(crate) fn run<T: Task>(
    task: &T,
    cfg: &TrainConfig,
    opts: &TrainOptions,
    metric: &str,
) -> Result<RunRecord> {
    cfg.validate()?;
    if task.len() == 0 {
        return Err(Error::Argument("no training examples".into()));
    }
    let started = Instant::now();
    let vars = task.vars();
    let mut order = Order {
        n: task.len(),
        seed: cfg.seed,
        cache: HashMap::new(),
    };
    let mut opt = AdamW::default();
    let mut state = ResumeState {
        step: 0,
        evals: Vec::new(),
        losses: Vec::new(),
        best_step: 0,
        best_score: None,
        bad_evals: 0,
        config: cfg.clone(),
    };
    let mut best: Option<HashMap<String, Tensor>> = None;
    let last_dir = opts.checkpoint_dir.as_ref().map(|d| d.join(LAST));
    let best_dir = opts.checkpoint_dir.as_ref().map(|d| d.join(BEST));

    let resumable = opts.resume
        && last_dir
            .as_ref()
            .is_some_and(|d| d.join(STATE_FILE).exists());
    if resumable {
        let (last, bdir) = (last_dir.as_ref().unwrap(), best_dir.as_ref().unwrap());
        let text = std::fs::read_to_string(last.join(STATE_FILE))?;
        state = serde_json::from_str(&text).map_err(|e| {
            Error::Checkpoint(format!(
                "cannot resume, {}: {e}",
                last.join(STATE_FILE).display()
            ))
        })?;
        if state.config != *cfg {
            return Err(Error::Checkpoint(
                "cannot resume: the checkpoint was written with a different config".into(),
            ));
        }
        restore(&vars, &load_vars(&last.join(VARS_FILE))?)?;
        opt = AdamW::load(&last.join(OPT_FILE))?;
        if bdir.join(VARS_FILE).exists() {
            best = Some(load_vars(&bdir.join(VARS_FILE))?);
        }
        log::info!("resuming at step {}", state.step);
    } else if let Some(score) = task.evaluate()? {
        state.evals.push(EvalPoint {
            step: 0,
            score,
            train_loss: None,
        });
        state.best_score = Some(score);
        best = Some(snapshot(&vars)?);
        save_best(task, best_dir.as_deref(), best.as_ref().unwrap())?;
    }

    let mut stopped_early = false;
    let mut since_eval = Vec::new();
    let mut step = state.step;
    while step < cfg.max_steps {
        let (loss, mut grads) = step_gradients(task, cfg, &mut |g| order.at(g), step, &vars)?;
        if let Some(max) = cfg.max_grad_norm {
            let norm = grad_norm(&grads)?;
            if norm > max {
                let scale = max / norm;
                for g in grads.values_mut() {
                    *g = (&*g * scale)?;
                }
            }
        }
        opt.step(&vars, &grads, cfg.lr_at(step), cfg.weight_decay)?;
        state.losses.push(loss);
        since_eval.push(loss);
        step += 1;
        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let train_loss = Some(since_eval.iter().sum::<f64>() / since_eval.len() as f64);
            since_eval.clear();
            if let Some(score) = task.evaluate()? {
                log::info!(
                    "step {step}: {metric} {score:.4}, train loss {:.4}",
                    train_loss.unwrap_or(0.0)
                );
                state.evals.push(EvalPoint {
                    step,
                    score,
                    train_loss,
                });
                if state.best_score.is_none_or(|b| score > b) {
                    state.best_score = Some(score);
                    state.best_step = step;
                    state.bad_evals = 0;
                    best = Some(snapshot(&vars)?);
                    save_best(task, best_dir.as_deref(), best.as_ref().unwrap())?;
                } else {
                    state.bad_evals += 1;
                }
            } else {
                log::info!("step {step}: train loss {:.4}", train_loss.unwrap_or(0.0));
            }
            state.step = step;
            if let Some(dir) = &last_dir {
                std::fs::create_dir_all(dir)?;
                candle_core::safetensors::save(&snapshot(&vars)?, dir.join(VARS_FILE))?;
                opt.save(&dir.join(OPT_FILE))?;
                std::fs::write(dir.join(STATE_FILE), serde_json::to_string(&state)?)?;
            }
            if cfg.patience.is_some_and(|p| state.bad_evals >= p) {
                log::info!("early stop at step {step}");
                stopped_early = true;
                break;
            }
        }
    }
    match &best {
        Some(b) => restore(&vars, b)?,
        None => {
            state.best_step = step;
            if let Some(dir) = &best_dir {
                std::fs::create_dir_all(dir)?;
                task.save_model(dir)?;
            }
        }
    }
    Ok(RunRecord {
        config: cfg.clone(),
        metric: metric.to_string(),
        evals: state.evals,
        best_step: state.best_step,
        best_score: state.best_score,
        best_checkpoint: best_dir,
        steps_run: step,
        stopped_early,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        lineage: opts.lineage.clone(),
        losses: state.losses,
    })
}
