use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use entailner::corpus::synth::{DomainKind, SynthConfig, SynthWorld};
use entailner::corpus::{
    cross_type_sample, kshot_sample, mention_counts, parse_conll, summarize, tags_from_mentions,
    type_inventory, write_conll, KShotConfig, TagColumn, TaggedSentence, SAMPLING_POLICY,
};
use entailner::decoding::{DecodeConfig, TransitionModel};
use entailner::evaluation::{score_predictions, AblationPlan, EvalReport};
use entailner::instances::serialize_instances;
use entailner::prompting::TypeNames;
use entailner::scoring::backend::{
    load_backbone, new_backend, read_manifest, save_backbone, BackboneManifest,
};
use entailner::scoring::PromptModel;
use entailner::training::{
    self, backbone_vocab, pretrain_backbone, AblationData, Lineage, Splits, TrainConfig,
    TrainOptions,
};
use serde::{Deserialize, Serialize};

use crate::config::{cache_dir, RunConfig};
use crate::{Domain, UserError};

const DECODE_FILE: &str = "decode.json";
const MANIFEST_FILE: &str = "manifest.json";

/// Decoding state saved next to a trained model.
#[derive(Debug, Serialize, Deserialize)]
struct DecodeState {
    decode: DecodeConfig,
    transitions: TransitionModel,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    config_hash: String,
    config: RunConfig,
    backbone: String,
    instances: usize,
    tau: f64,
    test: Option<EvalReport>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// The training split after the configured subsampling.
fn training_split(cfg: &RunConfig) -> Result<Vec<TaggedSentence>> {
    let train = cfg.read(&cfg.data.train)?;
    Ok(match &cfg.sample {
        None => train,
        Some(s) => match (&s.k, &s.targets) {
            (Some(k), _) => kshot_sample(&train, &KShotConfig::new(*k, s.seed))?,
            (None, Some(t)) => cross_type_sample(&train, t, s.seed)?,
            (None, None) => unreachable!("validated"),
        },
    })
}

fn lineage(cfg: &RunConfig) -> Lineage {
    let mut l = Lineage::default();
    if let Some(s) = &cfg.sample {
        l.k = s.k;
        l.sampler_seed = Some(s.seed);
        l.notes
            .insert("sampling_policy".into(), SAMPLING_POLICY.into());
    }
    l
}

pub fn prepare(cfg: &RunConfig) -> Result<()> {
    let train = cfg.read(&cfg.data.train)?;
    let dev = cfg.read_opt(cfg.data.dev.as_ref())?;
    let test = cfg.read_opt(cfg.data.test.as_ref())?;
    let sampled = training_split(cfg)?;
    let summary = summarize(&[("train", &train), ("dev", &dev), ("test", &test)]);
    let dir = cfg.data_dir();
    std::fs::create_dir_all(&dir)?;
    write_json(&dir.join("summary.json"), &summary)?;
    write_json(
        &dir.join("sampled_summary.json"),
        &summarize(&[("train", &sampled)]),
    )?;
    std::fs::write(dir.join("train.conll"), write_conll(&sampled, &[]))?;
    write_json(&dir.join("lineage.json"), &lineage(cfg))?;
    for (name, n) in &summary.sentence_count {
        println!("{name}\t{n} sentences");
    }
    println!("tokens\t{}", summary.token_count);
    for (ty, n) in &summary.mentions_per_type {
        println!("{ty}\t{n} mentions");
    }
    println!(
        "sampled train\t{} sentences\t{:?}",
        sampled.len(),
        mention_counts(&sampled)
    );
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn build_instances(cfg: &RunConfig) -> Result<()> {
    let train = training_split(cfg)?;
    let types = type_inventory(&train);
    let instances = cfg.pipeline.instances(&train, &types)?;
    let path = cfg.run_dir.join("instances.jsonl");
    std::fs::create_dir_all(&cfg.run_dir)?;
    let file =
        std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    serialize_instances(&instances, std::io::BufWriter::new(file))?;
    let mut by_kind: BTreeMap<String, usize> = BTreeMap::new();
    for i in &instances {
        *by_kind.entry(i.kind.to_string()).or_default() += 1;
    }
    for (k, n) in &by_kind {
        println!("{k}\t{n}");
    }
    println!("wrote {} instances to {}", instances.len(), path.display());
    Ok(())
}

pub fn train(cfg: &RunConfig, dry_run: bool, force: bool, resume: bool) -> Result<()> {
    let train = training_split(cfg)?;
    let dev = cfg.read_opt(cfg.data.dev.as_ref())?;
    let test = cfg.read_opt(cfg.data.test.as_ref())?;
    let types = type_inventory(&train);
    if types.is_empty() {
        return Err(UserError("the training split has no entity mentions".into()).into());
    }
    let instances = cfg.pipeline.instances(&train, &types)?;
    let backbone_dir = cfg.backbone_dir()?;
    if dry_run {
        read_manifest(&backbone_dir)?;
        println!(
            "config ok: {} train sentences, {} instances, types {types:?}",
            train.len(),
            instances.len()
        );
        return Ok(());
    }

    let hash = cfg.hash()?;
    let manifest_path = cfg.run_dir.join(MANIFEST_FILE);
    if manifest_path.exists() && !force && !resume {
        let old: RunManifest = read_json(&manifest_path)?;
        let why = if old.config_hash == hash {
            "a run with this config"
        } else {
            "a run with a different config"
        };
        return Err(UserError(format!(
            "{} already holds {why}; pass --force to overwrite",
            cfg.run_dir.display()
        ))
        .into());
    }
    let checkpoints = cfg.run_dir.join("checkpoints");
    if force && !resume && checkpoints.exists() {
        std::fs::remove_dir_all(&checkpoints)?;
    }

    let backbone = load_backbone(&backbone_dir)?;
    let opts = TrainOptions {
        checkpoint_dir: Some(checkpoints),
        resume,
        lineage: lineage(cfg),
    };
    let out = training::run_pipeline(
        backbone.as_ref(),
        Splits {
            train: &train,
            dev: &dev,
            test: &test,
        },
        &cfg.pipeline,
        &opts,
    )?;

    let model_dir = cfg.model_dir();
    out.model.save(&model_dir)?;
    let state = DecodeState {
        decode: DecodeConfig {
            tau: out.tau,
            ..cfg.pipeline.decode.clone()
        },
        transitions: out.transitions,
    };
    write_json(&model_dir.join(DECODE_FILE), &state)?;
    out.record.save(&cfg.run_dir.join("run_record.json"))?;
    if let Some(sweep) = &out.tau_sweep {
        write_json(&cfg.run_dir.join("tau_sweep.json"), sweep)?;
    }
    let manifest = RunManifest {
        config_hash: hash,
        config: cfg.clone(),
        backbone: BackboneManifest::of(backbone.as_ref()).fingerprint(),
        instances: out.instances,
        tau: out.tau,
        test: out.test.clone(),
    };
    write_json(&manifest_path, &manifest)?;

    println!(
        "steps {}, best dev {:?} at step {}",
        out.record.steps_run, out.record.best_score, out.record.best_step
    );
    println!("tau {:.2}", out.tau);
    if let Some(r) = &out.test {
        print!("{}", r.to_table());
    }
    println!("model saved to {}", model_dir.display());
    Ok(())
}

/// Loads a trained model and its decode settings, checking it against the
/// configured backbone when one is named.
fn load_model(cfg: &RunConfig, checkpoint: Option<PathBuf>) -> Result<(PromptModel, DecodeState)> {
    let dir = checkpoint.unwrap_or_else(|| cfg.model_dir());
    let model = PromptModel::load(&dir)?;
    if cfg.backbone.is_some() {
        let expected = read_manifest(&cfg.backbone_dir()?)?.fingerprint();
        let found = BackboneManifest::of(model.backend()).fingerprint();
        if expected != found {
            return Err(entailner::Error::Checkpoint(format!(
                "model in {} was not trained from the configured backbone (vocabulary or architecture differ)",
                dir.display()
            ))
            .into());
        }
    }
    let state: DecodeState = read_json(&dir.join(DECODE_FILE))
        .map_err(|e| entailner::Error::Checkpoint(format!("{e:#}")))?;
    Ok((model, state))
}

/// CoNLL lines grouped into sentences; `-DOCSTART-` and blank lines are
/// kept as separators.
enum Block {
    Sentence(Vec<String>),
    Separator(String),
}

fn blocks(text: &str) -> Vec<Block> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with("-DOCSTART-") {
            if !current.is_empty() {
                out.push(Block::Sentence(std::mem::take(&mut current)));
            }
            out.push(Block::Separator(line.to_string()));
        } else {
            current.push(trimmed.to_string());
        }
    }
    if !current.is_empty() {
        out.push(Block::Sentence(current));
    }
    out
}

pub fn predict(cfg: &RunConfig, input: Option<PathBuf>, checkpoint: Option<PathBuf>) -> Result<()> {
    let input = input
        .or_else(|| cfg.data.test.clone())
        .ok_or_else(|| UserError("no --input and no test split configured".into()))?;
    let text =
        std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
    let (model, state) = load_model(cfg, checkpoint)?;

    let blocks = blocks(&text);
    let sentences: Vec<Vec<String>> = blocks
        .iter()
        .filter_map(|b| match b {
            Block::Sentence(lines) => Some(
                lines
                    .iter()
                    .map(|l| l.split_whitespace().next().unwrap().to_string())
                    .collect(),
            ),
            Block::Separator(_) => None,
        })
        .collect();
    let refs: Vec<&[String]> = sentences.iter().map(Vec::as_slice).collect();
    let predicted = state.decode.decode(&model, &refs, &state.transitions)?;

    let mut out = String::new();
    let mut next = predicted.iter().zip(&sentences);
    for b in &blocks {
        match b {
            Block::Separator(line) => {
                out.push_str(line);
                out.push('\n');
            }
            Block::Sentence(lines) => {
                let (mentions, tokens) = next.next().expect("one prediction per sentence");
                for (line, tag) in lines.iter().zip(tags_from_mentions(mentions, tokens.len())) {
                    out.push_str(&format!("{line} {tag}\n"));
                }
            }
        }
    }
    let stem = input
        .file_stem()
        .map_or("predictions".into(), |s| s.to_string_lossy().into_owned());
    let path = cfg
        .run_dir
        .join("predictions")
        .join(format!("{stem}.conll"));
    std::fs::create_dir_all(path.parent().unwrap())?;
    std::fs::write(&path, out)?;
    println!("wrote {} sentences to {}", sentences.len(), path.display());
    Ok(())
}

pub fn eval(predictions: &Path, cfg: Option<&RunConfig>) -> Result<()> {
    let text = std::fs::read_to_string(predictions)
        .with_context(|| format!("reading {}", predictions.display()))?;
    let mut gold_text = String::with_capacity(text.len());
    for line in text.lines() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() >= 3 {
            gold_text.push_str(&cols[..cols.len() - 1].join(" "));
        } else if !cols.is_empty() && cols[0] != "-DOCSTART-" {
            return Err(UserError(format!(
                "{}: expected token, gold and predicted columns in {line:?}",
                predictions.display()
            ))
            .into());
        } else {
            gold_text.push_str(line);
        }
        gold_text.push('\n');
    }
    let gold = parse_conll(&gold_text, TagColumn::Last)?;
    let pred = parse_conll(&text, TagColumn::Last)?;
    let pred: Vec<_> = pred.iter().map(TaggedSentence::mentions).collect();
    let report = score_predictions(&gold, &pred)?;
    print!("{}", report.to_table());
    if let Some(cfg) = cfg {
        let path = cfg.run_dir.join("eval.json");
        write_json(&path, &report)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn sweep_tau(cfg: &RunConfig, checkpoint: Option<PathBuf>, apply: bool) -> Result<()> {
    let dir = checkpoint.clone().unwrap_or_else(|| cfg.model_dir());
    let (model, mut state) = load_model(cfg, checkpoint)?;
    let dev = cfg.read_opt(cfg.data.dev.as_ref())?;
    if dev.is_empty() {
        return Err(UserError("sweep-tau needs a non-empty dev split".into()).into());
    }
    let sweep = training::sweep_tau(&model, &dev, &state.transitions, &state.decode)?;
    for (tau, f1) in &sweep.curve {
        println!("{tau:.2}\t{f1:.4}");
    }
    println!("selected tau {:.2} (dev F1 {:.4})", sweep.tau, sweep.f1);
    write_json(&cfg.run_dir.join("tau_sweep.json"), &sweep)?;
    if apply {
        state.decode.tau = sweep.tau;
        write_json(&dir.join(DECODE_FILE), &state)?;
    }
    Ok(())
}

pub fn ablate(cfg: &RunConfig) -> Result<()> {
    let plan = cfg.ablation.clone().unwrap_or_else(AblationPlan::default);
    let pool = cfg.read(&cfg.data.train)?;
    let dev = cfg.read_opt(cfg.data.dev.as_ref())?;
    let test = cfg.read_opt(cfg.data.test.as_ref())?;
    let backbone = load_backbone(&cfg.backbone_dir()?)?;
    let data = AblationData {
        pool: &pool,
        dev: &dev,
        test: &test,
    };
    let table = training::ablate(backbone.as_ref(), data, &cfg.pipeline, &plan)?;
    let dir = cfg.run_dir.join("ablation");
    write_json(&dir.join("ablation.json"), &table)?;
    std::fs::write(dir.join("cells.tsv"), table.to_table())?;
    let mut summary = String::from("pattern\tsetting\tmean_f1\n");
    for ((pattern, setting), f1) in table.summary() {
        summary.push_str(&format!("{pattern}\t{setting}\t{f1:.4}\n"));
    }
    std::fs::write(dir.join("summary.tsv"), &summary)?;
    print!("{}", table.to_table());
    print!("{summary}");
    Ok(())
}

pub fn synth(
    out: &Path,
    domain: Domain,
    sentences: usize,
    pretrain_sentences: usize,
    seed: u64,
) -> Result<()> {
    if sentences < 10 {
        return Err(UserError("--sentences must be at least 10".into()).into());
    }
    let kind = match domain {
        Domain::News => DomainKind::News,
        Domain::Movie => DomainKind::Movie,
    };
    let world = SynthWorld::build(kind, seed);
    let data = world.corpus(&SynthConfig::default(), sentences, seed.wrapping_add(1));
    let (train_end, dev_end) = (sentences / 2, sentences / 2 + sentences / 5);
    std::fs::create_dir_all(out)?;
    for (name, part) in [
        ("train", &data[..train_end]),
        ("dev", &data[train_end..dev_end]),
        ("test", &data[dev_end..]),
    ] {
        std::fs::write(out.join(format!("{name}.conll")), write_conll(part, &[]))?;
    }
    let text: Vec<String> = world
        .pretraining_text(pretrain_sentences, seed.wrapping_add(2))
        .iter()
        .map(|s| s.join(" "))
        .collect();
    std::fs::write(out.join("pretrain.txt"), text.join("\n") + "\n")?;
    println!("types {:?}", world.types());
    println!(
        "wrote train/dev/test.conll and pretrain.txt to {}",
        out.display()
    );
    Ok(())
}

pub fn pretrain(
    text: &Path,
    out: Option<PathBuf>,
    name: Option<String>,
    types: &[String],
    arch: serde_json::Value,
    cfg: &TrainConfig,
) -> Result<()> {
    let dir = match (out, name) {
        (Some(d), _) => d,
        (None, Some(n)) => cache_dir()?.join(n),
        (None, None) => return Err(UserError("pass --out or --name".into()).into()),
    };
    let raw =
        std::fs::read_to_string(text).with_context(|| format!("reading {}", text.display()))?;
    let lines: Vec<Vec<String>> = raw
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect::<Vec<_>>())
        .filter(|l| !l.is_empty())
        .collect();
    if lines.len() < 2 {
        return Err(UserError(format!("{} has too little text", text.display())).into());
    }
    let (held, train): (Vec<_>, Vec<_>) = lines
        .into_iter()
        .enumerate()
        .partition(|(i, _)| i % 20 == 19);
    let held: Vec<Vec<String>> = held.into_iter().map(|(_, l)| l).collect();
    let train: Vec<Vec<String>> = train.into_iter().map(|(_, l)| l).collect();
    let vocab = backbone_vocab(&train, types, &TypeNames::default());
    let model = new_backend("tiny-transformer", vocab, &arch, cfg.seed)?;
    let record = pretrain_backbone(model.as_ref(), &train, &held, cfg, &TrainOptions::default())?;
    save_backbone(model.as_ref(), &dir)?;
    record.save(&dir.join("pretrain_record.json"))?;
    println!(
        "held-out masked accuracy {:.4}",
        record.best_score.unwrap_or(0.0)
    );
    println!("backbone saved to {}", dir.display());
    Ok(())
}
