use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use entailner::corpus::{parse_conll, TagColumn, TaggedSentence};
use entailner::evaluation::AblationPlan;
use entailner::training::PipelineConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::UserError;

/// Directory that holds named backbones.
pub const CACHE_ENV: &str = "ENTAILNER_BACKEND_CACHE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Zero-based tag column; the last column when unset.
    pub tag_column: Option<usize>,
}

/// How the training split is subsampled. `k` and `targets` are exclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub k: Option<usize>,
    pub targets: Option<BTreeMap<String, usize>>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_dir: PathBuf,
    pub data: DataConfig,
    /// A backbone directory, or the name of one under the cache directory.
    pub backbone: Option<String>,
    pub sample: Option<SampleConfig>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    pub ablation: Option<AblationPlan>,
}

/// Applies `key.path=value` overrides to a parsed TOML document. Values are
/// read as TOML and fall back to plain strings.
fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| UserError(format!("override {spec:?} is not key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let keys: Vec<&str> = path.trim().split('.').collect();
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut table = doc;
    for k in parents {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| UserError(format!("override {spec:?}: {k} is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Reads the config, applies overrides, resolves relative paths against
    /// the config file's directory and validates.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UserError(format!("cannot read config {}: {e}", path.display())))?;
        let mut doc: toml::Table =
            toml::from_str(&text).map_err(|e| UserError(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: RunConfig = doc
            .try_into()
            .map_err(|e| UserError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.run_dir);
        resolve(&mut cfg.data.train);
        cfg.data.dev.as_mut().map(resolve);
        cfg.data.test.as_mut().map(resolve);
        if let Some(b) = &cfg.backbone {
            let p = base.join(b);
            if Path::new(b).is_relative() && p.exists() {
                cfg.backbone = Some(p.to_string_lossy().into_owned());
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let paths = [
            Some(&self.data.train),
            self.data.dev.as_ref(),
            self.data.test.as_ref(),
        ];
        for p in paths.into_iter().flatten() {
            if !p.exists() {
                return Err(UserError(format!("input file {} does not exist", p.display())).into());
            }
        }
        if let Some(s) = &self.sample {
            if s.k.is_some() == s.targets.is_some() {
                return Err(UserError("[sample] needs exactly one of k and targets".into()).into());
            }
        }
        if let Some(plan) = &self.ablation {
            plan.validate()?;
        }
        self.pipeline.validate()?;
        Ok(())
    }

    /// Stable digest of the resolved configuration.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_value(self)?;
        Ok(hex::encode(Sha256::digest(json.to_string().as_bytes())))
    }

    pub fn column(&self) -> TagColumn {
        self.data
            .tag_column
            .map_or(TagColumn::Last, TagColumn::Index)
    }

    pub fn read(&self, path: &Path) -> Result<Vec<TaggedSentence>> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        parse_conll(&text, self.column()).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn read_opt(&self, path: Option<&PathBuf>) -> Result<Vec<TaggedSentence>> {
        path.map_or(Ok(Vec::new()), |p| self.read(p))
    }

    /// The backbone directory: a path as given, or a name under the cache.
    pub fn backbone_dir(&self) -> Result<PathBuf> {
        let name = self
            .backbone
            .as_deref()
            .ok_or_else(|| UserError("the config names no backbone".into()))?;
        resolve_backbone(name)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.run_dir.join("data")
    }

    pub fn model_dir(&self) -> PathBuf {
        self.run_dir.join("model")
    }
}

pub fn cache_dir() -> Result<PathBuf> {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .ok_or_else(|| UserError(format!("{CACHE_ENV} is not set")).into())
}

pub fn resolve_backbone(name: &str) -> Result<PathBuf> {
    let direct = PathBuf::from(name);
    if direct
        .join(entailner::scoring::backend::BACKBONE_FILE)
        .exists()
    {
        return Ok(direct);
    }
    let cached = cache_dir()
        .map_err(|_| {
            UserError(format!(
                "backbone {name:?} is not a directory and {CACHE_ENV} is not set"
            ))
        })?
        .join(name);
    if cached
        .join(entailner::scoring::backend::BACKBONE_FILE)
        .exists()
    {
        Ok(cached)
    } else {
        Err(UserError(format!(
            "backbone {name:?} not found (looked in {})",
            cached.display()
        ))
        .into())
    }
}
