use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{DateGranularity, Task, META_DATE};
use crate::crossfilter::{CrossMode, NegativeSampling, DEFAULT_HIDDEN};
use crate::encoder::{EncoderShape, TrainConfig, DEFAULT_DIM, DEFAULT_NUM_BUCKETS};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::knn::IndexKind;
use crate::miner::MarginConfig;

/// Keys that must be present in every config file.
const REQUIRED_KEYS: [&str; 4] = ["task", "inputs", "outputs", "seeds"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiencoderSection {
    pub num_buckets: u32,
    pub dim: u32,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub n_random_negs: usize,
    pub multitask_weight: f64,
    pub synthetic_per_type: usize,
    pub prefilter_negatives: usize,
}

impl Default for BiencoderSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        BiencoderSection {
            num_buckets: DEFAULT_NUM_BUCKETS,
            dim: DEFAULT_DIM,
            learning_rate: t.learning_rate,
            steps: t.steps,
            batch_size: t.batch_size,
            n_random_negs: t.n_random_negs,
            multitask_weight: t.multitask_weight,
            synthetic_per_type: t.synthetic_per_type,
            prefilter_negatives: t.prefilter_negatives,
        }
    }
}

impl BiencoderSection {
    pub fn shape(&self) -> EncoderShape {
        EncoderShape {
            num_buckets: self.num_buckets,
            dim: self.dim,
        }
    }

    pub fn train_config(&self, rng_seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            steps: self.steps,
            batch_size: self.batch_size,
            n_random_negs: self.n_random_negs,
            multitask_weight: self.multitask_weight,
            synthetic_per_type: self.synthetic_per_type,
            prefilter_negatives: self.prefilter_negatives,
            rng_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossSection {
    /// Defaults to binary for reading comprehension, pairwise for
    /// summarization.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<CrossMode>,
    pub hidden: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Retrieved wrong outputs per seed for pairwise training.
    pub hard_negatives: usize,
    pub negatives_top_decile: usize,
    pub negatives_uniform: usize,
}

impl Default for CrossSection {
    fn default() -> Self {
        let s = NegativeSampling::default();
        CrossSection {
            mode: None,
            hidden: DEFAULT_HIDDEN,
            learning_rate: 1e-2,
            steps: 500,
            batch_size: 32,
            hard_negatives: 4,
            negatives_top_decile: s.top_decile,
            negatives_uniform: s.uniform,
        }
    }
}

impl CrossSection {
    pub fn mode_for(&self, task: Task) -> CrossMode {
        self.mode.unwrap_or(match task {
            Task::ReadingComprehension => CrossMode::Binary,
            Task::Summarization => CrossMode::Pairwise,
        })
    }

    pub fn train_config(&self, rng_seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            steps: self.steps,
            batch_size: self.batch_size,
            rng_seed,
            ..TrainConfig::default()
        }
    }

    pub fn sampling(&self) -> NegativeSampling {
        NegativeSampling {
            top_decile: self.negatives_top_decile,
            uniform: self.negatives_uniform,
        }
    }
}

/// Everything a pipeline run depends on. Relative paths are resolved against
/// the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub task: Task,
    /// Questions (reading comprehension) or documents (summarization).
    pub inputs: PathBuf,
    /// Passages or documents that are split into candidate outputs.
    pub outputs: PathBuf,
    pub seeds: PathBuf,
    /// Optional `{x, y}` text pairs for `evaluate`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold: Option<PathBuf>,
    /// Optional `{pair_key, score}` lines used by `filter` instead of the
    /// trained crossencoder.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub external_scores: Option<PathBuf>,
    pub workdir: PathBuf,
    pub rng_seed: u64,
    /// When false, output records are taken as already split.
    pub decompose_outputs: bool,
    /// Summarization inputs with fewer sentences are dropped; 0 disables.
    pub min_input_sentences: usize,
    /// Meta key used to shard summarization corpora; empty disables.
    pub shard_key: String,
    pub date_granularity: DateGranularity,
    /// Fraction of the prefiltered side kept after prefiltering.
    pub retention: f64,
    pub final_top_n: usize,
    pub index_kind: IndexKind,
    pub nlist: usize,
    pub eval_ks: Vec<usize>,
    pub eval_precision_at: Vec<usize>,
    pub biencoder: BiencoderSection,
    pub cross: CrossSection,
    pub margin: MarginConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            task: Task::Summarization,
            inputs: PathBuf::new(),
            outputs: PathBuf::new(),
            seeds: PathBuf::new(),
            gold: None,
            external_scores: None,
            workdir: PathBuf::from("work"),
            rng_seed: 0,
            decompose_outputs: true,
            min_input_sentences: 4,
            shard_key: META_DATE.to_owned(),
            date_granularity: DateGranularity::Day,
            retention: 0.2,
            final_top_n: 500,
            index_kind: IndexKind::Exact,
            nlist: 64,
            eval_ks: vec![1, 4],
            eval_precision_at: vec![100],
            biencoder: BiencoderSection::default(),
            cross: CrossSection::default(),
            margin: MarginConfig::default(),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key present"),
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

/// Applies `key=value` to a TOML table; dotted keys address nested tables.
/// Values are read as TOML literals, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override {spec:?} has an empty key")));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {spec:?}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

impl PipelineConfig {
    /// Parses a TOML document, applying overrides before deserializing.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        if let Some(k) = REQUIRED_KEYS.iter().find(|k| !table.contains_key(**k)) {
            return Err(Error::Config(format!("missing required key {k:?}")));
        }
        let cfg: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_owned()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file and resolves its relative paths.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg = Self::from_toml_str(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(cfg.resolved(base))
    }

    pub fn resolved(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.inputs);
        fix(&mut self.outputs);
        fix(&mut self.seeds);
        fix(&mut self.workdir);
        if let Some(g) = self.gold.as_mut() {
            fix(g);
        }
        if let Some(s) = self.external_scores.as_mut() {
            fix(s);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.retention > 0.0 && self.retention <= 1.0) {
            return Err(Error::Config(format!("retention must be in (0, 1], got {}", self.retention)));
        }
        if self.final_top_n == 0 {
            return Err(Error::Config("final_top_n must be >= 1".into()));
        }
        if self.nlist == 0 {
            return Err(Error::Config("nlist must be >= 1".into()));
        }
        if self.eval_ks.iter().chain(&self.eval_precision_at).any(|&k| k == 0) {
            return Err(Error::Config("evaluation cutoffs must be >= 1".into()));
        }
        if !self.biencoder.num_buckets.is_power_of_two() || self.biencoder.dim == 0 {
            return Err(Error::Config("biencoder num_buckets must be a power of two and dim >= 1".into()));
        }
        if self.cross.hidden == 0 {
            return Err(Error::Config("cross hidden width must be >= 1".into()));
        }
        self.margin.validate()?;
        self.biencoder.train_config(self.rng_seed).validate()?;
        self.cross.train_config(self.rng_seed).validate()?;
        Ok(())
    }

    /// Sharding key for the index and mine stages; reading comprehension
    /// always mines one global index.
    pub fn effective_shard_key(&self) -> Option<&str> {
        match self.task {
            Task::Summarization if !self.shard_key.is_empty() => Some(&self.shard_key),
            _ => None,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of the whole config minus its paths.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        for p in [&mut c.inputs, &mut c.outputs, &mut c.seeds, &mut c.workdir] {
            *p = PathBuf::new();
        }
        c.gold = c.gold.map(|_| PathBuf::new());
        c.external_scores = c.external_scores.map(|_| PathBuf::new());
        fsutil::sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}
