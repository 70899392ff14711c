use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::fsutil;

pub const ARTIFACT_FILE: &str = "artifact.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStage {
    Ingest,
    TrainBiencoder,
    Embed,
    Index,
    Mine,
    TrainCross,
    Filter,
    Export,
    Evaluate,
}

impl PipelineStage {
    pub const ALL: [PipelineStage; 9] = [
        PipelineStage::Ingest,
        PipelineStage::TrainBiencoder,
        PipelineStage::Embed,
        PipelineStage::Index,
        PipelineStage::Mine,
        PipelineStage::TrainCross,
        PipelineStage::Filter,
        PipelineStage::Export,
        PipelineStage::Evaluate,
    ];

    /// Directory name under the work directory.
    pub fn name(self) -> &'static str {
        match self {
            PipelineStage::Ingest => "ingest",
            PipelineStage::TrainBiencoder => "train_biencoder",
            PipelineStage::Embed => "embed",
            PipelineStage::Index => "index",
            PipelineStage::Mine => "mine",
            PipelineStage::TrainCross => "train_cross",
            PipelineStage::Filter => "filter",
            PipelineStage::Export => "export",
            PipelineStage::Evaluate => "evaluate",
        }
    }

    /// Accepts both `train-cross` and `train_cross`.
    pub fn parse(name: &str) -> Option<Self> {
        let n = name.replace('-', "_");
        Self::ALL.into_iter().find(|s| s.name() == n)
    }

    /// Stages whose outputs this stage reads.
    pub fn upstream(self) -> &'static [PipelineStage] {
        use PipelineStage::*;
        match self {
            Ingest => &[],
            TrainBiencoder => &[Ingest],
            Embed => &[Ingest, TrainBiencoder],
            Index => &[Ingest, Embed],
            Mine => &[Ingest, Embed, Index],
            TrainCross => &[Ingest, TrainBiencoder, Embed],
            Filter => &[Ingest, Embed, Mine, TrainCross],
            Export => &[Ingest, Filter],
            Evaluate => &[Ingest, Mine, Filter],
        }
    }

    /// Configuration that affects this stage's own outputs.
    fn params(self, cfg: &PipelineConfig) -> serde_json::Value {
        use serde_json::json;
        match self {
            PipelineStage::Ingest => json!({
                "task": cfg.task,
                "decompose_outputs": cfg.decompose_outputs,
                "min_input_sentences": cfg.min_input_sentences,
            }),
            PipelineStage::TrainBiencoder => json!({ "biencoder": cfg.biencoder, "rng_seed": cfg.rng_seed }),
            PipelineStage::Embed => json!({ "retention": cfg.retention }),
            PipelineStage::Index => json!({
                "index_kind": cfg.index_kind,
                "nlist": cfg.nlist,
                "shard_key": cfg.effective_shard_key(),
                "date_granularity": cfg.date_granularity,
                "rng_seed": cfg.rng_seed,
            }),
            PipelineStage::Mine => json!({ "margin": cfg.margin }),
            PipelineStage::TrainCross => json!({
                "cross": cfg.cross,
                "margin": cfg.margin,
                "index_kind": cfg.index_kind,
                "nlist": cfg.nlist,
                "rng_seed": cfg.rng_seed,
            }),
            PipelineStage::Filter => json!({
                "final_top_n": cfg.final_top_n,
                "external_scores": cfg.external_scores.is_some(),
            }),
            PipelineStage::Export => json!({}),
            PipelineStage::Evaluate => json!({ "ks": cfg.eval_ks, "precision_at": cfg.eval_precision_at }),
        }
    }

    /// Hash of this stage's parameters chained with its upstream hashes.
    pub fn config_hash(self, cfg: &PipelineConfig) -> String {
        let upstream: Vec<String> = self.upstream().iter().map(|u| u.config_hash(cfg)).collect();
        let doc = serde_json::json!({ "stage": self.name(), "params": self.params(cfg), "upstream": upstream });
        fsutil::sha256_hex(doc.to_string().as_bytes())
    }
}

impl fmt::Display for PipelineStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name().replace('_', "-"))
    }
}

/// Record counts for one group of items passing through a stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub records_in: u64,
    pub records_out: u64,
    pub filtered: u64,
    pub degenerate: u64,
}

impl Counters {
    pub fn new(records_in: usize, records_out: usize, filtered: usize, degenerate: usize) -> Self {
        Counters {
            records_in: records_in as u64,
            records_out: records_out as u64,
            filtered: filtered as u64,
            degenerate: degenerate as u64,
        }
    }

    pub fn passthrough(n: usize) -> Self {
        Self::new(n, n, 0, 0)
    }

    pub fn is_conserved(&self) -> bool {
        self.records_out + self.filtered + self.degenerate == self.records_in
    }
}

/// Provenance written next to every stage's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageArtifact {
    pub stage: PipelineStage,
    pub config_hash: String,
    /// Files outside the work directory read by the stage, with hashes.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sources: BTreeMap<String, String>,
    /// Upstream outputs read, relative to the work directory.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub counters: BTreeMap<String, Counters>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, u64>,
}

impl StageArtifact {
    pub fn is_conserved(&self) -> bool {
        self.counters.values().all(Counters::is_conserved)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("artifact serializes");
        s.push('\n');
        s
    }
}

/// Paths inside a work directory.
#[derive(Debug, Clone)]
pub struct Workdir {
    root: PathBuf,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workdir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn artifact_path(&self, stage: PipelineStage) -> PathBuf {
        self.root.join(stage.name()).join(ARTIFACT_FILE)
    }

    pub fn load_artifact(&self, stage: PipelineStage) -> Result<StageArtifact> {
        let path = self.artifact_path(stage);
        if !path.exists() {
            return Err(Error::MissingArtifact(format!(
                "{stage} artifact {} not found; run `{stage}` first",
                path.display()
            )));
        }
        let bytes = fsutil::read(&path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e.to_string()))
    }
}

/// Validates artifacts against the config and the files on disk, hashing
/// each file at most once.
pub(crate) struct Verifier<'a> {
    cfg: &'a PipelineConfig,
    work: &'a Workdir,
    file_hashes: HashMap<String, String>,
    checked: HashMap<PipelineStage, StageArtifact>,
}

impl<'a> Verifier<'a> {
    pub fn new(cfg: &'a PipelineConfig, work: &'a Workdir) -> Self {
        Verifier {
            cfg,
            work,
            file_hashes: HashMap::new(),
            checked: HashMap::new(),
        }
    }

    pub fn hash_file(&mut self, rel: &str) -> Result<Option<String>> {
        if let Some(h) = self.file_hashes.get(rel) {
            return Ok(Some(h.clone()));
        }
        let path = self.work.path(rel);
        if !path.exists() {
            return Ok(None);
        }
        let h = fsutil::sha256_file(&path)?;
        self.file_hashes.insert(rel.to_owned(), h.clone());
        Ok(Some(h))
    }

    /// The inputs `stage` would read now: every upstream artifact must exist,
    /// match the config, be current with respect to its own inputs, and have
    /// unmodified outputs.
    pub fn expected_inputs(&mut self, stage: PipelineStage) -> Result<BTreeMap<String, String>> {
        let mut inputs = BTreeMap::new();
        for &u in stage.upstream() {
            let art = self.verified(u)?;
            inputs.extend(art.outputs);
        }
        Ok(inputs)
    }

    fn verified(&mut self, stage: PipelineStage) -> Result<StageArtifact> {
        if let Some(a) = self.checked.get(&stage) {
            return Ok(a.clone());
        }
        let art = self.work.load_artifact(stage)?;
        if art.config_hash != stage.config_hash(self.cfg) {
            return Err(Error::StaleArtifact(format!(
                "{stage} was produced with a different configuration; re-run `{stage}`"
            )));
        }
        let expected = self.expected_inputs(stage)?;
        if art.inputs != expected {
            return Err(Error::StaleArtifact(format!(
                "{stage} is older than its upstream outputs; re-run `{stage}`"
            )));
        }
        self.check_outputs(&art)?;
        self.checked.insert(stage, art.clone());
        Ok(art)
    }

    fn check_outputs(&mut self, art: &StageArtifact) -> Result<()> {
        for (rel, sha) in &art.outputs {
            match self.hash_file(rel)? {
                None => {
                    return Err(Error::MissingArtifact(format!(
                        "{rel} (output of {}) not found; re-run `{}`",
                        art.stage, art.stage
                    )))
                }
                Some(h) if &h != sha => {
                    return Err(Error::StaleArtifact(format!(
                        "{rel} changed since {} ran; re-run `{}`",
                        art.stage, art.stage
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// True if `stage`'s own artifact is valid for the current config and
    /// upstream state.
    pub fn is_current(&mut self, stage: PipelineStage) -> bool {
        self.verified(stage).is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in PipelineStage::ALL {
            assert_eq!(PipelineStage::parse(s.name()), Some(s));
            assert_eq!(PipelineStage::parse(&s.to_string()), Some(s));
        }
        assert_eq!(PipelineStage::parse("train-biencoder"), Some(PipelineStage::TrainBiencoder));
        assert_eq!(PipelineStage::parse("nope"), None);
    }

    #[test]
    fn upstream_precedes_stage() {
        for s in PipelineStage::ALL {
            assert!(s.upstream().iter().all(|u| *u < s));
        }
    }

    #[test]
    fn hash_changes_propagate_downstream_only() {
        let base = PipelineConfig::default();
        let mut changed = base.clone();
        changed.margin.k = 6;
        assert_eq!(
            PipelineStage::Embed.config_hash(&base),
            PipelineStage::Embed.config_hash(&changed)
        );
        assert_ne!(
            PipelineStage::Mine.config_hash(&base),
            PipelineStage::Mine.config_hash(&changed)
        );
        assert_ne!(
            PipelineStage::Export.config_hash(&base),
            PipelineStage::Export.config_hash(&changed)
        );
    }

    #[test]
    fn missing_artifact_names_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let work = Workdir::new(dir.path());
        let cfg = PipelineConfig::default();
        let err = Verifier::new(&cfg, &work)
            .expected_inputs(PipelineStage::Mine)
            .unwrap_err();
        match err {
            Error::MissingArtifact(m) => assert!(m.contains("ingest")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn counters_conservation() {
        assert!(Counters::new(10, 6, 3, 1).is_conserved());
        assert!(!Counters::new(10, 6, 3, 0).is_conserved());
    }
}
