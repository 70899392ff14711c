//! Stage orchestration over a work directory.
//!
//! Every stage writes its outputs under `<workdir>/<stage>/` and then an
//! `artifact.json` recording the config hash, the hashes of the upstream
//! files it read and of the files it wrote. A stage refuses to run when an
//! upstream artifact is missing or no longer matches the config or the files
//! on disk.

mod artifact;
mod config;
mod evaluate;
mod export;
mod stages;

use std::collections::BTreeMap;

pub use artifact::{Counters, PipelineStage, StageArtifact, Workdir, ARTIFACT_FILE};
pub use config::{apply_override, BiencoderSection, CrossSection, PipelineConfig};
pub use evaluate::{evaluate, AtCutoff, Metrics};
pub use export::{
    export, export_lines, parse_export, render_jsonl, ExportFormat, ExportLine, Manifest, MinedDataset, MinedPair,
    StageSummary,
};
pub use stages::ShardEntry;

use crate::error::Result;
use crate::fsutil;
use artifact::Verifier;

/// Relative paths of well-known stage outputs.
pub mod paths {
    pub use super::stages::{
        BIENCODER_META, BIENCODER_MODEL, CROSS_LOSS, CROSS_MODEL, EMBED_INPUTS, EMBED_OUTPUTS, EVAL_METRICS, EVAL_ROUGE,
        EXPORT_MANIFEST, EXPORT_MINED, FILTER_RANKED, INDEX_SHARDS, INGEST_INPUTS, INGEST_OUTPUTS, INGEST_SEEDS,
        MINE_CANDIDATES,
    };
}

/// Runs one stage after checking its upstream artifacts.
pub fn run_stage(cfg: &PipelineConfig, stage: PipelineStage) -> Result<StageArtifact> {
    cfg.validate()?;
    let work = Workdir::new(&cfg.workdir);
    let inputs = Verifier::new(cfg, &work).expected_inputs(stage)?;
    let art_path = work.artifact_path(stage);
    if art_path.exists() {
        std::fs::remove_file(&art_path).map_err(|e| crate::Error::io(&art_path, e))?;
    }
    log::info!("running {stage}");
    let res = stages::Ctx { cfg, work: &work }.run(stage)?;

    let mut outputs = BTreeMap::new();
    for rel in &res.outputs {
        outputs.insert(rel.clone(), fsutil::sha256_file(&work.path(rel))?);
    }
    let mut sources = BTreeMap::new();
    for p in &res.sources {
        sources.insert(p.display().to_string(), fsutil::sha256_file(p)?);
    }
    let art = StageArtifact {
        stage,
        config_hash: stage.config_hash(cfg),
        sources,
        inputs,
        outputs,
        counters: res.counters,
        details: res.details,
    };
    debug_assert!(art.is_conserved(), "{stage} counters do not add up: {:?}", art.counters);
    fsutil::write_atomic(&art_path, art.to_json().as_bytes())?;
    Ok(art)
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageOutcome {
    Ran(StageArtifact),
    /// Up to date and left alone by `--resume`.
    Current,
    /// Evaluation without a gold file.
    Skipped,
}

/// Runs every stage in order. With `resume`, stages whose artifacts are
/// still valid are not re-run.
pub fn run_all(cfg: &PipelineConfig, resume: bool) -> Result<Vec<(PipelineStage, StageOutcome)>> {
    cfg.validate()?;
    let work = Workdir::new(&cfg.workdir);
    let mut done = Vec::new();
    for stage in PipelineStage::ALL {
        if stage == PipelineStage::Evaluate && cfg.gold.is_none() {
            done.push((stage, StageOutcome::Skipped));
            continue;
        }
        if resume && Verifier::new(cfg, &work).is_current(stage) {
            log::info!("{stage} is current; skipping");
            done.push((stage, StageOutcome::Current));
            continue;
        }
        done.push((stage, StageOutcome::Ran(run_stage(cfg, stage)?)));
    }
    Ok(done)
}
