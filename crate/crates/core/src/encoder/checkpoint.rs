//! `PMBI` biencoder checkpoint plus JSON metadata sidecar.
//!
//! Layout (little-endian): magic `PMBI`, u32 format version, u32 num_buckets,
//! u32 dim, embedding table (`num_buckets × dim` f32, row-major), projection
//! (`dim × dim` f32, row-major), prefilter weights (`dim` f32), prefilter
//! bias (f32).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{BiencoderModel, PrefilterModel};
use super::train::{LossPoint, TrainConfig};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::fsutil;

pub const BIENCODER_MAGIC: &[u8; 4] = b"PMBI";
pub const BIENCODER_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub num_buckets: u32,
    pub dim: u32,
    pub rng_seed: u64,
    pub train_config: TrainConfig,
    pub loss_trace: Vec<LossPoint>,
}

pub fn encode_checkpoint(model: &BiencoderModel, pre: &PrefilterModel) -> Vec<u8> {
    let mut w = Writer::new(BIENCODER_MAGIC);
    w.u32(BIENCODER_FORMAT_VERSION);
    w.u32(model.num_buckets);
    w.u32(model.dim);
    w.f32s_from(&model.embedding);
    w.f32s_from(&model.projection);
    w.f32s_from(&pre.weights);
    w.f32(pre.bias as f32);
    w.0
}

pub fn save_checkpoint(path: &Path, model: &BiencoderModel, pre: &PrefilterModel) -> Result<()> {
    fsutil::write_atomic(path, &encode_checkpoint(model, pre))
}

/// Loads a checkpoint; `rng_seed` is not stored in the binary and is taken
/// from the caller (normally the sidecar).
pub fn load_checkpoint(path: &Path, rng_seed: u64) -> Result<(BiencoderModel, PrefilterModel)> {
    let bytes = fsutil::read(path)?;
    let mut r = Reader::new(&bytes, path, BIENCODER_MAGIC)?;
    let version = r.u32()?;
    if version != BIENCODER_FORMAT_VERSION {
        return Err(r.fail(format!("unsupported format version {version}")));
    }
    let num_buckets = r.u32()?;
    let dim = r.u32()?;
    if !num_buckets.is_power_of_two() || dim == 0 {
        return Err(r.fail(format!("invalid shape {num_buckets}x{dim}")));
    }
    let d = dim as usize;
    let embedding = r.f32s_widened(num_buckets as usize * d)?;
    let projection = r.f32s_widened(d * d)?;
    let weights = r.f32s_widened(d)?;
    let bias = f64::from(r.f32s(1)?[0]);
    r.finish()?;
    let model = BiencoderModel {
        num_buckets,
        dim,
        embedding,
        projection,
        rng_seed,
    };
    if !model.is_finite() || !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Numeric(format!("{} holds non-finite parameters", path.display())));
    }
    Ok((model, PrefilterModel { weights, bias }))
}

pub fn save_meta(path: &Path, meta: &CheckpointMeta) -> Result<()> {
    let json = serde_json::to_string_pretty(meta).expect("meta serializes");
    fsutil::write_atomic(path, json.as_bytes())
}

pub fn load_meta(path: &Path) -> Result<CheckpointMeta> {
    let bytes = fsutil::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}
