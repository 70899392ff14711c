//! Trainable biencoder over hashed n-gram features, multitasked with a binary
//! prefilter classifier.

mod checkpoint;
mod features;
mod loss;
mod model;
mod negatives;
mod train;

pub use checkpoint::{
    encode_checkpoint, load_checkpoint, load_meta, save_checkpoint, save_meta, CheckpointMeta, BIENCODER_FORMAT_VERSION,
    BIENCODER_MAGIC,
};
pub use features::{featurize, HashedFeatures, DEFAULT_NUM_BUCKETS};
pub use loss::{nll_loss_and_grad, softmax_nll, BatchLoss, MultitaskBatch, TrainInstance};
pub use model::{embed, prefilter, retain_top_fraction, BiencoderGrads, BiencoderModel, PrefilterModel, UnitVector, DEFAULT_DIM};
pub use negatives::{synthesize_negatives, NegativeSet};
pub use train::{prefilter_side, train, EncoderShape, LossPoint, TrainConfig, TrainData, TrainedEncoder};

pub(crate) use loss::softplus;
pub(crate) use model::sigmoid;

/// Embeds `text`, mapping feature-less text to [`crate::Error::Unembeddable`].
pub fn embed_text(model: &BiencoderModel, text: &str) -> crate::Result<UnitVector> {
    embed(model, &featurize(text, model.num_buckets))
}
