//! Mines aligned input/output pairs from two unaligned corpora, supervised
//! by a small seed set: a hashed-feature biencoder with kNN-margin search
//! proposes candidates and a small crossencoder re-ranks them.

pub mod corpus;
pub mod crossfilter;
pub mod encoder;
pub mod error;
pub mod evalharness;
pub mod fsutil;
pub mod knn;
pub mod miner;
pub mod pipeline;

mod binio;

pub use corpus::{CorpusHandle, Record, Side, Task};
pub use error::{Error, Result};
pub use knn::{Index, IndexKind, Neighborhood, VectorStore};
pub use miner::{MarginConfig, PairCandidate, Stage};
pub use pipeline::{PipelineConfig, PipelineStage, StageArtifact};
