//! Synthetic corpora with planted gold pairs and lexical-trap distractors,
//! plus ROUGE-precision extractiveness diagnostics.

mod report;
mod rouge;
mod synth;

pub use report::{
    abstractiveness_report, rouge_triple, AbstractivenessReport, Histograms, RougeInput, RougeReport, RougeTriple,
    HISTOGRAM_BUCKET_WIDTH,
};
pub use rouge::{rouge_fraction, rouge_precision, Fraction, RougeN};
pub use synth::{generate, word, DistractorStyle, GoldPairs, SyntheticCorpus, SyntheticSpec};
