use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{clipped_matches, tokenize, Record, META_SPAN_KIND};
use crate::knn::cosine;

pub const NUM_FEATURES: usize = 10;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "cosine",
    "unigram_precision",
    "unigram_recall",
    "bigram_precision",
    "bigram_recall",
    "log_len_x",
    "log_len_y",
    "length_ratio",
    "novel_fraction",
    "span_type",
];

/// Pairwise interaction features fed to the crossencoder head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionFeatures(pub [f64; NUM_FEATURES]);

impl InteractionFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn cosine(&self) -> f64 {
        self.0[0]
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// 1.0 for numeric answers, 0.5 for names, 0.75 for mixed spans, 0 when the
/// output carries no answer.
fn span_type(y: &Record) -> f64 {
    let kind = match y.meta.get(META_SPAN_KIND) {
        Some(k) => k.clone(),
        None => match y.answer() {
            None => return 0.0,
            Some(a) if a.chars().any(char::is_alphabetic) => "name".to_owned(),
            Some(_) => "number".to_owned(),
        },
    };
    match kind.as_str() {
        "number" => 1.0,
        "name" => 0.5,
        "mixed" => 0.75,
        _ => 0.0,
    }
}

/// Features for `(x, y)`: overlaps are measured on the encoder texts with the
/// corpus tokenizer; precision is relative to `y`, recall to `x`.
pub fn interaction_features(x: &Record, y: &Record, x_vec: &[f32], y_vec: &[f32]) -> InteractionFeatures {
    let tx = tokenize(&x.encoding_text());
    let ty = tokenize(&y.encoding_text());
    let (u_hits, u_y, u_x) = clipped_matches(&ty, &tx, 1);
    let (b_hits, b_y, b_x) = clipped_matches(&ty, &tx, 2);
    let x_vocab: HashSet<&String> = tx.iter().collect();
    let novel = ty.iter().filter(|t| !x_vocab.contains(t)).count();
    let (lx, ly) = (tx.len() as f64, ty.len() as f64);
    let length_ratio = if lx.max(ly) == 0.0 { 0.0 } else { lx.min(ly) / lx.max(ly) };
    let cos = cosine(x_vec, y_vec).clamp(-1.0, 1.0);
    InteractionFeatures([
        cos,
        ratio(u_hits, u_y),
        ratio(u_hits, u_x),
        ratio(b_hits, b_y),
        ratio(b_hits, b_x),
        lx.ln_1p(),
        ly.ln_1p(),
        length_ratio,
        ratio(novel, ty.len()),
        span_type(y),
    ])
}
