use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rouge::{rouge_precision, RougeN};
use crate::miner::Stage;

pub const HISTOGRAM_BUCKET_WIDTH: f64 = 0.05;
const HISTOGRAM_BUCKETS: usize = 20;

/// ROUGE-1, ROUGE-2 and ROUGE-L precision of one output against its input.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeTriple {
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
}

/// One mined pair as seen by the diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RougeInput<'a> {
    pub x_text: &'a str,
    pub y_text: &'a str,
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histograms {
    pub bucket_width: f64,
    pub r1: Vec<usize>,
    pub r2: Vec<usize>,
    pub rl: Vec<usize>,
}

fn histogram(values: impl Iterator<Item = f64>) -> Vec<usize> {
    let mut h = vec![0; HISTOGRAM_BUCKETS];
    for v in values {
        let b = ((v / HISTOGRAM_BUCKET_WIDTH).floor() as usize).min(HISTOGRAM_BUCKETS - 1);
        h[b] += 1;
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RougeReport {
    pub count: usize,
    pub mean: RougeTriple,
    pub histograms: Histograms,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub per_pair: Vec<RougeTriple>,
}

impl RougeReport {
    pub fn from_values(per_pair: Vec<RougeTriple>) -> Self {
        let n = per_pair.len();
        let mean_of = |f: fn(&RougeTriple) -> f64| {
            if n == 0 {
                0.0
            } else {
                per_pair.iter().map(f).sum::<f64>() / n as f64
            }
        };
        RougeReport {
            count: n,
            mean: RougeTriple {
                r1: mean_of(|t| t.r1),
                r2: mean_of(|t| t.r2),
                rl: mean_of(|t| t.rl),
            },
            histograms: Histograms {
                bucket_width: HISTOGRAM_BUCKET_WIDTH,
                r1: histogram(per_pair.iter().map(|t| t.r1)),
                r2: histogram(per_pair.iter().map(|t| t.r2)),
                rl: histogram(per_pair.iter().map(|t| t.rl)),
            },
            per_pair,
        }
    }
}

/// Overall and per-stage extractiveness of mined outputs; lower precision
/// means more abstractive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractivenessReport {
    pub overall: RougeReport,
    pub by_stage: BTreeMap<String, RougeReport>,
    /// Pairs whose output has no tokens.
    pub skipped: usize,
}

impl AbstractivenessReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn rouge_triple(candidate: &str, source: &str) -> Option<RougeTriple> {
    Some(RougeTriple {
        r1: rouge_precision(candidate, source, RougeN::One).ok()?,
        r2: rouge_precision(candidate, source, RougeN::Two).ok()?,
        rl: rouge_precision(candidate, source, RougeN::L).ok()?,
    })
}

fn stage_name(s: Stage) -> &'static str {
    match s {
        Stage::Biencoder => "biencoder",
        Stage::Crossencoder => "crossencoder",
    }
}

/// ROUGE precision of every `y` against its `x`, summarized overall and per
/// stage.
pub fn abstractiveness_report(pairs: &[RougeInput<'_>]) -> AbstractivenessReport {
    let values: Vec<Option<RougeTriple>> = pairs.par_iter().map(|p| rouge_triple(p.y_text, p.x_text)).collect();
    let mut by_stage: BTreeMap<String, Vec<RougeTriple>> = BTreeMap::new();
    let mut overall = Vec::new();
    for (p, v) in pairs.iter().zip(&values) {
        if let Some(v) = v {
            overall.push(*v);
            by_stage.entry(stage_name(p.stage).to_owned()).or_default().push(*v);
        }
    }
    AbstractivenessReport {
        skipped: values.iter().filter(|v| v.is_none()).count(),
        overall: RougeReport::from_values(overall),
        by_stage: by_stage.into_iter().map(|(k, v)| (k, RougeReport::from_values(v))).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_pairs_score_one() {
        let pairs = vec![
            RougeInput {
                x_text: "a b c",
                y_text: "a b c",
                stage: Stage::Biencoder,
            };
            3
        ];
        let r = abstractiveness_report(&pairs);
        assert_eq!(r.overall.mean, RougeTriple { r1: 1.0, r2: 1.0, rl: 1.0 });
        assert_eq!(r.overall.histograms.r1[19], 3);
    }

    #[test]
    fn hand_computed_means_by_stage() {
        // Pair 1: (2/3, 1/2, 2/3). Pair 2: "a x" vs "a b": (1/2, 0, 1/2).
        let pairs = [
            RougeInput {
                x_text: "a b d",
                y_text: "a b c",
                stage: Stage::Biencoder,
            },
            RougeInput {
                x_text: "a b",
                y_text: "a x",
                stage: Stage::Crossencoder,
            },
        ];
        let r = abstractiveness_report(&pairs);
        assert_eq!(r.overall.count, 2);
        assert!((r.overall.mean.r1 - (2.0 / 3.0 + 0.5) / 2.0).abs() < 1e-15);
        assert!((r.overall.mean.r2 - 0.25).abs() < 1e-15);
        assert!((r.overall.mean.rl - (2.0 / 3.0 + 0.5) / 2.0).abs() < 1e-15);
        assert_eq!(r.by_stage["crossencoder"].mean, RougeTriple { r1: 0.5, r2: 0.0, rl: 0.5 });
        let json = r.to_json();
        assert!(json.contains("\"bucket_width\": 0.05"));
    }

    #[test]
    fn empty_outputs_are_skipped() {
        let pairs = [RougeInput {
            x_text: "a",
            y_text: "!!",
            stage: Stage::Biencoder,
        }];
        let r = abstractiveness_report(&pairs);
        assert_eq!((r.skipped, r.overall.count), (1, 0));
    }
}
