//! Precision-oriented re-ranking of biencoder candidates with a small MLP over
//! pairwise interaction features.

mod features;
mod model;
mod train;

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusHandle, Record};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::knn::VectorStore;
use crate::miner::{PairCandidate, Stage};

pub use features::{interaction_features, InteractionFeatures, FEATURE_NAMES, NUM_FEATURES};
pub use model::{CrossMode, CrossModel, CROSS_FORMAT_VERSION, CROSS_MAGIC, DEFAULT_HIDDEN};
pub use train::{
    binary_loss_and_grad, logistic_loss, pairwise_loss, pairwise_loss_and_grad, sample_binary_negatives, train_binary,
    train_pairwise, NegativeSampling, RankTriple, TrainedCross,
};

/// Looks up records and vectors for candidate ids.
#[derive(Debug, Clone, Copy)]
pub struct PairResolver<'a> {
    pub inputs: &'a CorpusHandle,
    pub outputs: &'a CorpusHandle,
    pub x_vectors: &'a VectorStore,
    pub y_vectors: &'a VectorStore,
}

impl<'a> PairResolver<'a> {
    pub fn x(&self, id: u64) -> Result<&'a Record> {
        self.inputs.get(id).ok_or(Error::UnknownId(id))
    }

    pub fn y(&self, id: u64) -> Result<&'a Record> {
        self.outputs.get(id).ok_or(Error::UnknownId(id))
    }

    pub fn features(&self, x_id: u64, y_id: u64) -> Result<InteractionFeatures> {
        let xv = self.x_vectors.vector(x_id).ok_or(Error::UnknownId(x_id))?;
        let yv = self.y_vectors.vector(y_id).ok_or(Error::UnknownId(y_id))?;
        Ok(interaction_features(self.x(x_id)?, self.y(y_id)?, xv, yv))
    }
}

/// Cross ranking order: score descending, then margin descending, then ids
/// ascending.
pub fn cross_order(a: &PairCandidate, b: &PairCandidate) -> std::cmp::Ordering {
    let sa = a.cross_score.unwrap_or(f64::NEG_INFINITY);
    let sb = b.cross_score.unwrap_or(f64::NEG_INFINITY);
    sb.total_cmp(&sa)
        .then(b.margin.total_cmp(&a.margin))
        .then(a.x_id.cmp(&b.x_id))
        .then(a.y_id.cmp(&b.y_id))
}

fn attach_scores(candidates: &[PairCandidate], scores: Vec<f64>, top_n: usize) -> Vec<PairCandidate> {
    let mut out: Vec<PairCandidate> = candidates
        .iter()
        .zip(scores)
        .map(|(c, s)| PairCandidate {
            cross_score: Some(s),
            stage: Stage::Crossencoder,
            ..c.clone()
        })
        .collect();
    out.sort_by(cross_order);
    out.truncate(top_n);
    out
}

/// Scores every candidate, sorts by [`cross_order`] and keeps `top_n`.
pub fn rerank(
    model: &CrossModel,
    candidates: &[PairCandidate],
    resolver: &PairResolver<'_>,
    top_n: usize,
) -> Result<Vec<PairCandidate>> {
    let scores = candidates
        .par_iter()
        .map(|c| model.score(resolver.features(c.x_id, c.y_id)?.as_slice()))
        .collect::<Result<Vec<f64>>>()?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite crossencoder score for pair {}",
            candidates[i].pair_key()
        )));
    }
    Ok(attach_scores(candidates, scores, top_n))
}

#[derive(Serialize)]
struct ExternalRequest<'a> {
    pair_key: String,
    x_text: &'a str,
    y_text: String,
}

#[derive(Deserialize)]
struct ExternalScore {
    pair_key: String,
    score: f64,
}

/// Candidates as `{pair_key, x_text, y_text}` lines for an outside scorer.
pub fn external_requests_jsonl(candidates: &[PairCandidate], resolver: &PairResolver<'_>) -> Result<String> {
    let mut out = String::new();
    for c in candidates {
        let req = ExternalRequest {
            pair_key: c.pair_key(),
            x_text: &resolver.x(c.x_id)?.text,
            y_text: resolver.y(c.y_id)?.encoding_text(),
        };
        out.push_str(&serde_json::to_string(&req).expect("request serializes"));
        out.push('\n');
    }
    Ok(out)
}

/// Reads `{pair_key, score}` lines.
pub fn read_external_scores(path: &Path) -> Result<HashMap<String, f64>> {
    let bytes = fsutil::read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "not valid UTF-8"))?;
    let mut scores = HashMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let s: ExternalScore = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !s.score.is_finite() {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: format!("non-finite score for {}", s.pair_key),
            });
        }
        scores.insert(s.pair_key, s.score);
    }
    Ok(scores)
}

/// [`rerank`] with externally produced scores in place of the MLP.
pub fn apply_external_scores(
    candidates: &[PairCandidate],
    scores: &HashMap<String, f64>,
    top_n: usize,
) -> Result<Vec<PairCandidate>> {
    let s = candidates
        .iter()
        .map(|c| {
            let key = c.pair_key();
            scores
                .get(&key)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("external scores lack pair {key}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(attach_scores(candidates, s, top_n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Side;

    fn fixture() -> (CorpusHandle, CorpusHandle, VectorStore, VectorStore, Vec<PairCandidate>) {
        let xs = CorpusHandle::new(
            Side::Input,
            vec![Record::new(0, "red apple pie", Side::Input), Record::new(1, "blue sky day", Side::Input)],
        )
        .unwrap();
        let ys = CorpusHandle::new(
            Side::Output,
            vec![
                Record::new(10, "apple", Side::Output),
                Record::new(11, "sky", Side::Output),
                Record::new(12, "stone", Side::Output),
            ],
        )
        .unwrap();
        let xv = VectorStore::from_rows(vec![0, 1], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let yv = VectorStore::from_rows(vec![10, 11, 12], &[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]]).unwrap();
        let c = |x, y, m| PairCandidate {
            x_id: x,
            y_id: y,
            cosine: 0.5,
            margin: m,
            cross_score: None,
            stage: Stage::Biencoder,
        };
        let cands = vec![c(0, 10, 1.5), c(1, 11, 1.4), c(0, 12, 1.4), c(1, 12, 1.1)];
        (xs, ys, xv, yv, cands)
    }

    #[test]
    fn zero_model_preserves_margin_order() {
        let (xs, ys, xv, yv, cands) = fixture();
        let r = PairResolver {
            inputs: &xs,
            outputs: &ys,
            x_vectors: &xv,
            y_vectors: &yv,
        };
        let m = CrossModel::zeros(CrossMode::Binary, NUM_FEATURES, 4);
        let out = rerank(&m, &cands, &r, 10).unwrap();
        let keys: Vec<_> = out.iter().map(|c| (c.x_id, c.y_id)).collect();
        assert_eq!(keys, [(0, 10), (0, 12), (1, 11), (1, 12)]);
        assert!(out.iter().all(|c| c.stage == Stage::Crossencoder && c.cross_score == Some(0.0)));
        assert!(rerank(&m, &cands, &r, 0).unwrap().is_empty());
    }

    #[test]
    fn unknown_id_is_named() {
        let (xs, ys, xv, yv, mut cands) = fixture();
        cands[0].y_id = 99;
        let r = PairResolver {
            inputs: &xs,
            outputs: &ys,
            x_vectors: &xv,
            y_vectors: &yv,
        };
        let m = CrossModel::new(CrossMode::Binary, NUM_FEATURES, 4, 1);
        assert!(matches!(rerank(&m, &cands, &r, 3), Err(Error::UnknownId(99))));
    }

    #[test]
    fn rerank_is_permutation_then_truncation() {
        let (xs, ys, xv, yv, cands) = fixture();
        let r = PairResolver {
            inputs: &xs,
            outputs: &ys,
            x_vectors: &xv,
            y_vectors: &yv,
        };
        let m = CrossModel::new(CrossMode::Binary, NUM_FEATURES, 4, 5);
        let out = rerank(&m, &cands, &r, 3).unwrap();
        assert_eq!(out.len(), 3);
        for o in &out {
            assert!(cands.iter().any(|c| c.x_id == o.x_id && c.y_id == o.y_id && c.margin == o.margin));
        }
        assert!(out.windows(2).all(|w| cross_order(&w[0], &w[1]).is_lt()));
    }

    #[test]
    fn external_scores_round_trip() {
        let (xs, ys, xv, yv, cands) = fixture();
        let r = PairResolver {
            inputs: &xs,
            outputs: &ys,
            x_vectors: &xv,
            y_vectors: &yv,
        };
        let req = external_requests_jsonl(&cands, &r).unwrap();
        assert_eq!(req.lines().next().unwrap(), r#"{"pair_key":"0:10","x_text":"red apple pie","y_text":"apple"}"#);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scores.jsonl");
        let lines: String = cands
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{{\"pair_key\":\"{}\",\"score\":{}}}\n", c.pair_key(), i as f64))
            .collect();
        std::fs::write(&p, lines).unwrap();
        let scores = read_external_scores(&p).unwrap();
        let out = apply_external_scores(&cands, &scores, 2).unwrap();
        assert_eq!((out[0].x_id, out[0].y_id, out[0].cross_score), (1, 12, Some(3.0)));
        let mut partial = scores.clone();
        partial.remove("0:10");
        assert!(apply_external_scores(&cands, &partial, 2).is_err());
    }
}
